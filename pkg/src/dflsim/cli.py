"""Command-line front end: simulate, bounds, spectral, report.

Exit codes: 0 on success, 2 on a configuration error, 3 when every seed of
an experiment diverged.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import replace

from .analysis import BoundParams, cdfl_bound, dfl_bound, lr_feasible
from .errors import (
    DflsimError,
    InfeasibleTopologyError,
    InsufficientCommunicationError,
    InvalidConfigError,
)
from .harness import ExperimentConfig, PRESETS, run_experiment, run_preset
from .topology import (
    build_complete,
    build_identity,
    build_quasi_ring,
    build_ring,
    build_ring_groups,
    from_adjacency,
    load_adjacency,
    spectral,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_topology(spec: str, n: int):
    kind, _, arg = spec.partition(":")
    if kind == "ring":
        return build_ring(int(arg) if arg else n)
    if kind == "quasi_ring":
        return build_quasi_ring(int(arg) if arg else n)
    if kind == "complete":
        return build_complete(int(arg) if arg else n)
    if kind == "identity":
        return build_identity(int(arg) if arg else n)
    if kind == "ring_groups":
        g, _, gs = arg.partition("x")
        return build_ring_groups(int(g), int(gs))
    if kind == "adjacency":
        return from_adjacency(load_adjacency(arg))
    raise InvalidConfigError("topology", f"unknown topology {spec!r}")


# ---------------------------------------------------------------- simulate

def _cmd_simulate(args) -> int:
    if args.preset:
        records = run_preset(args.preset, args.output_dir)
    elif args.config:
        config = ExperimentConfig.from_file(args.config)
        records = [run_experiment(config, args.output_dir)]
    else:
        raise InvalidConfigError("simulate", "need --config or --preset")
    worst = EXIT_OK
    for record in records:
        diverged = record.summary["diverged_seeds"]
        total = [o.seed for o in record.outcomes]
        print(
            f"{record.label}: median final loss {record.summary['median_final_loss']} "
            f"({len(total) - len(diverged)}/{len(total)} seeds finished) -> {record.run_dir}"
        )
        if diverged and len(diverged) == len(total):
            worst = EXIT_DIVERGED
    return worst


# ---------------------------------------------------------------- bounds

_BOUND_DEFAULTS = {
    "l": "1.0", "mu": "0.0", "sigma_sq": "1.0", "sigma_bar_sq": "1.0", "g_sq": "1.0",
    "zeta": "0.0", "beta": "0.0", "delta": "1.0", "eta": "0.01", "tau1": "4", "tau2": "4",
    "n": "10", "t": "1000", "f_gap": "1.0", "a": "0.0", "theta": "auto",
    "u0_dist_sq": "1.0", "k": "100", "topology": "", "sweep": "",
}


def _read_flat_config(path: str, defaults: dict) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[bounds]\n" + text
    parser = configparser.ConfigParser()
    parser.read_string(text)
    values = dict(defaults)
    for section in parser.sections():
        for key, val in parser.items(section):
            key = key.lower()
            if key not in defaults:
                raise InvalidConfigError(key, "unknown bounds key")
            values[key] = val.strip()
    return values


def _bound_params(values: dict) -> BoundParams:
    if values["topology"]:
        summary = spectral(_parse_topology(values["topology"], int(values["n"])))
        zeta, beta = summary.zeta, summary.beta
    else:
        zeta, beta = float(values["zeta"]), float(values["beta"])
    theta = None if values["theta"] == "auto" else float(values["theta"])
    return BoundParams(
        smooth_l=float(values["l"]), mu=float(values["mu"]),
        sigma_sq=float(values["sigma_sq"]), sigma_bar_sq=float(values["sigma_bar_sq"]),
        g_sq=float(values["g_sq"]), zeta=zeta, beta=beta, delta=float(values["delta"]),
        eta=float(values["eta"]), tau1=int(values["tau1"]), tau2=int(values["tau2"]),
        n_nodes=int(values["n"]), total_steps=int(values["t"]), f_gap=float(values["f_gap"]),
        a=float(values["a"]), theta=theta,
    )


def _sweep_points(values: dict):
    if not values["sweep"]:
        return [("base", values)]
    key, _, items = values["sweep"].partition(":")
    key = key.strip().lower()
    if key not in _BOUND_DEFAULTS or not items:
        raise InvalidConfigError("sweep", f"expected <key>:v1,v2,..., got {values['sweep']!r}")
    points = []
    for item in items.split(","):
        v = dict(values)
        v[key] = item.strip()
        points.append((f"{key}={item.strip()}", v))
    return points


def _cmd_bounds(args) -> int:
    values = _read_flat_config(args.config, _BOUND_DEFAULTS)
    dfl_lines = ["param_point,bound,term_sync,term_drift,feasible"]
    cdfl_lines = ["param_point,bound,term_init,term_sigma,term_rest,d1,d2,d3,s_k,finite"]
    for name, vals in _sweep_points(values):
        params = _bound_params(vals)
        result = dfl_bound(params, warn_infeasible=False)
        try:
            feasible = lr_feasible(params)
        except InfeasibleTopologyError:
            feasible = False
        dfl_lines.append(
            f"{name},{result.total!r},{result.sync_term!r},{result.drift_term!r},{feasible}"
        )
        if params.mu > 0.0 and params.a > 0.0:
            try:
                cb = cdfl_bound(params, int(vals["k"]), float(vals["u0_dist_sq"]))
                cdfl_lines.append(
                    f"{name},{cb.total!r},{cb.init_term!r},{cb.sigma_term!r},"
                    f"{cb.rest_term!r},{cb.d1!r},{cb.d2!r},{cb.d3!r},{cb.weight_sum!r},True"
                )
            except (InsufficientCommunicationError, InfeasibleTopologyError, InvalidConfigError) as exc:
                cdfl_lines.append(f"{name},inf,,,,,,,,False  # {exc}")
    print("\n".join(dfl_lines))
    print()
    print("\n".join(cdfl_lines))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bounds_dfl.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(dfl_lines) + "\n")
        with open(os.path.join(args.out, "bounds_cdfl.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(cdfl_lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- spectral

def _cmd_spectral(args) -> int:
    mixing = _parse_topology(args.topology, args.n)
    summary = spectral(mixing)
    print(f"nodes: {mixing.n}")
    print(f"zeta:  {summary.zeta!r}")
    print(f"beta:  {summary.beta!r}")
    print(f"rho:   {summary.rho!r}")
    print("eigenvalues:", " ".join(f"{v:.6f}" for v in summary.eigenvalues))
    return EXIT_OK


# ---------------------------------------------------------------- report

def _cmd_report(args) -> int:
    from .report import render_directory  # deferred: pulls in matplotlib

    written = render_directory(args.run_dir)
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dflsim",
        description="Decentralized SGD with periodic gossip: simulator, bounds, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one experiment or a preset suite")
    p_sim.add_argument("--config", help="experiment config file")
    p_sim.add_argument("--preset", choices=sorted(PRESETS), help="preset suite to run")
    p_sim.add_argument("--output-dir", default="runs", help="where to write metrics and manifests")
    p_sim.set_defaults(func=_cmd_simulate)

    p_bounds = sub.add_parser("bounds", help="evaluate the convergence bounds at a config point")
    p_bounds.add_argument("--config", required=True, help="bounds config file")
    p_bounds.add_argument("--out", help="directory for the CSV tables")
    p_bounds.set_defaults(func=_cmd_bounds)

    p_spec = sub.add_parser("spectral", help="print zeta/beta/rho for a topology")
    p_spec.add_argument("--topology", required=True,
                        help="ring|quasi_ring|complete|identity|ring_groups:<g>x<s>|adjacency:<path>")
    p_spec.add_argument("--n", type=int, default=10, help="node count for parameterless kinds")
    p_spec.set_defaults(func=_cmd_spectral)

    p_rep = sub.add_parser("report", help="render PNG figures for a run directory")
    p_rep.add_argument("--run-dir", required=True, help="record directory or a directory of records")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DflsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
