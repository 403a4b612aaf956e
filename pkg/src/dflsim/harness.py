"""Experiment configuration, orchestration, and run records.

A run is described by a flat key = value config file (an optional
[experiment] section header is tolerated); every default the code applies
is materialized into the resolved snapshot that lands in the run manifest,
so a record can be re-executed byte for byte from its own metadata.

One experiment executes one run per seed, writing `metrics_seed<k>.csv`
per run plus a `record.json` manifest.  Ordering claims are made on
medians over the seed list; comparisons can be aligned at an equal step
count or an equal byte budget (the deterministic byte meter stands in for
the wall-clock axis).
"""
from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .compression import CdflConfig, LrLaw, parse_operator, run_cdfl
from .engine import Schedule, run_dfl, run_dsgd
from .errors import ComparisonError, DivergenceError, InvalidConfigError
from .objective import (
    PartitionSpec,
    load_csv_dataset,
    make_blobs_dataset,
    make_logistic_objective,
    make_quadratic_objective,
    partition,
)
from .topology import (
    build_complete,
    build_identity,
    build_quasi_ring,
    build_ring,
    build_ring_groups,
    from_adjacency,
    load_adjacency,
)

# ---------------------------------------------------------------- config

_DEFAULTS = {
    "topology": "ring",
    "n": "10",
    "groups": "5",
    "group_size": "2",
    "objective": "logistic",
    "dim": "5",
    "cond": "5.0",
    "heterogeneity": "0.1",
    "noise": "0.3",
    "separation": "3.0",
    "samples": "600",
    "samples_per_node": "16",
    "reg": "0.01",
    "seed": "77",
    "dataset": "blobs",
    "partition": "label_sorted",
    "shards_per_node": "1",
    "partition_seed": "0",
    "algorithm": "dfl",
    "tau1": "4",
    "tau2": "4",
    "T": "760",
    "lr_law": "constant:2.0",
    "batch": "10",
    "compression": "none",
    "gamma": "auto",
    "seeds": "1,2,3,4,5",
    "trace": "false",
    "label": "run",
}

_INT_KEYS = {"n", "groups", "group_size", "dim", "samples", "samples_per_node",
             "shards_per_node", "partition_seed", "seed", "tau1", "tau2", "T", "batch"}
_FLOAT_KEYS = {"cond", "heterogeneity", "noise", "separation", "reg"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (all defaults materialized)."""

    values: dict

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        values = dict(_DEFAULTS)
        for key, raw in mapping.items():
            if key not in _DEFAULTS:
                raise InvalidConfigError(key, "unknown configuration key")
            values[key] = str(raw).strip()
        cfg = cls(values=values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[experiment]\n" + text
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case-sensitive (T vs t)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InvalidConfigError("config", f"unparseable file {path}: {exc}") from exc
        merged = {}
        for section in parser.sections():
            merged.update(parser.items(section))
        return cls.from_mapping(merged)

    # typed accessors -------------------------------------------------
    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise InvalidConfigError(key, f"expected an integer, got {self.values[key]!r}") from exc

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise InvalidConfigError(key, f"expected a number, got {self.values[key]!r}") from exc

    def get_bool(self, key: str) -> bool:
        raw = self.values[key].lower()
        if raw in ("true", "1", "yes"):
            return True
        if raw in ("false", "0", "no"):
            return False
        raise InvalidConfigError(key, f"expected a boolean, got {self.values[key]!r}")

    @property
    def seeds(self) -> list[int]:
        try:
            return [int(s) for s in self.values["seeds"].split(",") if s.strip()]
        except ValueError as exc:
            raise InvalidConfigError("seeds", self.values["seeds"]) from exc

    def validate(self) -> None:
        for key in _INT_KEYS:
            self.get_int(key)
        for key in _FLOAT_KEYS:
            self.get_float(key)
        if not self.seeds:
            raise InvalidConfigError("seeds", "need at least one seed")
        if self.get("algorithm") not in ("dfl", "dsgd", "csgd", "cdfl"):
            raise InvalidConfigError("algorithm", self.get("algorithm"))
        if self.get("objective") not in ("quadratic", "logistic"):
            raise InvalidConfigError("objective", self.get("objective"))
        if self.get("partition") not in ("iid", "label_sorted"):
            raise InvalidConfigError("partition", self.get("partition"))
        LrLaw.parse(self.get("lr_law"))
        parse_operator(self.get("compression"))
        if self.get("gamma") != "auto":
            self.get_float("gamma")
        if self.get("algorithm") == "cdfl":
            if parse_operator(self.get("compression")) is None:
                raise InvalidConfigError("compression", "cdfl needs a compression operator")
            if self.get("objective") == "logistic" and self.get_float("reg") <= 0:
                raise InvalidConfigError("reg", "cdfl needs a strongly convex objective (reg > 0)")

    # resolution ------------------------------------------------------
    def build_topology(self):
        spec = self.get("topology")
        n = self.get_int("n")
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
            if arg:
                g, _, gs = arg.partition("x")
                return build_ring_groups(int(g), int(gs))
            return build_ring_groups(self.get_int("groups"), self.get_int("group_size"))
        if kind == "adjacency":
            if not arg:
                raise InvalidConfigError("topology", "adjacency needs a path: adjacency:<path>")
            return from_adjacency(load_adjacency(arg, n=n))
        raise InvalidConfigError("topology", f"unknown topology {spec!r}")

    def build_objective(self, n_nodes: int):
        kind = self.get("objective")
        if kind == "quadratic":
            return make_quadratic_objective(
                n_nodes=n_nodes,
                dim=self.get_int("dim"),
                samples_per_node=self.get_int("samples_per_node"),
                cond=self.get_float("cond"),
                heterogeneity=self.get_float("heterogeneity"),
                noise=self.get_float("noise"),
                reg=self.get_float("reg"),
                seed=self.get_int("seed"),
            )
        source = self.get("dataset")
        if source == "blobs":
            ds = make_blobs_dataset(
                n_samples=self.get_int("samples"),
                dim=self.get_int("dim"),
                separation=self.get_float("separation"),
                seed=self.get_int("seed"),
            )
        elif source.startswith("csv:"):
            ds = load_csv_dataset(source[4:])
        else:
            raise InvalidConfigError("dataset", f"expected blobs or csv:<path>, got {source!r}")
        spec = PartitionSpec(
            mode=self.get("partition"),
            shards_per_node=self.get_int("shards_per_node"),
            seed=self.get_int("partition_seed"),
        )
        parts = partition(ds.labels, spec, n_nodes)
        return make_logistic_objective(ds, parts, reg=self.get_float("reg"))

    def batch_size(self):
        b = self.get_int("batch")
        return None if b <= 0 else b

    def objective_fingerprint(self) -> dict:
        keys = ("objective", "dim", "cond", "heterogeneity", "noise", "separation",
                "samples", "samples_per_node", "reg", "seed", "dataset",
                "partition", "shards_per_node", "partition_seed", "n")
        return {k: self.values[k] for k in keys}


# ---------------------------------------------------------------- records

@dataclass
class SeedOutcome:
    seed: int
    metrics_file: str
    final_loss: float | None
    avg_grad_norm_sq: float | None
    total_bytes: int | None
    diverged_at: int | None = None


@dataclass
class RunRecord:
    config: dict
    run_dir: str
    outcomes: list
    summary: dict

    @property
    def label(self) -> str:
        return self.config["label"]

    def metrics_paths(self) -> list[str]:
        return [os.path.join(self.run_dir, o.metrics_file) for o in self.outcomes]


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _median(values):
    return float(np.median(values)) if values else None


def run_experiment(config: ExperimentConfig, output_dir: str) -> RunRecord:
    """Execute one run per seed and write metrics CSVs plus a manifest."""
    os.makedirs(output_dir, exist_ok=True)
    mixing = config.build_topology()
    objective = config.build_objective(mixing.n)
    algorithm = config.get("algorithm")
    lr_law = LrLaw.parse(config.get("lr_law"))
    batch = config.batch_size()
    tau1, tau2, total = config.get_int("tau1"), config.get_int("tau2"), config.get_int("T")
    trace = config.get_bool("trace")

    outcomes = []
    for seed in config.seeds:
        metrics_file = f"metrics_seed{seed}.csv"
        diverged_at = None
        trace_rows = None
        try:
            if algorithm == "dfl" or algorithm == "csgd":
                # csgd is the tau2 = 1 special case of the periodic schedule
                sched = Schedule(tau1, 1 if algorithm == "csgd" else tau2, total)
                if lr_law.kind != "constant":
                    raise InvalidConfigError("lr_law", f"{algorithm} runs use a constant step size")
                result = run_dfl(objective, mixing, sched, lr_law.value, batch, seed)
            elif algorithm == "dsgd":
                if lr_law.kind != "constant":
                    raise InvalidConfigError("lr_law", "dsgd runs use a constant step size")
                result = run_dsgd(objective, mixing, total, lr_law.value, batch, seed)
            else:
                op = parse_operator(config.get("compression"))
                gamma = None if config.get("gamma") == "auto" else config.get_float("gamma")
                cdfl_cfg = CdflConfig(
                    schedule=Schedule(tau1, tau2, total), op=op, lr_law=lr_law, gamma=gamma
                )
                result = run_cdfl(objective, mixing, cdfl_cfg, batch, seed, collect_trace=trace)
                trace_rows = result.trace
            metrics = result.metrics
        except DivergenceError as exc:
            diverged_at = exc.step
            metrics = getattr(exc, "partial", None)
        if metrics is not None:
            metrics.write_csv(os.path.join(output_dir, metrics_file))
        if trace_rows is not None:
            lines = ["step,src,dst,bytes"]
            lines += [f"{t},{s},{d},{b}" for t, s, d, b in trace_rows]
            _atomic_write(os.path.join(output_dir, f"trace_seed{seed}.csv"), "\n".join(lines) + "\n")
        outcomes.append(
            SeedOutcome(
                seed=seed,
                metrics_file=metrics_file,
                final_loss=None if metrics is None else metrics.final_loss,
                avg_grad_norm_sq=None if metrics is None else metrics.summary_avg_grad_norm_sq(),
                total_bytes=None if metrics is None else metrics.total_bytes,
                diverged_at=diverged_at,
            )
        )

    finished = [o for o in outcomes if o.diverged_at is None]
    summary = {
        "median_final_loss": _median([o.final_loss for o in finished]),
        "median_avg_grad_norm_sq": _median([o.avg_grad_norm_sq for o in finished]),
        "total_bytes": sum(o.total_bytes or 0 for o in finished),
        "diverged_seeds": [o.seed for o in outcomes if o.diverged_at is not None],
    }
    record = RunRecord(
        config=dict(config.values), run_dir=output_dir, outcomes=outcomes, summary=summary
    )
    manifest = {
        "config": record.config,
        "outcomes": [asdict(o) for o in outcomes],
        "summary": summary,
    }
    _atomic_write(
        os.path.join(output_dir, "record.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )
    return record


def load_record(run_dir: str) -> RunRecord:
    with open(os.path.join(run_dir, "record.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    outcomes = [SeedOutcome(**o) for o in manifest["outcomes"]]
    return RunRecord(
        config=manifest["config"], run_dir=run_dir, outcomes=outcomes, summary=manifest["summary"]
    )


# ---------------------------------------------------------------- metric lookup

def read_metrics(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        cols = {name: [] for name in header}
        for line in fh:
            for name, cell in zip(header, line.strip().split(",")):
                cols[name].append(cell)
    out = {}
    for name, cells in cols.items():
        if name == "phase":
            out[name] = cells
        elif name in ("step", "bytes", "grad_evals"):
            out[name] = np.array([int(c) for c in cells])
        else:
            out[name] = np.array([float(c) for c in cells])
    return out


def value_at(metrics: dict, metric: str, at: tuple) -> float:
    """Metric value aligned at ('step', k) or ('bytes', budget)."""
    mode, target = at
    if mode == "step":
        hits = np.flatnonzero(metrics["step"] == int(target))
        if hits.size == 0:
            raise ComparisonError(f"run has no step {target}")
        return float(metrics[metric][hits[0]])
    if mode == "bytes":
        ok = np.flatnonzero(metrics["bytes"] <= int(target))
        if ok.size == 0:
            raise ComparisonError(f"no step within byte budget {target}")
        return float(metrics[metric][ok[-1]])
    raise ComparisonError(f"unknown alignment {mode!r}")


def compare(records: list, metric: str = "loss", at: tuple = ("step", 0)) -> list[dict]:
    """Median-over-seeds comparison table aligned at a step count or byte budget."""
    if not records:
        raise ComparisonError("nothing to compare")
    keys = ("objective", "dim", "reg", "seed", "dataset", "partition", "n")
    ref = {k: records[0].config[k] for k in keys}
    for rec in records[1:]:
        if {k: rec.config[k] for k in keys} != ref:
            raise ComparisonError(
                f"record {rec.label!r} has a different objective than {records[0].label!r}"
            )
    table = []
    for rec in records:
        vals = []
        for outcome in rec.outcomes:
            if outcome.diverged_at is not None:
                continue
            metrics = read_metrics(os.path.join(rec.run_dir, outcome.metrics_file))
            vals.append(value_at(metrics, metric, at))
        table.append(
            {
                "label": rec.label,
                "topology": rec.config["topology"],
                "algorithm": rec.config["algorithm"],
                "median": _median(vals),
                "values": vals,
            }
        )
    table.sort(key=lambda row: (row["median"] is None, row["median"]))
    return table


def write_compare_csv(path: str, table: list[dict], metric: str, at: tuple) -> None:
    lines = [f"# metric={metric} aligned_at={at[0]}:{at[1]}", "label,topology,algorithm,median"]
    for row in table:
        lines.append(f"{row['label']},{row['topology']},{row['algorithm']},{row['median']!r}")
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- presets

def _logistic_base(**overrides) -> dict:
    base = {
        "objective": "logistic",
        "dataset": "blobs",
        "samples": "600",
        "dim": "5",
        "separation": "3.0",
        "seed": "77",
        "partition": "label_sorted",
        "shards_per_node": "1",
        "reg": "0.01",
        "batch": "10",
        "n": "10",
        "seeds": "1,2,3,4,5",
    }
    base.update({k: str(v) for k, v in overrides.items()})
    return base


def preset_fig6_ring() -> list[ExperimentConfig]:
    """Communication-frequency sweep on the ring: more gossip, lower final loss."""
    configs = []
    for tau2 in (1, 4, 8, 15):
        configs.append(
            ExperimentConfig.from_mapping(
                _logistic_base(
                    label=f"tau2_{tau2}", topology="ring", algorithm="dfl",
                    tau1=4, tau2=tau2, T=760, lr_law="constant:2.0",
                )
            )
        )
    return configs


def preset_fig7_tau1() -> list[ExperimentConfig]:
    """Computation-frequency sweep; fully averaged single-step SGD as the benchmark."""
    configs = [
        ExperimentConfig.from_mapping(
            _logistic_base(
                label="sync_sgd", topology="complete", algorithm="dfl",
                tau1=1, tau2=1, T=760, lr_law="constant:2.0",
            )
        )
    ]
    for tau1 in (1, 4, 10):
        configs.append(
            ExperimentConfig.from_mapping(
                _logistic_base(
                    label=f"tau1_{tau1}", topology="ring", algorithm="dfl",
                    tau1=tau1, tau2=4, T=760, lr_law="constant:2.0",
                )
            )
        )
    return configs


def preset_fig8_zeta() -> list[ExperimentConfig]:
    """Topology sweep at fixed frequencies; loss degrades as the gap shrinks."""
    configs = []
    for label, topo in (
        ("zeta_000_complete", "complete"),
        ("zeta_054_ring_groups", "ring_groups:5x2"),
        ("zeta_087_ring", "ring"),
    ):
        configs.append(
            ExperimentConfig.from_mapping(
                _logistic_base(
                    label=label, topology=topo, algorithm="dfl",
                    tau1=2, tau2=4, T=720, lr_law="constant:2.0",
                )
            )
        )
    return configs


def preset_fig9_compression() -> list[ExperimentConfig]:
    """Uncompressed vs compressed gossip; compare aligned on the byte meter.

    The compressed runs get a longer step budget so byte-aligned lookups stay
    inside their trajectories; gamma = 1 mirrors the reference experiment.
    """
    shared = dict(topology="ring", tau1=4, tau2=4, lr_law="constant:0.2")
    return [
        ExperimentConfig.from_mapping(
            _logistic_base(label="dfl_uncompressed", algorithm="dfl", T=600, **shared)
        ),
        ExperimentConfig.from_mapping(
            _logistic_base(
                label="cdfl_topk_067", algorithm="cdfl", T=960,
                compression="topk:4", gamma="1.0", **shared,
            )
        ),
        ExperimentConfig.from_mapping(
            _logistic_base(
                label="cdfl_gossip_08", algorithm="cdfl", T=960,
                compression="gossip:0.8", gamma="1.0", **shared,
            )
        ),
    ]


PRESETS = {
    "fig6_ring": preset_fig6_ring,
    "fig7_tau1": preset_fig7_tau1,
    "fig8_zeta": preset_fig8_zeta,
    "fig9_compression": preset_fig9_compression,
}


def run_preset(name: str, output_dir: str) -> list[RunRecord]:
    if name not in PRESETS:
        raise InvalidConfigError("preset", f"unknown preset {name!r}; have {sorted(PRESETS)}")
    records = []
    for config in PRESETS[name]():
        records.append(run_experiment(config, os.path.join(output_dir, config.get("label"))))
    table = compare(records, metric="loss", at=("step", _common_final_step(records)))
    write_compare_csv(
        os.path.join(output_dir, "summary.csv"), table, "loss",
        ("step", _common_final_step(records)),
    )
    return records


def _common_final_step(records: list) -> int:
    return min(int(rec.config["T"]) for rec in records)
