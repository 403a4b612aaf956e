"""Compression operators, compressed gossip, and the compressed training loop.

Every operator Q is a contraction toward its input: E||Q(x) - x||^2 is at
most (1 - delta)||x||^2 for a nominal ratio delta in (0, 1].  Compressed
gossip keeps, per node, replicas of the neighbours' models that are updated
only by the compressed deltas q actually sent on the wire, so the exact
column average of the parameter matrix is preserved even though no node
ever transmits its raw model.

A gossip step is a two-phase synchronous round: first every node computes
its correction and its outgoing q from the pre-step snapshot, then all q
messages are applied.  Replicas of the same model held by different nodes
see the same messages and therefore never disagree; `check_replicas` makes
that invariant testable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import (
    BYTES_PER_VALUE,
    GlobalState,
    RunResult,
    Schedule,
    TrajectoryMetrics,
    _record,
    default_init,
    local_update_step,
    _node_batches,
)
from .errors import (
    DivergenceError,
    InfeasibleTopologyError,
    InvalidConfigError,
    InvalidOperatorError,
    UnsupportedObjectiveError,
)
from .objective import GlobalObjective
from .rng import seed_stream
from .topology import MixingMatrix, spectral

CHOCO_RATE_DENOM = 82.0


# ---------------------------------------------------------------- operators

@dataclass(frozen=True)
class Identity:
    """No-op operator (delta = 1); messages cost a full vector."""

    def delta(self, d: int) -> float:
        return 1.0

    def compress(self, x: np.ndarray, rng=None) -> np.ndarray:
        return x.copy()

    def message_bytes(self, q: np.ndarray) -> int:
        return len(q) * BYTES_PER_VALUE


@dataclass(frozen=True)
class TopK:
    """Keep the k largest-magnitude coordinates, ties broken by lower index."""

    k: int

    def _check(self, d: int) -> None:
        if not 1 <= self.k <= d:
            raise InvalidOperatorError(f"top_k needs 1 <= k <= d, got k={self.k}, d={d}")

    def delta(self, d: int) -> float:
        self._check(d)
        return self.k / d

    def compress(self, x: np.ndarray, rng=None) -> np.ndarray:
        self._check(len(x))
        order = np.argsort(-np.abs(x), kind="stable")
        out = np.zeros_like(x)
        keep = order[: self.k]
        out[keep] = x[keep]
        return out

    def message_bytes(self, q: np.ndarray) -> int:
        # k values plus a d-bit membership mask
        return self.k * BYTES_PER_VALUE + math.ceil(len(q) / 8)


@dataclass(frozen=True)
class RandK:
    """Keep k uniformly random coordinates."""

    k: int

    def _check(self, d: int) -> None:
        if not 1 <= self.k <= d:
            raise InvalidOperatorError(f"rand_k needs 1 <= k <= d, got k={self.k}, d={d}")

    def delta(self, d: int) -> float:
        self._check(d)
        return self.k / d

    def compress(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        self._check(len(x))
        keep = rng.choice(len(x), size=self.k, replace=False)
        out = np.zeros_like(x)
        out[keep] = x[keep]
        return out

    def message_bytes(self, q: np.ndarray) -> int:
        # k values plus the seed the receiver uses to reproduce the index draw
        return self.k * BYTES_PER_VALUE + 8


@dataclass(frozen=True)
class RandomizedGossip:
    """Send the full vector with probability prob, otherwise nothing."""

    prob: float

    def __post_init__(self):
        if not 0.0 < self.prob <= 1.0:
            raise InvalidOperatorError(f"gossip probability must be in (0, 1], got {self.prob}")

    def delta(self, d: int) -> float:
        return self.prob

    def compress(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return x.copy() if rng.random() < self.prob else np.zeros_like(x)

    def message_bytes(self, q: np.ndarray) -> int:
        # an all-zero payload is sent as a one-byte empty marker
        return len(q) * BYTES_PER_VALUE if np.any(q != 0.0) else 1


@dataclass(frozen=True)
class Qsgd:
    """Random quantization to s levels with uniform dithering.

    q_i = sign(x_i) * ||x|| / (s c) * floor(s |x_i| / ||x|| + xi_i) with
    xi uniform on [0, 1] per coordinate and c = 1 + min(d / s^2, sqrt(d) / s);
    the 1/c rescaling makes the operator a (1 - 1/c)-contraction.
    """

    s: int

    def __post_init__(self):
        if self.s < 1:
            raise InvalidOperatorError(f"qsgd needs s >= 1, got {self.s}")

    def _c(self, d: int) -> float:
        return 1.0 + min(d / self.s**2, math.sqrt(d) / self.s)

    def delta(self, d: int) -> float:
        return 1.0 / self._c(d)

    def compress(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            return np.zeros_like(x)
        xi = rng.random(len(x))
        levels = np.floor(self.s * np.abs(x) / norm + xi)
        return np.sign(x) * (norm / (self.s * self._c(len(x)))) * levels

    def message_bytes(self, q: np.ndarray) -> int:
        bits_per_coord = math.ceil(math.log2(2 * self.s + 1))
        return math.ceil(len(q) * bits_per_coord / 8) + 8  # payload + ||x||


def parse_operator(spec: str):
    """Parse the config syntax none|identity|topk:<k>|randk:<k>|gossip:<p>|qsgd:<s>."""
    spec = spec.strip().lower()
    if spec in ("none", ""):
        return None
    if spec == "identity":
        return Identity()
    kind, _, arg = spec.partition(":")
    try:
        if kind == "topk":
            return TopK(k=int(arg))
        if kind == "randk":
            return RandK(k=int(arg))
        if kind == "gossip":
            return RandomizedGossip(prob=float(arg))
        if kind == "qsgd":
            return Qsgd(s=int(arg))
    except ValueError as exc:
        raise InvalidOperatorError(f"bad operator argument in {spec!r}: {exc}") from exc
    raise InvalidOperatorError(f"unknown compression operator {spec!r}")


def compress(op, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    return op.compress(np.asarray(x, dtype=float), rng)


# ---------------------------------------------------------------- contraction check

@dataclass(frozen=True)
class ContractionReport:
    delta: float
    rows: tuple  # (probe name, mean ratio, stderr)

    @property
    def max_ratio(self) -> float:
        return max(r[1] for r in self.rows)

    def holds(self, z: float = 3.0) -> bool:
        """Assumption-2 check: mean ratio <= (1 - delta) + z * stderr per probe."""
        return all(mean <= (1.0 - self.delta) + z * se + 1e-12 for _, mean, se in self.rows)


def _probe_set(d: int, rng: np.random.Generator):
    probes = {
        "ones": np.ones(d),
        "one_hot": np.eye(d)[0],
        "spiky": np.concatenate([[3.0], np.ones(d - 1)]) if d > 1 else np.array([3.0]),
        "geometric": 0.9 ** np.arange(d),
        "alternating": (-1.0) ** np.arange(d),
    }
    for i in range(3):
        probes[f"normal_{i}"] = rng.standard_normal(d)
    return probes


def empirical_contraction(op, d: int, trials: int, rng: np.random.Generator) -> ContractionReport:
    """Monte-Carlo worst-case estimate of E||Q(x) - x||^2 / ||x||^2 over a probe set."""
    delta = op.delta(d)
    rows = []
    for name, x in _probe_set(d, rng).items():
        denom = float(x @ x)
        ratios = np.empty(trials)
        for t in range(trials):
            err = op.compress(x, rng) - x
            ratios[t] = float(err @ err) / denom
        rows.append((name, float(ratios.mean()), float(ratios.std(ddof=1) / np.sqrt(trials))))
    return ContractionReport(delta=delta, rows=tuple(rows))


# ---------------------------------------------------------------- compressed gossip

@dataclass
class ChocoState:
    """Node parameters plus per-node replica tables of the neighbours' models.

    replicas[i][j] is node i's copy of node j's replica vector; j ranges over
    node i's neighbourhood including i itself.  Replicas start at zero and
    change only when a q message for j is applied.
    """

    ws: np.ndarray  # (d, n)
    replicas: list  # list over nodes of dict node -> (d,) array

    @classmethod
    def init(cls, x0: np.ndarray, mixing: MixingMatrix) -> "ChocoState":
        d, n = x0.shape
        replicas = []
        for i in range(n):
            holders = set(mixing.neighbors(i)) | {i}
            replicas.append({j: np.zeros(d) for j in sorted(holders)})
        return cls(ws=x0.copy(), replicas=replicas)

    def own_replica(self, i: int) -> np.ndarray:
        return self.replicas[i][i]

    def consensus_error(self) -> float:
        """sum_i ||w_i - u||^2 + ||w_i - what_i||^2, the linear-rate Lyapunov value."""
        u = self.ws.mean(axis=1)
        total = 0.0
        for i in range(self.ws.shape[1]):
            w = self.ws[:, i]
            dw = w - u
            dh = w - self.own_replica(i)
            total += float(dw @ dw + dh @ dh)
        return total


def check_replicas(state: ChocoState, tol: float = 0.0) -> None:
    """Raise if two holders of the same replica disagree."""
    n = state.ws.shape[1]
    for j in range(n):
        holders = [i for i in range(n) if j in state.replicas[i]]
        ref = state.replicas[holders[0]][j]
        for i in holders[1:]:
            if np.max(np.abs(state.replicas[i][j] - ref)) > tol:
                raise AssertionError(f"replica of node {j} differs between holders {holders[0]} and {i}")


def choco_gossip_step(
    state: ChocoState,
    mixing: MixingMatrix,
    gamma: float,
    op,
    rng_for: Callable[[int], np.random.Generator] | None = None,
):
    """One compressed gossip round; returns (new state, messages).

    Phase one computes, from the pre-step snapshot, each node's corrected
    model w' = w + gamma * sum_j c_ji (what_j - what_i) and its outgoing
    q = Q(w' - what_i).  Phase two delivers every q to every holder of that
    replica.  messages is a list of (src, dst, bytes) for the directed edges
    actually used (self-deliveries are free and not listed).
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidConfigError("gamma", f"consensus step size must be in (0, 1], got {gamma}")
    d, n = state.ws.shape
    c = mixing.entries
    new_ws = np.empty_like(state.ws)
    qs = []
    for i in range(n):
        correction = np.zeros(d)
        own = state.replicas[i][i]
        for j, what in state.replicas[i].items():
            if c[j, i] > 0.0:
                correction += c[j, i] * (what - own)
        new_ws[:, i] = state.ws[:, i] + gamma * correction
        rng = rng_for(i) if rng_for is not None else None
        qs.append(op.compress(new_ws[:, i] - own, rng))

    messages = []
    new_replicas = [dict() for _ in range(n)]
    for i in range(n):
        for j in state.replicas[i]:
            new_replicas[i][j] = state.replicas[i][j] + qs[j]
            if j != i:
                messages.append((j, i, op.message_bytes(qs[j])))
    return ChocoState(ws=new_ws, replicas=new_replicas), messages


# ---------------------------------------------------------------- step-size laws

def choco_consensus_step_size(rho: float, beta: float, delta: float) -> float:
    """The prescribed consensus step size gamma(rho, beta, delta)."""
    if rho <= 0.0:
        raise InfeasibleTopologyError("compressed gossip needs a positive spectral gap")
    denom = 16.0 * rho + rho**2 + 4.0 * beta**2 + 2.0 * rho * beta**2 - 8.0 * rho * delta
    if denom <= 0.0:
        raise InvalidConfigError("gamma", f"step-size denominator {denom} is not positive")
    return rho**2 * delta / denom


def choco_rate(rho: float, delta: float) -> float:
    """Per-step linear consensus rate p = rho^2 delta / 82."""
    p = rho**2 * delta / CHOCO_RATE_DENOM
    if not 0.0 < p < 1.0:
        raise InvalidConfigError("p", f"rate parameter {p} outside (0, 1)")
    return p


@dataclass(frozen=True)
class LrLaw:
    """Learning-rate law: constant eta, or eta_k = 4 / (mu (a + k)) per round."""

    kind: str  # "constant" | "prop2"
    value: float  # eta for constant, the shift a for prop2

    @classmethod
    def parse(cls, text: str) -> "LrLaw":
        kind, _, arg = text.strip().lower().partition(":")
        if kind not in ("constant", "prop2") or not arg:
            raise InvalidConfigError("lr_law", f"expected constant:<eta> or prop2:<a>, got {text!r}")
        return cls(kind=kind, value=float(arg))

    def resolve(self, mu: float, kappa: float) -> Callable[[int], float]:
        if self.kind == "constant":
            eta = self.value
            return lambda k: eta
        a = self.value
        if a < 16.0 * kappa:
            raise InvalidConfigError("lr_law", f"prop2 shift a={a} below 16*kappa={16 * kappa}")
        return lambda k: 4.0 / (mu * (a + k))


# ---------------------------------------------------------------- C-DFL

@dataclass(frozen=True)
class CdflConfig:
    schedule: Schedule
    op: object
    lr_law: LrLaw
    gamma: float | None = None  # None resolves to the prescribed formula

    def __post_init__(self):
        if self.schedule.total_steps != self.schedule.rounds * self.schedule.tau:
            raise InvalidConfigError("schedule", "compressed runs need T = K * tau exactly")


@dataclass
class CdflResult:
    metrics: TrajectoryMetrics
    state: GlobalState
    u_rounds: np.ndarray  # (K + 1, d); row k is the average after k rounds
    w_avg: np.ndarray | None  # quadratic-weight average, prop2 law only
    gamma: float
    trace: list | None = None


def round_weight_sum(a: float, rounds: int) -> float:
    """S_K = sum_{k<K} (a + k)^2."""
    k = np.arange(rounds, dtype=float)
    return float(np.sum((a + k) ** 2))


def weighted_round_average(u_rounds: np.ndarray, a: float, rounds: int) -> np.ndarray:
    """(1 / S_K) sum_{k<K} (a + k)^2 u^(k) over the recorded round boundaries."""
    if rounds < 1 or rounds >= len(u_rounds) + 1:
        raise InvalidConfigError("rounds", f"need 1 <= K <= {len(u_rounds) - 1}")
    k = np.arange(rounds, dtype=float)
    w = (a + k) ** 2
    return (w[:, None] * u_rounds[:rounds]).sum(axis=0) / w.sum()


def run_cdfl(
    objective: GlobalObjective,
    mixing: MixingMatrix,
    config: CdflConfig,
    batch_size: int | None,
    master_seed: int,
    x0: np.ndarray | None = None,
    collect_trace: bool = False,
) -> CdflResult:
    """Compressed training: tau1 local steps then tau2 compressed gossip steps per round."""
    mu = objective.strong_convexity()
    if mu <= 0.0:
        raise UnsupportedObjectiveError("compressed training needs a strongly convex objective")
    kappa = objective.smoothness() / mu
    eta_of = config.lr_law.resolve(mu, kappa)

    summary = spectral(mixing)
    delta = config.op.delta(objective.dim)
    gamma = (
        config.gamma
        if config.gamma is not None
        else choco_consensus_step_size(summary.rho, summary.beta, delta)
    )
    if summary.rho <= 0.0:
        raise InfeasibleTopologyError("compressed gossip needs a positive spectral gap")

    sched = config.schedule
    x = default_init(objective, master_seed) if x0 is None else x0.copy()
    state = ChocoState.init(x, mixing)
    metrics = TrajectoryMetrics()
    trace = [] if collect_trace else None
    total_bytes = 0
    grad_evals = 0
    u_rounds = [state.ws.mean(axis=1)]
    _record(metrics, objective, state.ws, 0, "init", 0, 0)
    for t in range(1, sched.total_steps + 1):
        phase = sched.phase(t)
        if phase == "local":
            eta = eta_of(sched.round_index(t))
            batches = _node_batches(objective, batch_size, master_seed, t)
            state.ws = local_update_step(state.ws, objective, eta, batches, step=t)
            grad_evals += objective.n_nodes
        else:
            rng_for = lambda i: seed_stream(master_seed, i, t, "compress")
            state, messages = choco_gossip_step(state, mixing, gamma, config.op, rng_for)
            total_bytes += sum(m[2] for m in messages)
            if trace is not None:
                trace.extend((t, src, dst, nbytes) for src, dst, nbytes in messages)
        loss = _record(metrics, objective, state.ws, t, phase, total_bytes, grad_evals)
        if not np.isfinite(loss) or loss > 1e12:
            exc = DivergenceError(t, "loss guard tripped")
            exc.partial = metrics
            raise exc
        if t % sched.tau == 0:
            u_rounds.append(state.ws.mean(axis=1))

    u_rounds = np.asarray(u_rounds)
    w_avg = (
        weighted_round_average(u_rounds, config.lr_law.value, sched.rounds)
        if config.lr_law.kind == "prop2"
        else None
    )
    return CdflResult(
        metrics=metrics,
        state=GlobalState(x=state.ws, t=sched.total_steps),
        u_rounds=u_rounds,
        w_avg=w_avg,
        gamma=gamma,
        trace=trace,
    )
