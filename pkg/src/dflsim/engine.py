"""Periodic local-update / gossip training loops and their metrics.

One round is tau1 local SGD steps followed by tau2 gossip multiplications by
the mixing matrix; a run of T steps executes K = floor(T / tau) full rounds
and finishes with the remaining T - K*tau local steps (configurations where
that remainder exceeds tau1 are rejected).  Step indices are 1-based; the
`Schedule.phase` function is the single source of truth for which kind of
step happens when.

The communicate-then-compute special case (one gossip then one gradient per
step) and the compute-then-communicate case (a block of gradients then one
gossip) are provided as `run_dsgd` and `run_csgd`; `order_equivalence_check`
verifies that both orderings drive the averaged model through identical
iterates when fed the same step-indexed gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, InvalidConfigError, ShapeMismatchError
from .objective import GlobalObjective, sample_batch, stochastic_gradient
from .rng import seed_stream
from .topology import MixingMatrix

LOCAL = "local"
GOSSIP = "gossip"

LOSS_GUARD = 1e12
BYTES_PER_VALUE = 8  # double precision on the wire


@dataclass(frozen=True)
class Schedule:
    """(tau1, tau2, T) with the derived round structure."""

    tau1: int
    tau2: int
    total_steps: int

    def __post_init__(self):
        if self.tau1 < 1 or self.tau2 < 1:
            raise InvalidConfigError("schedule", "tau1 and tau2 must be >= 1")
        if self.total_steps < self.tau:
            raise InvalidConfigError(
                "schedule", f"T={self.total_steps} is shorter than one round (tau={self.tau})"
            )
        # Trailing steps beyond the last full round must fit in a local block.
        if self.total_steps - self.rounds * self.tau > self.tau1:
            raise InvalidConfigError(
                "schedule",
                f"T - K*tau = {self.total_steps - self.rounds * self.tau} exceeds tau1={self.tau1}",
            )

    @property
    def tau(self) -> int:
        return self.tau1 + self.tau2

    @property
    def rounds(self) -> int:
        return self.total_steps // self.tau

    def phase(self, t: int) -> str:
        """Phase of 1-based step t: rounds alternate tau1 local / tau2 gossip."""
        if t < 1 or t > self.total_steps:
            raise ValueError(f"step {t} outside 1..{self.total_steps}")
        if t > self.rounds * self.tau:
            return LOCAL
        return LOCAL if (t - 1) % self.tau < self.tau1 else GOSSIP

    def round_index(self, t: int) -> int:
        """0-based round the step belongs to (trailing steps join the last round)."""
        return min((t - 1) // self.tau, self.rounds - 1)


@dataclass
class GlobalState:
    """Stacked node parameters (column i is node i's model) at step t."""

    x: np.ndarray  # (d, n)
    t: int = 0

    @property
    def average(self) -> np.ndarray:
        return self.x.mean(axis=1)

    @property
    def consensus_distance(self) -> float:
        """||X (I - J)||_F^2, the squared deviation from the column average."""
        centered = self.x - self.average[:, None]
        return float(np.sum(centered * centered))


@dataclass
class TrajectoryMetrics:
    """Per-step records; row 0 is the initial state, row t the state after step t."""

    step: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    consensus_dist: list = field(default_factory=list)
    bytes: list = field(default_factory=list)
    grad_evals: list = field(default_factory=list)

    COLUMNS = ("step", "phase", "loss", "grad_norm_sq", "consensus_dist", "bytes", "grad_evals")

    def append(self, step, phase, loss, grad_norm_sq, consensus_dist, nbytes, grad_evals):
        self.step.append(step)
        self.phase.append(phase)
        self.loss.append(loss)
        self.grad_norm_sq.append(grad_norm_sq)
        self.consensus_dist.append(consensus_dist)
        self.bytes.append(nbytes)
        self.grad_evals.append(grad_evals)

    @property
    def final_loss(self) -> float:
        return self.loss[-1]

    @property
    def total_bytes(self) -> int:
        return self.bytes[-1]

    def summary_avg_grad_norm_sq(self) -> float:
        """(1/T) sum_t ||grad F(u_t)||^2 over the pre-step states u_1..u_T."""
        vals = self.grad_norm_sq[:-1]
        return float(np.mean(vals))

    def rows(self):
        for i in range(len(self.step)):
            yield (
                self.step[i],
                self.phase[i],
                self.loss[i],
                self.grad_norm_sq[i],
                self.consensus_dist[i],
                self.bytes[i],
                self.grad_evals[i],
            )

    def write_csv(self, path) -> None:
        lines = [",".join(self.COLUMNS)]
        for step, phase, loss, gns, cons, nbytes, gev in self.rows():
            lines.append(f"{step},{phase},{loss!r},{gns!r},{cons!r},{nbytes},{gev}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class RunResult:
    metrics: TrajectoryMetrics
    state: GlobalState
    diverged_at: int | None = None


# ---------------------------------------------------------------- steps

def default_init(objective: GlobalObjective, master_seed: int, scale: float = 0.1) -> np.ndarray:
    """Shared starting point for all nodes: one seeded normal draw, scaled."""
    w0 = scale * seed_stream(master_seed, 0, 0, "init").standard_normal(objective.dim)
    return np.tile(w0[:, None], (1, objective.n_nodes))


def local_update_step(
    x: np.ndarray,
    objective: GlobalObjective,
    eta: float,
    batches: list,
    step: int = 0,
) -> np.ndarray:
    """One parallel SGD step: column i moves along node i's batch gradient."""
    if eta <= 0:
        raise InvalidConfigError("eta", "learning rate must be positive")
    grads = np.empty_like(x)
    for i, loc in enumerate(objective.locals):
        grads[:, i] = stochastic_gradient(loc, x[:, i], batches[i])
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(step, "non-finite gradient")
    return x - eta * grads


def gossip_step(x: np.ndarray, mixing: MixingMatrix) -> np.ndarray:
    """One synchronous averaging round: X' = X C (the column average is preserved)."""
    if x.shape[1] != mixing.n:
        raise ShapeMismatchError(
            f"state has {x.shape[1]} columns but the mixing matrix has {mixing.n} nodes"
        )
    return x @ mixing.entries


def _node_batches(objective, batch_size, master_seed, step):
    batches = []
    for i, loc in enumerate(objective.locals):
        if batch_size is None or batch_size >= loc.n_samples:
            batches.append(np.arange(loc.n_samples))
        else:
            rng = seed_stream(master_seed, i, step, "batch")
            batches.append(sample_batch(loc, batch_size, rng))
    return batches


def _record(metrics, objective, x, step, phase, nbytes, gevals):
    u = x.mean(axis=1)
    loss = objective.loss(u)
    g = objective.grad(u)
    centered = x - u[:, None]
    metrics.append(
        step, phase, loss, float(g @ g), float(np.sum(centered * centered)), nbytes, gevals
    )
    return loss


def _gossip_bytes(mixing: MixingMatrix, dim: int) -> int:
    # Every directed edge carries one full parameter vector per gossip step.
    return len(mixing.directed_edges()) * dim * BYTES_PER_VALUE


def _resolve_eta(eta, round_index: int) -> float:
    return float(eta(round_index)) if callable(eta) else float(eta)


def _run_periodic(
    objective: GlobalObjective,
    mixing: MixingMatrix,
    schedule: Schedule,
    eta,
    batch_size: int | None,
    master_seed: int,
    x0: np.ndarray | None,
) -> RunResult:
    x = default_init(objective, master_seed) if x0 is None else x0.copy()
    metrics = TrajectoryMetrics()
    total_bytes = 0
    grad_evals = 0
    step_bytes = _gossip_bytes(mixing, objective.dim)
    _record(metrics, objective, x, 0, "init", 0, 0)
    for t in range(1, schedule.total_steps + 1):
        phase = schedule.phase(t)
        if phase == LOCAL:
            step_eta = _resolve_eta(eta, schedule.round_index(t))
            batches = _node_batches(objective, batch_size, master_seed, t)
            x = local_update_step(x, objective, step_eta, batches, step=t)
            grad_evals += objective.n_nodes
        else:
            x = gossip_step(x, mixing)
            total_bytes += step_bytes
        loss = _record(metrics, objective, x, t, phase, total_bytes, grad_evals)
        if not np.isfinite(loss) or loss > LOSS_GUARD:
            exc = DivergenceError(t, "loss guard tripped")
            exc.partial = metrics
            raise exc
    return RunResult(metrics=metrics, state=GlobalState(x=x, t=schedule.total_steps))


def run_dfl(
    objective: GlobalObjective,
    mixing: MixingMatrix,
    schedule: Schedule,
    eta,
    batch_size: int | None,
    master_seed: int,
    x0: np.ndarray | None = None,
) -> RunResult:
    """Periodic training: tau1 local steps then tau2 gossip steps per round.

    eta may be a float or a callable mapping the 0-based round index to a
    step size.  All nodes share the same initial point.
    """
    if mixing.n != objective.n_nodes:
        raise ShapeMismatchError(
            f"{objective.n_nodes} local objectives but a {mixing.n}-node topology"
        )
    return _run_periodic(objective, mixing, schedule, eta, batch_size, master_seed, x0)


def run_csgd(
    objective: GlobalObjective,
    mixing: MixingMatrix,
    tau: int,
    total_steps: int,
    eta,
    batch_size: int | None,
    master_seed: int,
    x0: np.ndarray | None = None,
) -> RunResult:
    """Compute-then-communicate: tau local steps then one gossip per round.

    This is exactly the periodic schedule with tau2 = 1, so the trajectory
    coincides step for step with run_dfl(tau1=tau, tau2=1) under a shared
    seed.
    """
    return run_dfl(
        objective, mixing, Schedule(tau, 1, total_steps), eta, batch_size, master_seed, x0
    )


def run_dsgd(
    objective: GlobalObjective,
    mixing: MixingMatrix,
    total_steps: int,
    eta: float,
    batch_size: int | None,
    master_seed: int,
    x0: np.ndarray | None = None,
) -> RunResult:
    """Communicate-then-compute: X_{t+1} = X_t C - eta G_t, gradients at the pre-gossip state."""
    if mixing.n != objective.n_nodes:
        raise ShapeMismatchError(
            f"{objective.n_nodes} local objectives but a {mixing.n}-node topology"
        )
    x = default_init(objective, master_seed) if x0 is None else x0.copy()
    metrics = TrajectoryMetrics()
    total_bytes = 0
    grad_evals = 0
    step_bytes = _gossip_bytes(mixing, objective.dim)
    _record(metrics, objective, x, 0, "init", 0, 0)
    for t in range(1, total_steps + 1):
        batches = _node_batches(objective, batch_size, master_seed, t)
        grads = np.empty_like(x)
        for i, loc in enumerate(objective.locals):
            grads[:, i] = stochastic_gradient(loc, x[:, i], batches[i])
        if not np.all(np.isfinite(grads)):
            raise DivergenceError(t, "non-finite gradient")
        x = gossip_step(x, mixing) - eta * grads
        total_bytes += step_bytes
        grad_evals += objective.n_nodes
        loss = _record(metrics, objective, x, t, "both", total_bytes, grad_evals)
        if not np.isfinite(loss) or loss > LOSS_GUARD:
            exc = DivergenceError(t, "loss guard tripped")
            exc.partial = metrics
            raise exc
    return RunResult(metrics=metrics, state=GlobalState(x=x, t=total_steps))


def order_equivalence_check(
    mixing: MixingMatrix,
    total_steps: int,
    eta: float,
    gradient_script: Callable[[int], np.ndarray],
    x0: np.ndarray | None = None,
) -> float:
    """Max averaged-iterate gap between the two update orderings.

    gradient_script(t) must return the (d, n) gradient matrix for step t and
    must not depend on model state; both orderings then consume identical
    gradients and their averaged models should agree to round-off.
    """
    g1 = np.asarray(gradient_script(1))
    if g1.ndim != 2 or g1.shape[1] != mixing.n:
        raise ShapeMismatchError("gradient script must produce (d, n) matrices")
    x_comm = np.zeros_like(g1) if x0 is None else x0.copy()
    x_comp = x_comm.copy()
    worst = 0.0
    for t in range(1, total_steps + 1):
        g = np.asarray(gradient_script(t))
        x_comm = x_comm @ mixing.entries - eta * g
        x_comp = (x_comp - eta * g) @ mixing.entries
        gap = np.max(np.abs(x_comm.mean(axis=1) - x_comp.mean(axis=1)))
        worst = max(worst, float(gap))
    return worst
