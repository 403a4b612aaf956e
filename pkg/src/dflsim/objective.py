"""Local and global objectives on desk-scale convex problems.

Two local-objective families are provided, both with known smoothness and
strong-convexity constants:

  quadratic  F_i(w) = ||A_i w - b_i||^2 / (2 m_i) + reg ||w||^2 / 2
  logistic   binary cross-entropy over (x_j, y_j) plus a ridge term

The global objective is the sample-size-weighted average of the locals.
With the equal-size partitions used throughout, the weights are all 1/N and
the column average of the parameter matrix optimizes the same function the
bounds talk about.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidBatchError,
    InvalidPartitionError,
    ShapeMismatchError,
    UnsupportedObjectiveError,
)
from .rng import seed_stream


# ---------------------------------------------------------------- locals

@dataclass(frozen=True)
class QuadraticLocal:
    """Least squares over the rows of (a, b) with an optional ridge term."""

    a: np.ndarray  # (m, d)
    b: np.ndarray  # (m,)
    reg: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def _check(self, w: np.ndarray) -> None:
        if w.shape != (self.dim,):
            raise ShapeMismatchError(f"expected parameter of shape ({self.dim},), got {w.shape}")

    def loss(self, w: np.ndarray) -> float:
        self._check(w)
        r = self.a @ w - self.b
        return float(0.5 * (r @ r) / self.n_samples + 0.5 * self.reg * (w @ w))

    def grad(self, w: np.ndarray) -> np.ndarray:
        self._check(w)
        return self.a.T @ (self.a @ w - self.b) / self.n_samples + self.reg * w

    def sample_grad(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Mean gradient over the given sample indices (with multiplicity)."""
        self._check(w)
        rows = self.a[idx]
        r = rows @ w - self.b[idx]
        return rows.T @ r / len(idx) + self.reg * w

    def hessian(self) -> np.ndarray:
        return self.a.T @ self.a / self.n_samples + self.reg * np.eye(self.dim)

    def smoothness(self) -> float:
        gram_eigs = np.linalg.eigvalsh(self.a.T @ self.a) / self.n_samples
        return float(gram_eigs[-1] + self.reg)

    def strong_convexity(self) -> float:
        gram_eigs = np.linalg.eigvalsh(self.a.T @ self.a) / self.n_samples
        return float(max(gram_eigs[0], 0.0) + self.reg)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogisticLocal:
    """Binary logistic regression with labels in {0, 1} and a ridge term."""

    x: np.ndarray  # (m, d)
    y: np.ndarray  # (m,) in {0, 1}
    reg: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def _check(self, w: np.ndarray) -> None:
        if w.shape != (self.dim,):
            raise ShapeMismatchError(f"expected parameter of shape ({self.dim},), got {w.shape}")

    def loss(self, w: np.ndarray) -> float:
        self._check(w)
        z = self.x @ w
        # log(1 + e^z) - y z, computed stably
        per_sample = np.logaddexp(0.0, z) - self.y * z
        return float(per_sample.mean() + 0.5 * self.reg * (w @ w))

    def grad(self, w: np.ndarray) -> np.ndarray:
        self._check(w)
        z = self.x @ w
        return self.x.T @ (_sigmoid(z) - self.y) / self.n_samples + self.reg * w

    def sample_grad(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        self._check(w)
        rows = self.x[idx]
        z = rows @ w
        return rows.T @ (_sigmoid(z) - self.y[idx]) / len(idx) + self.reg * w

    def smoothness(self) -> float:
        # sigmoid' <= 1/4, so the per-sample Hessian is bounded by ||x||^2 / 4
        return float(np.max(np.sum(self.x * self.x, axis=1)) / 4.0 + self.reg)

    def strong_convexity(self) -> float:
        return float(self.reg)


# ---------------------------------------------------------------- global

@dataclass(frozen=True)
class GlobalObjective:
    locals: tuple
    weights: np.ndarray  # D_i / D, sums to 1

    @property
    def n_nodes(self) -> int:
        return len(self.locals)

    @property
    def dim(self) -> int:
        return self.locals[0].dim

    def loss(self, w: np.ndarray) -> float:
        return float(sum(wt * loc.loss(w) for wt, loc in zip(self.weights, self.locals)))

    def grad(self, w: np.ndarray) -> np.ndarray:
        g = np.zeros(self.dim)
        for wt, loc in zip(self.weights, self.locals):
            g += wt * loc.grad(w)
        return g

    def smoothness(self) -> float:
        return max(loc.smoothness() for loc in self.locals)

    def strong_convexity(self) -> float:
        return min(loc.strong_convexity() for loc in self.locals)


def make_global(locals_: list) -> GlobalObjective:
    sizes = np.array([loc.n_samples for loc in locals_], dtype=float)
    return GlobalObjective(locals=tuple(locals_), weights=sizes / sizes.sum())


def global_loss(obj: GlobalObjective, w: np.ndarray) -> float:
    return obj.loss(w)


def global_grad(obj: GlobalObjective, w: np.ndarray) -> np.ndarray:
    return obj.grad(w)


# ---------------------------------------------------------------- sampling

def stochastic_gradient(local, w: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Minibatch gradient over an explicit index set.

    Callers draw the batch uniformly with replacement (see `sample_batch`),
    which makes this an unbiased estimator of the exact local gradient; the
    full index set reproduces the exact gradient.
    """
    batch = np.asarray(batch)
    if batch.size == 0:
        raise InvalidBatchError("batch must be non-empty")
    if batch.min() < 0 or batch.max() >= local.n_samples:
        raise InvalidBatchError(
            f"batch indices out of range for {local.n_samples} samples"
        )
    return local.sample_grad(w, batch)


def sample_batch(local, batch_size: int | None, rng: np.random.Generator | None) -> np.ndarray:
    """Uniform-with-replacement batch; None or oversized means the full set."""
    m = local.n_samples
    if batch_size is None or batch_size >= m:
        return np.arange(m)
    if batch_size < 1:
        raise InvalidBatchError(f"batch size must be positive, got {batch_size}")
    if rng is None:
        raise InvalidBatchError("stochastic batches need a generator")
    return rng.integers(0, m, size=batch_size)


def variance_estimates(
    obj: GlobalObjective,
    w_probes: list,
    batch_size: int | None,
    rng: np.random.Generator,
    draws: int = 200,
) -> tuple[float, float, float]:
    """Empirical (sigma^2, sigma_bar^2, G^2) over the probe points.

    sigma^2 bounds the deviation of a node's batch gradient from the global
    gradient (so under non-i.i.d. data it includes heterogeneity, not just
    sampling noise); sigma_bar^2 averages the per-node deviations from the
    local gradients; G^2 bounds the second moment.  Each estimate is the max
    over probes, inflated by 1.5x for use as a bound constant.
    """
    if not w_probes:
        raise InvalidBatchError("need at least one probe point")
    sigma_sq = 0.0
    g_sq = 0.0
    per_node_sq = np.zeros(obj.n_nodes)
    for w in w_probes:
        grad_global = obj.grad(w)
        for i, loc in enumerate(obj.locals):
            grad_local = loc.grad(w)
            if batch_size is None or batch_size >= loc.n_samples:
                gs = [grad_local]
            else:
                gs = [
                    loc.sample_grad(w, rng.integers(0, loc.n_samples, size=batch_size))
                    for _ in range(draws)
                ]
            dev_global = float(np.mean([np.sum((g - grad_global) ** 2) for g in gs]))
            dev_local = float(np.mean([np.sum((g - grad_local) ** 2) for g in gs]))
            second = float(np.mean([np.sum(g * g) for g in gs]))
            sigma_sq = max(sigma_sq, dev_global)
            per_node_sq[i] = max(per_node_sq[i], dev_local)
            g_sq = max(g_sq, second)
    inflate = 1.5
    return inflate * sigma_sq, inflate * float(per_node_sq.mean()), inflate * g_sq


# ---------------------------------------------------------------- partitioning

@dataclass(frozen=True)
class PartitionSpec:
    mode: str = "iid"  # iid | label_sorted
    shards_per_node: int = 1
    seed: int = 0


def partition(labels: np.ndarray, spec: PartitionSpec, n: int) -> list[np.ndarray]:
    """Split sample indices across n nodes.

    iid shuffles then splits evenly (remainder to the last node).
    label_sorted sorts by label, cuts into n * shards_per_node contiguous
    shards and deals them round-robin, which is maximally non-i.i.d. for
    shards_per_node = 1.
    """
    size = len(labels)
    if n < 1 or n > size:
        raise InvalidPartitionError(f"cannot split {size} samples across {n} nodes")
    if spec.mode == "iid":
        order = np.random.default_rng(spec.seed).permutation(size)
        per = size // n
        parts = [order[i * per:(i + 1) * per] for i in range(n)]
        parts[-1] = np.concatenate([parts[-1], order[n * per:]])
    elif spec.mode == "label_sorted":
        if spec.shards_per_node < 1:
            raise InvalidPartitionError("shards_per_node must be >= 1")
        order = np.argsort(labels, kind="stable")
        n_shards = n * spec.shards_per_node
        if n_shards > size:
            raise InvalidPartitionError(f"{n_shards} shards for {size} samples")
        per = size // n_shards
        shards = [order[s * per:(s + 1) * per] for s in range(n_shards)]
        shards[-1] = np.concatenate([shards[-1], order[n_shards * per:]])
        parts = [
            np.concatenate([shards[s] for s in range(n_shards) if s % n == i])
            for i in range(n)
        ]
    else:
        raise InvalidPartitionError(f"unknown partition mode {spec.mode!r}")
    return [np.sort(p) for p in parts]


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)


def load_csv_dataset(path) -> Dataset:
    """One sample per row, last column is the label."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    return Dataset(features=raw[:, :-1], labels=raw[:, -1])


def make_blobs_dataset(
    n_samples: int, dim: int, separation: float, seed: int, add_bias: bool = True
) -> Dataset:
    """Two Gaussian blobs at +-separation/2 along a random direction, labels 0/1."""
    rng = seed_stream(seed, 0, 0, "blobs")
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    half = n_samples // 2
    labels = np.concatenate([np.zeros(half), np.ones(n_samples - half)])
    centers = np.where(labels[:, None] > 0.5, 0.5 * separation, -0.5 * separation) * direction
    features = centers + rng.standard_normal((n_samples, dim))
    if add_bias:
        features = np.hstack([features, np.ones((n_samples, 1))])
    return Dataset(features=features, labels=labels)


def make_logistic_objective(
    dataset: Dataset, parts: list[np.ndarray], reg: float
) -> GlobalObjective:
    locals_ = [
        LogisticLocal(x=dataset.features[p], y=dataset.labels[p].astype(float), reg=reg)
        for p in parts
    ]
    return make_global(locals_)


def make_quadratic_objective(
    n_nodes: int,
    dim: int,
    samples_per_node: int,
    cond: float,
    heterogeneity: float,
    noise: float,
    reg: float,
    seed: int,
) -> GlobalObjective:
    """Per-node least-squares problems with a controlled condition number.

    Each node draws its own design matrix, rescaled so the local Gram
    spectrum spans [1/cond, 1], and targets b_i = A_i w_i + noise where the
    per-node w_i are shifted from a shared base by `heterogeneity`; the shift
    is what creates local drift under decentralized training.
    """
    if samples_per_node < dim:
        raise UnsupportedObjectiveError(
            "need samples_per_node >= dim for strongly convex local problems"
        )
    base_rng = seed_stream(seed, 0, 0, "quad_base")
    w_base = base_rng.standard_normal(dim)
    locals_ = []
    for i in range(n_nodes):
        rng = seed_stream(seed, i, 0, "quad_node")
        a = rng.standard_normal((samples_per_node, dim))
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        spread = np.linspace(1.0, 1.0 / np.sqrt(cond), dim)
        a = (u * (np.sqrt(samples_per_node) * spread)) @ vt
        w_node = w_base + heterogeneity * rng.standard_normal(dim)
        b = a @ w_node + noise * rng.standard_normal(samples_per_node)
        locals_.append(QuadraticLocal(a=a, b=b, reg=reg))
    return make_global(locals_)


# ---------------------------------------------------------------- optima

def quadratic_optimum(obj: GlobalObjective) -> np.ndarray:
    """Closed-form minimizer of a global quadratic objective."""
    d = obj.dim
    h = np.zeros((d, d))
    rhs = np.zeros(d)
    for wt, loc in zip(obj.weights, obj.locals):
        if not isinstance(loc, QuadraticLocal):
            raise UnsupportedObjectiveError("closed-form optimum needs quadratic locals")
        h += wt * (loc.a.T @ loc.a / loc.n_samples + loc.reg * np.eye(d))
        rhs += wt * (loc.a.T @ loc.b / loc.n_samples)
    return np.linalg.solve(h, rhs)


def reference_minimum(obj: GlobalObjective, tol: float = 1e-10, max_iters: int = 200000):
    """(w*, F*) for the global objective.

    Quadratics use the closed form; anything else runs full-gradient descent
    at step 1/L until the gradient norm drops below tol, which needs a
    strongly convex objective to terminate.
    """
    if all(isinstance(loc, QuadraticLocal) for loc in obj.locals):
        w_star = quadratic_optimum(obj)
        return w_star, obj.loss(w_star)
    if obj.strong_convexity() <= 0.0:
        raise UnsupportedObjectiveError("reference minimum needs strong convexity")
    step = 1.0 / obj.smoothness()
    w = np.zeros(obj.dim)
    for _ in range(max_iters):
        g = obj.grad(w)
        if np.linalg.norm(g) <= tol:
            break
        w = w - step * g
    return w, obj.loss(w)
