"""Doubly stochastic mixing matrices and their spectral summaries.

The gossip step multiplies the parameter matrix by a symmetric doubly
stochastic weight matrix C.  Three numbers computed from its spectrum drive
every convergence statement in this package:

  zeta  second-largest eigenvalue magnitude, max(|lambda_2|, |lambda_n|)
  rho   spectral gap 1 - zeta
  beta  operator norm of I - C, equal to max_i |1 - lambda_i| for symmetric C

`power_gap_norm` computes ||C^j - J||_op directly from a matrix power and a
singular value, independently of the eigendecomposition, so it can serve as
an oracle for the identity ||C^j - J||_op = zeta^j.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidTopologyError, NumericError

STOCHASTIC_TOL = 1e-12
SPECTRAL_TOL = 1e-10


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic weight matrix over n nodes.

    entries[j, i] is the weight node i puts on node j's model during one
    gossip step (zero unless j == i or (j, i) is an edge).
    """

    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def neighbors(self, i: int) -> list[int]:
        """Nodes j != i with positive weight toward node i."""
        col = self.entries[:, i]
        return [j for j in range(self.n) if j != i and col[j] > 0.0]

    def directed_edges(self) -> list[tuple[int, int]]:
        """All ordered pairs (src, dst), src != dst, in the support of C."""
        return [(j, i) for i in range(self.n) for j in self.neighbors(i)]


@dataclass(frozen=True)
class SpectralSummary:
    zeta: float
    beta: float
    rho: float
    eigenvalues: np.ndarray


def consensus_matrix(n: int) -> np.ndarray:
    """The averaging matrix J = 11^T / n."""
    return np.full((n, n), 1.0 / n)


def validate(matrix: MixingMatrix, tol: float = STOCHASTIC_TOL) -> None:
    """Raise InvalidTopologyError unless the matrix is a valid mixing matrix."""
    c = matrix.entries
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidTopologyError(f"expected a square matrix, got shape {c.shape}")
    n = c.shape[0]
    if not np.all(np.isfinite(c)):
        raise InvalidTopologyError("matrix has non-finite entries")
    if np.min(c) < -tol:
        raise InvalidTopologyError(f"negative entry {np.min(c):.3e}")
    if np.max(np.abs(c - c.T)) > tol:
        raise InvalidTopologyError("matrix is not symmetric")
    row_err = np.max(np.abs(c.sum(axis=1) - 1.0))
    col_err = np.max(np.abs(c.sum(axis=0) - 1.0))
    if row_err > tol or col_err > tol:
        raise InvalidTopologyError(
            f"not doubly stochastic (row err {row_err:.3e}, col err {col_err:.3e})"
        )
    diag = np.diag(c)
    if np.min(diag) <= 0.0:
        raise InvalidTopologyError(f"self-weight must be positive, min is {np.min(diag):.3e}")
    _ = n


def _as_mixing(entries: np.ndarray) -> MixingMatrix:
    m = MixingMatrix(entries=entries)
    validate(m)
    return m


def build_ring(n: int) -> MixingMatrix:
    """Ring of n nodes; every node averages itself and both neighbors at 1/3."""
    if n < 3:
        raise InvalidTopologyError(f"ring needs at least 3 nodes, got {n}")
    c = np.zeros((n, n))
    for i in range(n):
        c[i, i] += 1.0 / 3.0
        c[i, (i + 1) % n] += 1.0 / 3.0
        c[i, (i - 1) % n] += 1.0 / 3.0
    return _as_mixing(c)


def build_complete(n: int) -> MixingMatrix:
    """Fully connected topology; equals the consensus matrix J."""
    if n < 1:
        raise InvalidTopologyError("need at least one node")
    return _as_mixing(consensus_matrix(n))


def build_identity(n: int) -> MixingMatrix:
    """Disconnected topology; gossip with it is a no-op (zeta = 1)."""
    if n < 1:
        raise InvalidTopologyError("need at least one node")
    return _as_mixing(np.eye(n))


def from_adjacency(adj: np.ndarray, scheme: str = "uniform_degree") -> MixingMatrix:
    """Turn a symmetric 0/1 adjacency into a mixing matrix.

    uniform_degree: each edge gets weight 1/(deg_max + 1), the remainder goes
    on the diagonal.  metropolis: edge (j, i) gets 1/(1 + max(deg_j, deg_i)).
    Both keep the matrix symmetric doubly stochastic with positive diagonal.
    """
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise InvalidTopologyError(f"adjacency must be square, got shape {adj.shape}")
    a = (adj != 0).astype(float)
    if np.any(np.diag(a) != 0):
        raise InvalidTopologyError("adjacency diagonal must be zero")
    if np.any(a != a.T):
        raise InvalidTopologyError("adjacency must be symmetric")
    n = a.shape[0]
    deg = a.sum(axis=1)

    if scheme == "uniform_degree":
        w = 1.0 / (deg.max() + 1.0) if n > 0 else 1.0
        c = a * w
        np.fill_diagonal(c, 1.0 - deg * w)
    elif scheme == "metropolis":
        c = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                if a[i, j]:
                    c[i, j] = c[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
        np.fill_diagonal(c, 1.0 - c.sum(axis=1))
    else:
        raise InvalidTopologyError(f"unknown weight scheme {scheme!r}")
    return _as_mixing(c)


def _ring_adjacency(n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=int)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return a


def build_quasi_ring(n: int) -> MixingMatrix:
    """Ring plus one chord between antipodal nodes 0 and n/2, uniform-degree weights.

    The chord construction is a reproducible stand-in for the paper-style
    quasi-ring; its zeta is reported as computed rather than asserted.
    """
    if n < 6 or n % 2 != 0:
        raise InvalidTopologyError(f"quasi-ring needs an even node count >= 6, got {n}")
    a = _ring_adjacency(n)
    a[0, n // 2] = a[n // 2, 0] = 1
    return from_adjacency(a, "uniform_degree")


def build_ring_groups(n_groups: int, group_size: int) -> MixingMatrix:
    """Groups of nodes arranged in a ring; groups are cliques, adjacent groups fully linked.

    With uniform-degree weights the non-trivial spectrum equals that of a
    plain ring over n_groups nodes, so this gives a topology with more nodes
    but the zeta of the smaller ring.
    """
    if n_groups < 3 or group_size < 1:
        raise InvalidTopologyError("need at least 3 groups of at least 1 node")
    n = n_groups * group_size
    a = np.zeros((n, n), dtype=int)
    for g in range(n_groups):
        members = range(g * group_size, (g + 1) * group_size)
        nxt = range(((g + 1) % n_groups) * group_size, ((g + 1) % n_groups + 1) * group_size)
        for i in members:
            for j in members:
                if i != j:
                    a[i, j] = 1
            for j in nxt:
                a[i, j] = a[j, i] = 1
    return from_adjacency(a, "uniform_degree")


def load_adjacency(path, n: int | None = None) -> np.ndarray:
    """Read an edge list, one `i j` pair per line (0-indexed), into an adjacency matrix."""
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise InvalidTopologyError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            i, j = int(parts[0]), int(parts[1])
            if i == j or i < 0 or j < 0:
                raise InvalidTopologyError(f"{path}:{lineno}: bad edge ({i}, {j})")
            edges.append((i, j))
    size = n if n is not None else (max(max(e) for e in edges) + 1 if edges else 0)
    a = np.zeros((size, size), dtype=int)
    for i, j in edges:
        if i >= size or j >= size:
            raise InvalidTopologyError(f"edge ({i}, {j}) outside the {size}-node graph")
        a[i, j] = a[j, i] = 1
    return a


def spectral(matrix: MixingMatrix) -> SpectralSummary:
    """Compute (zeta, beta, rho) from the symmetric eigendecomposition."""
    try:
        eigs = np.linalg.eigvalsh(matrix.entries)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    eigs = np.sort(eigs)[::-1]
    if abs(eigs[0] - 1.0) > SPECTRAL_TOL:
        raise NumericError(f"leading eigenvalue is {eigs[0]!r}, expected 1")
    if np.max(np.abs(eigs)) > 1.0 + SPECTRAL_TOL:
        raise NumericError("eigenvalue magnitude exceeds 1")
    if matrix.n == 1:
        zeta = 0.0  # no second eigenvalue; treat a single node as fully mixed
    else:
        zeta = float(np.max(np.abs(eigs[1:])))
        zeta = min(zeta, 1.0)
    beta = float(np.max(np.abs(1.0 - eigs)))
    return SpectralSummary(zeta=zeta, beta=beta, rho=1.0 - zeta, eigenvalues=eigs)


def power_gap_norm(matrix: MixingMatrix, j: int) -> float:
    """||C^j - J||_op via matrix power and largest singular value (oracle path)."""
    if j < 0:
        raise ValueError("exponent must be non-negative")
    n = matrix.n
    m = np.linalg.matrix_power(matrix.entries, j) - consensus_matrix(n)
    return float(np.linalg.norm(m, 2))
