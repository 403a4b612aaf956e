"""Closed-form convergence bounds and feasibility conditions as functions.

Everything here is a pure function of `BoundParams`.  The periodic-gossip
bound decomposes into a synchronous-SGD part, 2 F_gap / (eta T) + eta L
sigma^2 / N, and a local-drift part, 2 eta^2 L^2 sigma^2 (tau1 /
(1 - zeta^{2 tau2}) - 1); its two special cases (full averaging with one
local step, and zeta = 0) are exposed as named helpers so the
specializations can be checked exactly.

Two learning-rate feasibility conditions are provided.  The main form,

  eta L + eta^2 L^2 tau / (1 - zeta^tau2) * (2 tau1 zeta^{2 tau2} /
  (1 + zeta^tau2) + 2 tau1 zeta^tau2 / (1 - zeta^tau2) + tau - 1) <= 1,

omits the beta-dependent terms that the full derivation carries; the strict
form adds eta L beta / N and 2 eta^2 L^2 beta tau / (1 - zeta^{2 tau2}),
so strict feasibility implies main-form feasibility whenever beta >= 0.
Both are implemented and the discrepancy is left visible rather than
resolved.

The compressed-training bound is the fully explicit form with the three
D terms; the big-O statement is recoverable as a grouping of its terms but
no constants are invented here.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .compression import CHOCO_RATE_DENOM
from .errors import (
    InfeasibleTopologyError,
    InsufficientCommunicationError,
    InvalidConfigError,
)


@dataclass(frozen=True)
class BoundParams:
    """All constants the bounds consume, in one bag.

    theta is the free splitting parameter of the compressed bound; it must
    stay below p / (1 - p) and defaults to the midpoint p / (2 (1 - p)).
    """

    smooth_l: float
    mu: float = 0.0
    sigma_sq: float = 0.0
    sigma_bar_sq: float = 0.0
    g_sq: float = 0.0
    zeta: float = 0.0
    beta: float = 0.0
    delta: float = 1.0
    eta: float = 0.0
    tau1: int = 1
    tau2: int = 1
    n_nodes: int = 1
    total_steps: int = 1
    f_gap: float = 0.0
    a: float = 0.0
    theta: float | None = None

    @property
    def tau(self) -> int:
        return self.tau1 + self.tau2

    @property
    def rho(self) -> float:
        return 1.0 - self.zeta

    @property
    def kappa(self) -> float:
        if self.mu <= 0.0:
            raise InvalidConfigError("mu", "kappa needs strong convexity")
        return self.smooth_l / self.mu

    @property
    def p_rate(self) -> float:
        return self.rho**2 * self.delta / CHOCO_RATE_DENOM

    def resolved_theta(self) -> float:
        p = self.p_rate
        theta = self.theta if self.theta is not None else p / (2.0 * (1.0 - p))
        if not 0.0 < theta < p / (1.0 - p):
            raise InvalidConfigError("theta", f"need 0 < theta < p/(1-p) = {p / (1.0 - p)}")
        return theta


# ---------------------------------------------------------------- feasibility

def _drift_factor(zeta: float, tau1: int, tau2: int) -> float:
    tau = tau1 + tau2
    zt = zeta**tau2
    return (2.0 * tau1 * zt**2 / (1.0 + zt) + 2.0 * tau1 * zt / (1.0 - zt) + tau - 1.0) / (1.0 - zt)


def lr_feasible(params: BoundParams) -> bool:
    """Main-text learning-rate condition; needs zeta < 1."""
    if params.zeta >= 1.0:
        raise InfeasibleTopologyError("the feasibility condition is undefined at zeta = 1")
    el = params.eta * params.smooth_l
    lhs = el + el**2 * params.tau * _drift_factor(params.zeta, params.tau1, params.tau2)
    return lhs <= 1.0


def lr_feasible_strict(params: BoundParams) -> bool:
    """Appendix-form condition with the beta terms; implies `lr_feasible`."""
    if params.zeta >= 1.0:
        raise InfeasibleTopologyError("the feasibility condition is undefined at zeta = 1")
    el = params.eta * params.smooth_l
    lhs = (
        el * (params.beta / params.n_nodes + 1.0)
        + 2.0 * el**2 * params.beta * params.tau / (1.0 - params.zeta ** (2 * params.tau2))
        + el**2 * params.tau * _drift_factor(params.zeta, params.tau1, params.tau2)
    )
    return lhs <= 1.0


# ---------------------------------------------------------------- periodic-gossip bound

@dataclass(frozen=True)
class DflBound:
    total: float
    sync_term: float
    drift_term: float
    feasible: bool


def _sync_term(params: BoundParams, include_horizon: bool) -> float:
    term = params.eta * params.smooth_l * params.sigma_sq / params.n_nodes
    if include_horizon:
        term += 2.0 * params.f_gap / (params.eta * params.total_steps)
    return term


def _drift_term(params: BoundParams) -> float:
    if params.zeta >= 1.0:
        return float("inf")
    shrink = 1.0 - params.zeta ** (2 * params.tau2)
    return (
        2.0
        * params.eta**2
        * params.smooth_l**2
        * params.sigma_sq
        * (params.tau1 / shrink - 1.0)
    )


def dfl_bound(params: BoundParams, warn_infeasible: bool = True) -> DflBound:
    """Average-squared-gradient bound after T steps, with its two components."""
    try:
        feasible = lr_feasible(params)
    except InfeasibleTopologyError:
        feasible = False
    if warn_infeasible and not feasible:
        warnings.warn("learning rate violates the feasibility condition; bound may not apply")
    sync = _sync_term(params, include_horizon=True)
    drift = _drift_term(params)
    return DflBound(total=sync + drift, sync_term=sync, drift_term=drift, feasible=feasible)


def dfl_bound_asymptotic(params: BoundParams) -> float:
    """The T -> infinity residual: the bound minus its 2 F_gap / (eta T) term."""
    return _sync_term(params, include_horizon=False) + _drift_term(params)


def full_averaging_bound(params: BoundParams) -> float:
    """Special case tau1 = 1 with unlimited gossip: no drift term at all."""
    return _sync_term(params, include_horizon=True)


def zero_zeta_bound(params: BoundParams) -> float:
    """Special case zeta = 0: drift collapses to 2 eta^2 L^2 sigma^2 (tau1 - 1)."""
    drift = 2.0 * params.eta**2 * params.smooth_l**2 * params.sigma_sq * (params.tau1 - 1.0)
    return _sync_term(params, include_horizon=True) + drift


# ---------------------------------------------------------------- compressed bound

@dataclass(frozen=True)
class CdflBound:
    total: float
    init_term: float
    sigma_term: float
    rest_term: float
    d1: float
    d2: float
    d3: float
    weight_sum: float


def cdfl_bound(params: BoundParams, rounds: int, u0_dist_sq: float) -> CdflBound:
    """Explicit suboptimality bound for the quadratic-weight averaged model.

    Evaluates, at k = K - 1, the finite-horizon form with the three D terms;
    needs a >= 16 kappa, a positive spectral gap, and theta inside its
    admissible interval.  Raises InsufficientCommunicationError when
    (1 + theta)(1 - p)^{tau2} >= 1, where the geometric factor diverges.
    """
    if params.rho <= 0.0:
        raise InfeasibleTopologyError("the compressed bound needs a positive spectral gap")
    kappa = params.kappa
    if params.a < 16.0 * kappa:
        raise InvalidConfigError("a", f"need a >= 16*kappa = {16.0 * kappa}, got {params.a}")
    if rounds < 1:
        raise InvalidConfigError("rounds", "need at least one round")
    theta = params.resolved_theta()
    p = params.p_rate
    decay = (1.0 - p) ** params.tau2
    contraction = (1.0 + theta) * decay
    if contraction >= 1.0:
        raise InsufficientCommunicationError(
            f"(1 + theta)(1 - p)^tau2 = {contraction} >= 1; increase tau2 or the compression ratio"
        )
    # geometric factor (A^k - 1) / (A - 1) at k = K - 1, positive since A < 1
    geo = (contraction ** (rounds - 1) - 1.0) / (contraction - 1.0)

    mu, big_l, g_sq, tau1 = params.mu, params.smooth_l, params.g_sq, params.tau1
    lead = (1.0 + 1.0 / theta) * g_sq * decay * geo
    d1 = 2.0 * big_l * tau1**2 * lead + big_l * tau1**2 * g_sq / 3.0
    d2 = 8.0 * (big_l + mu) * tau1 * lead + 4.0 * (big_l + mu) * tau1 * g_sq / 3.0
    d3 = (big_l + mu) * tau1**4 * lead / 6.0 + (big_l + mu) * tau1**4 * g_sq / 36.0

    ks = np.arange(rounds, dtype=float)
    s_k = float(np.sum((params.a + ks) ** 2))
    init_term = mu * tau1 * params.a**3 / (8.0 * s_k) * u0_dist_sq
    sigma_term = (
        4.0 * rounds * (rounds + 2.0 * params.a) / (mu * s_k) * tau1 * params.sigma_bar_sq / params.n_nodes
    )
    rest_term = (
        64.0
        * rounds
        / (mu**2 * s_k)
        * ((big_l + mu) * params.sigma_bar_sq * tau1 / (3.0 * params.n_nodes) + d1 + d2 + d3)
    )
    return CdflBound(
        total=init_term + sigma_term + rest_term,
        init_term=init_term,
        sigma_term=sigma_term,
        rest_term=rest_term,
        d1=d1,
        d2=d2,
        d3=d3,
        weight_sum=s_k,
    )


# ---------------------------------------------------------------- monotonicity

@dataclass(frozen=True)
class MonotonicityReport:
    rows: tuple  # (axis, point, value_from, value_to, difference, ok)
    violations: int
    zero_differences: int

    def ok(self) -> bool:
        return self.violations == 0


def monotonicity_report(
    base: BoundParams,
    tau1_values,
    tau2_values,
    zeta_values,
) -> MonotonicityReport:
    """Signed finite differences of the bound along each grid axis.

    Expected behaviour: the bound grows with tau1, shrinks with tau2 and
    grows with zeta.  A difference with the opposite strict sign counts as a
    violation; exact zeros (possible at zeta = 0, where tau2 is inert) are
    tallied separately.
    """
    tau1_values = sorted(tau1_values)
    tau2_values = sorted(tau2_values)
    zeta_values = sorted(zeta_values)

    def value(t1, t2, z):
        return dfl_bound(
            replace(base, tau1=int(t1), tau2=int(t2), zeta=float(z)), warn_infeasible=False
        ).total

    rows = []
    violations = 0
    zeros = 0
    axes = (
        ("tau1", tau1_values, +1.0),
        ("tau2", tau2_values, -1.0),
        ("zeta", zeta_values, +1.0),
    )
    for axis, values, want in axes:
        for t1 in tau1_values:
            for t2 in tau2_values:
                for z in zeta_values:
                    coords = {"tau1": t1, "tau2": t2, "zeta": z}
                    idx = values.index(coords[axis])
                    if idx == len(values) - 1:
                        continue
                    lo = value(t1, t2, z)
                    coords[axis] = values[idx + 1]
                    hi = value(coords["tau1"], coords["tau2"], coords["zeta"])
                    diff = hi - lo
                    if diff == 0.0:
                        zeros += 1
                        ok = True
                    else:
                        ok = (diff > 0.0) == (want > 0.0)
                    if not ok:
                        violations += 1
                    rows.append((axis, (t1, t2, z), lo, hi, diff, ok))
    return MonotonicityReport(rows=tuple(rows), violations=violations, zero_differences=zeros)
