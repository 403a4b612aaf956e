"""Desk-scale decentralized SGD with periodic gossip and compressed communication."""

from .topology import (
    MixingMatrix,
    SpectralSummary,
    build_complete,
    build_identity,
    build_quasi_ring,
    build_ring,
    build_ring_groups,
    from_adjacency,
    power_gap_norm,
    spectral,
    validate,
)
from .objective import (
    Dataset,
    GlobalObjective,
    LogisticLocal,
    PartitionSpec,
    QuadraticLocal,
    make_blobs_dataset,
    make_global,
    make_logistic_objective,
    make_quadratic_objective,
    partition,
    quadratic_optimum,
    reference_minimum,
    stochastic_gradient,
    variance_estimates,
)
from .engine import (
    Schedule,
    TrajectoryMetrics,
    gossip_step,
    local_update_step,
    order_equivalence_check,
    run_csgd,
    run_dfl,
    run_dsgd,
)
from .compression import (
    CdflConfig,
    ChocoState,
    Identity,
    LrLaw,
    Qsgd,
    RandK,
    RandomizedGossip,
    TopK,
    choco_consensus_step_size,
    choco_gossip_step,
    choco_rate,
    empirical_contraction,
    parse_operator,
    run_cdfl,
    weighted_round_average,
)
from .analysis import (
    BoundParams,
    cdfl_bound,
    dfl_bound,
    dfl_bound_asymptotic,
    full_averaging_bound,
    lr_feasible,
    lr_feasible_strict,
    monotonicity_report,
    zero_zeta_bound,
)
from .rng import seed_stream

__version__ = "0.1.0"
