"""Exception types shared across the simulator."""


class DflsimError(Exception):
    """Base class for all errors raised by this package."""


class InvalidTopologyError(DflsimError):
    """Topology construction or validation failed."""


class NumericError(DflsimError):
    """A numerical routine (eigensolver, linear solve) failed."""


class ShapeMismatchError(DflsimError):
    """Operands have incompatible dimensions."""


class InvalidBatchError(DflsimError):
    """Empty batch or out-of-range sample indices."""


class InvalidPartitionError(DflsimError):
    """A data partition request cannot be satisfied."""


class InvalidOperatorError(DflsimError):
    """Compression operator parameters out of range."""


class InvalidConfigError(DflsimError):
    """Bad experiment configuration; carries the offending key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DivergenceError(DflsimError):
    """Loss became non-finite or exceeded the guard; carries the step index."""

    def __init__(self, step, message="run diverged"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class InfeasibleTopologyError(DflsimError):
    """A bound is undefined for this spectrum (no spectral gap)."""


class InsufficientCommunicationError(DflsimError):
    """The compressed-gossip bound diverges; raise tau2 or the compression ratio."""


class UnsupportedObjectiveError(DflsimError):
    """The algorithm needs strong convexity the objective does not provide."""


class ComparisonError(DflsimError):
    """Run records are not comparable (different objective or topology)."""
