class InvalidDistributionError(ValueError):
    """Raised when a score distribution (or its spec string) breaks its invariants."""


class InvalidInstanceError(ValueError):
    """Raised when a selection instance or simulation config is infeasible."""


class InsufficientDataError(ValueError):
    """Raised when an estimator is asked to fit with fewer than 2 observations."""


class UnknownPolicyError(ValueError):
    """Raised when a policy spec string cannot be parsed."""


class CapacityError(RuntimeError):
    """Raised when a decision breaks the position budget (accept without capacity,
    or a round finishing with empty positions). Always a policy bug."""
