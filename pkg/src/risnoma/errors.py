"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


class DimensionError(ValueError):
    """Array arguments with inconsistent or invalid dimensions."""


class GeometryError(ValueError):
    """Non-positive distances or otherwise invalid geometry."""


class InfeasibleError(RuntimeError):
    """Base class for optimization infeasibility (trial counts as rate 0)."""


class InfeasibleBudgetError(InfeasibleError):
    """Intra-group split needs more power than the group budget provides."""

    def __init__(self, deficit: float):
        super().__init__(f"group budget short by {deficit:.6g} W")
        self.deficit = deficit


class InfeasibleRatesError(InfeasibleError):
    """Minimum rates consume more than the gain structure permits (beta <= 0)."""


class SubproblemInfeasibleError(InfeasibleError):
    """Convex inner subproblem has no strictly feasible point."""


class RetractionSingularityError(ArithmeticError):
    """Retraction hit a zero denominator; the caller should shrink the step."""


class DomainError(ValueError):
    """Argument outside a function's mathematical domain (e.g. log of <= 0)."""
