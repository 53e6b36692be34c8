"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """A parameter combination is invalid or under-resolved."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class CFLViolation(RuntimeError):
    """The requested time step exceeds the stable step for the current state."""

    def __init__(self, dt, dt_max, step_index=None):
        self.dt = dt
        self.dt_max = dt_max
        self.step_index = step_index
        where = "" if step_index is None else f" at step {step_index}"
        super().__init__(
            f"time step dt={dt:.6g} exceeds stable limit {dt_max:.6g}{where}"
        )


class NegativityError(RuntimeError):
    """Density dropped below the negativity tolerance under the reject policy."""


class MassConservationError(ValueError):
    """A target path does not conserve mass, so no control can produce it."""


class SingularWeightError(RuntimeError):
    """The weighted Poisson solve failed to converge (degenerate weight)."""
