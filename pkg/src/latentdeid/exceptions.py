"""Exception types shared across the package."""


class LatentDeidError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(LatentDeidError):
    """Tensors that must be shape-compatible are not."""


class DegenerateInputError(LatentDeidError):
    """An input is numerically degenerate (e.g. zero norm)."""


class DegenerateDirectionError(DegenerateInputError):
    """The edit direction is (numerically) parallel to the latent."""


class NumericalFailureError(LatentDeidError):
    """A non-finite value appeared during computation.

    ``timestep`` carries the diffusion timestep at which the failure was
    detected, or ``None`` when no timestep applies.
    """

    def __init__(self, message: str, timestep: int | None = None):
        super().__init__(message)
        self.timestep = timestep


class ProviderError(LatentDeidError):
    """An auxiliary model call failed; ``provider`` identifies the culprit."""

    def __init__(self, message: str, provider: str):
        super().__init__(f"[{provider}] {message}")
        self.provider = provider


class ConfigError(LatentDeidError):
    """Invalid configuration value or unresolvable configuration key."""
