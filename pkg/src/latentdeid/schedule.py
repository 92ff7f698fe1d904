"""Noise schedule, timestep discretization and the three-phase edit window."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError

# Reverse-process phases, keyed by the source timestep t of each transition:
#   guided injection for t0 >= t > t_edit,
#   plain deterministic denoising for t_edit >= t > t_boost,
#   stochastic quality boost for t_boost >= t > 0.
PHASE_GUIDED = "guided"
PHASE_UNCOND = "uncond"
PHASE_BOOST = "boost"


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the diffusion process.

    ``betas[i]`` is the per-step variance at timestep ``i + 1``;
    ``alphas_cumprod[i]`` the matching cumulative product of ``1 - beta``.
    ``alpha_bar(0)`` is defined as exactly 1 (clean data).
    """

    betas: np.ndarray
    alphas_cumprod: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ConfigError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("every beta must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas_cumprod", np.cumprod(1.0 - betas))

    @classmethod
    def linear(cls, total_steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "NoiseSchedule":
        """Standard linear beta schedule."""
        return cls(np.linspace(beta_start, beta_end, total_steps))

    @property
    def total_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at integer timestep ``t`` (0 = clean)."""
        if not 0 <= t <= self.total_steps:
            raise ConfigError(
                f"timestep {t} outside schedule range [0, {self.total_steps}]"
            )
        if t == 0:
            return 1.0
        return float(self.alphas_cumprod[t - 1])

    def ddim_sigma(self, t: int, t_prev: int) -> float:
        """Noise scale of the eta=1 step from ``t`` down to ``t_prev``.

        sigma_t = sqrt((1 - abar_prev) / (1 - abar_t)) * sqrt(1 - abar_t / abar_prev);
        zero when ``t_prev`` is 0 because abar(0) == 1.
        """
        ab_t = self.alpha_bar(t)
        ab_prev = self.alpha_bar(t_prev)
        return math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(
            1.0 - ab_t / ab_prev
        )


@dataclass(frozen=True)
class EditWindow:
    """Inversion depth and the boundaries of the three reverse phases."""

    t0: int = 600
    t_edit: int = 400
    t_boost: int = 200
    n_denoise: int = 16

    def __post_init__(self):
        if not self.t0 > self.t_edit > self.t_boost > 0:
            raise ConfigError(
                f"edit window must satisfy t0 > t_edit > t_boost > 0, "
                f"got ({self.t0}, {self.t_edit}, {self.t_boost})"
            )
        if self.n_denoise < 3:
            raise ConfigError("n_denoise must be >= 3, one step per phase")

    def phase_of(self, t: int) -> str:
        if t > self.t_edit:
            return PHASE_GUIDED
        if t > self.t_boost:
            return PHASE_UNCOND
        return PHASE_BOOST


def discretize(window: EditWindow, schedule: NoiseSchedule) -> np.ndarray:
    """Uniformly spaced integer timesteps over ``(0, t0]``, ascending.

    Exactly ``n_denoise`` timesteps are visited, the largest being ``t0``.
    Each of the three window phases must contain at least one of them.
    """
    if window.t0 > schedule.total_steps:
        raise ConfigError(
            f"window depth {window.t0} exceeds schedule length "
            f"{schedule.total_steps}"
        )
    n = window.n_denoise
    steps = np.array(
        [int(math.floor(i * window.t0 / n + 0.5)) for i in range(1, n + 1)],
        dtype=np.int64,
    )
    if steps[0] <= 0 or np.any(np.diff(steps) <= 0):
        raise ConfigError(
            f"{n} denoising steps cannot be uniformly placed over (0, {window.t0}]"
        )
    for phase in (PHASE_GUIDED, PHASE_UNCOND, PHASE_BOOST):
        if not any(window.phase_of(int(t)) == phase for t in steps):
            raise ConfigError(
                f"no discretized timestep falls in the {phase} phase of "
                f"window ({window.t0}, {window.t_edit}, {window.t_boost})"
            )
    return steps


def transition_pairs(steps: np.ndarray) -> list[tuple[int, int]]:
    """Reverse transitions ``(t, t_prev)`` visiting ``steps`` from the top down."""
    ts = [int(t) for t in steps]
    return list(zip(reversed(ts), reversed([0] + ts[:-1])))
