"""The direction-optimization loop.

Per image: invert once, cache the source-side quantities (identity
embedding, attribute distribution, face mask), then run plain gradient
descent on the shared edit direction through the differentiable decode.
Every step logs the loss breakdown and direction norm; the returned image
is the decode from the final iteration (i.e. of the direction *before* its
last update, so a one-step run returns the decode of the initialization).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import torch

from .backends import DenoiserBackend
from .diffusion import (
    MODE_LINEAR,
    MODE_TANGENT,
    LatentState,
    apply_edit,
    compute_gradient,
    ddim_invert,
    denoise_with_edit,
)
from .exceptions import (
    ConfigError,
    DegenerateDirectionError,
    DegenerateInputError,
    NumericalFailureError,
)
from .geometry import tangent_project
from .losses import LossWeights, attribute_index, clamp_probs, total_loss
from .providers import ProviderBundle
from .schedule import PHASE_GUIDED, EditWindow, NoiseSchedule

DEGENERATE_RESEED_NORM = 1e-4


@dataclass(frozen=True)
class OptimizationConfig:
    """Inputs of the descent loop; defaults follow the reported settings."""

    mode: str = MODE_LINEAR
    lr: float = 0.001
    strength: float = 1000.0
    n_opt: int = 50
    init_norm: float = 0.1
    seed: int = 1006
    weights: LossWeights = LossWeights()
    window: EditWindow = EditWindow()
    bernoulli_attr: bool = False
    use_checkpoint: bool = False
    attribute_targets: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (MODE_LINEAR, MODE_TANGENT):
            raise ConfigError(f"mode must be 'linear' or 'tangent', got {self.mode!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.n_opt < 1:
            raise ConfigError(f"n_opt must be >= 1, got {self.n_opt}")
        if not self.init_norm > 0:
            raise ConfigError(f"init_norm must be > 0, got {self.init_norm}")


@dataclass
class StepRecord:
    step: int
    total: float
    loss_id: float
    loss_attr: float
    loss_mask: float
    direction_norm: float


CSV_HEADER = "step,total,loss_id,loss_attr,loss_mask,direction_norm"


@dataclass
class TrajectoryLog:
    """Per-step loss records plus optional flattened edited-latent snapshots."""

    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.records:
            buf.write(
                f"{r.step},{r.total!r},{r.loss_id!r},{r.loss_attr!r},"
                f"{r.loss_mask!r},{r.direction_norm!r}\n"
            )
        return buf.getvalue()

    def snapshot_array(self) -> np.ndarray:
        if not self.snapshots:
            raise ValueError("no latent snapshots were recorded")
        return np.stack(self.snapshots)


def initialize_direction(
    shape: tuple[int, ...], m: float = 0.1, seed: int = 1006
) -> torch.Tensor:
    """Standard-normal draw rescaled so its flattened L2 norm equals m."""
    if not m > 0:
        raise ConfigError(f"init norm must be > 0, got {m}")
    g = torch.Generator().manual_seed(seed)
    v = torch.randn(shape, generator=g, dtype=torch.float64)
    norm = torch.linalg.vector_norm(v.reshape(-1))
    if float(norm) == 0.0:
        raise DegenerateInputError("degenerate zero initialization draw")
    return v * (m / norm)


def set_attribute_targets(
    base: torch.Tensor, overrides: dict[str, float]
) -> torch.Tensor:
    """Copy of the source attribute distribution with named entries replaced."""
    out = base.clone()
    for name, value in overrides.items():
        if not 0.0 < float(value) < 1.0:
            raise ConfigError(
                f"attribute target for {name!r} must lie in (0, 1), got {value}"
            )
        out[attribute_index(name)] = float(value)
    return out


def _guided_bottlenecks(state: LatentState) -> list[torch.Tensor]:
    return [
        state.bottlenecks[int(t)]
        for t in state.timesteps
        if state.window.phase_of(int(t)) == PHASE_GUIDED
    ]


def _reseed_degenerate(
    dh: torch.Tensor, state: LatentState, seed: int, log: TrajectoryLog, step: int
) -> torch.Tensor:
    """Nudge a direction that is parallel to some guided latent.

    Adds a small seeded random component (norm 1e-4) until every guided-step
    projection is well-defined; the event is recorded in the log.
    """
    guided = _guided_bottlenecks(state)
    for attempt in range(8):
        try:
            for z in guided:
                tangent_project(z, dh)
            return dh
        except DegenerateDirectionError:
            bump = initialize_direction(
                tuple(dh.shape), DEGENERATE_RESEED_NORM, seed + 7919 * (attempt + 1)
            )
            dh = dh + bump
            log.events.append(
                f"step {step}: degenerate tangent direction re-randomized "
                f"(attempt {attempt + 1}, bump norm {DEGENERATE_RESEED_NORM})"
            )
    raise NumericalFailureError(
        f"step {step}: direction remained parallel to a guided latent after reseeding"
    )


def optimize(
    x: torch.Tensor,
    config: OptimizationConfig,
    backend: DenoiserBackend,
    providers: ProviderBundle,
    schedule: NoiseSchedule | None = None,
    record_latents: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, TrajectoryLog]:
    """Run the full loop on one image.

    Returns the de-identified image (clamped to [-1, 1]), the final
    direction, and the trajectory log with exactly ``config.n_opt`` records.
    Deterministic: the same (image, config, backend, providers) always
    yields bit-identical outputs.
    """
    if schedule is None:
        schedule = NoiseSchedule.linear()
    state = ddim_invert(x, schedule, config.window, backend, seed=config.seed)

    with torch.no_grad():
        f_src = providers.embedder.embed(x).detach()
        a_src = providers.attributes.predict(x).detach()
        mask = providers.parser.parse(x).detach()
    a_target = set_attribute_targets(a_src, config.attribute_targets)
    # The KL target must be a usable distribution even if the predictor
    # saturates; clamp once here so per-step losses share the exact target.
    a_target = clamp_probs(a_target)

    dh = initialize_direction(backend.h_shape, config.init_norm, config.seed)
    log = TrajectoryLog()
    x_hat = None

    for step in range(config.n_opt):
        if config.mode == MODE_TANGENT:
            dh = _reseed_degenerate(dh, state, config.seed + step, log, step)

        captured: dict = {}

        def loss_fn(leaf: torch.Tensor) -> torch.Tensor:
            decoded = denoise_with_edit(
                state,
                backend,
                direction=leaf,
                mode=config.mode,
                strength=config.strength,
                use_checkpoint=config.use_checkpoint,
            )
            f_gen = providers.embedder.embed(decoded)
            a_gen = providers.attributes.predict(decoded)
            total, breakdown = total_loss(
                x, decoded, f_src, f_gen, a_target, a_gen, mask,
                weights=config.weights, bernoulli=config.bernoulli_attr,
            )
            captured["x_hat"] = decoded.detach()
            captured["breakdown"] = breakdown
            return total

        try:
            grad = compute_gradient(loss_fn, dh)
        except NumericalFailureError as e:
            last = captured.get("breakdown")
            detail = f"; last breakdown: {last}" if last else ""
            raise NumericalFailureError(
                f"optimization aborted at step {step}: {e}{detail}",
                timestep=e.timestep,
            ) from e

        b = captured["breakdown"]
        log.records.append(
            StepRecord(
                step=step,
                total=b["total"],
                loss_id=b["identity"],
                loss_attr=b["attribute"],
                loss_mask=b["mask"],
                direction_norm=float(torch.linalg.vector_norm(dh.reshape(-1))),
            )
        )
        if record_latents:
            with torch.no_grad():
                edited = apply_edit(state.latent, dh, config.mode, config.strength)
            log.snapshots.append(
                edited.reshape(-1).numpy().astype(np.float64, copy=True)
            )
        x_hat = captured["x_hat"]
        dh = dh - config.lr * grad

    return x_hat, dh, log
