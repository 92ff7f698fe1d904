"""Deterministic inversion and the guided reverse diffusion process.

The reverse process runs in three phases over a discretized timestep
ladder: bottleneck-injection of the edit direction at high noise, plain
deterministic denoising in the middle, and a stochastic quality boost near
the end.  The boost noise is drawn once per image from a seeded generator
and frozen; the inversion recursion accounts for it, so inverting and then
denoising with a zero direction reproduces the input and the optimization
loss landscape stays deterministic.
"""

from __future__ import annotations

import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch.utils.checkpoint import checkpoint as _torch_checkpoint

from .backends import DenoiserBackend
from .exceptions import ConfigError, NumericalFailureError
from .geometry import linear_edit, tangent_edit
from .imgio import validate_image
from .schedule import (
    PHASE_BOOST,
    PHASE_GUIDED,
    EditWindow,
    NoiseSchedule,
    discretize,
    transition_pairs,
)

MODE_LINEAR = "linear"
MODE_TANGENT = "tangent"

# Active only inside compute_gradient: maps backward non-finite gradients to
# the diffusion timestep whose step output produced them.
_GRAD_TRACE: ContextVar[dict | None] = ContextVar("latentdeid_grad_trace", default=None)


def apply_edit(
    h: torch.Tensor, direction: torch.Tensor, mode: str, strength: float
) -> torch.Tensor:
    """Edit one bottleneck activation with the shared direction."""
    if mode == MODE_LINEAR:
        return linear_edit(h, direction, strength)
    if mode == MODE_TANGENT:
        # Tangent traversal carries its magnitude in ||direction||; the
        # linear strength parameter is deliberately not consulted.
        return tangent_edit(h, direction)
    raise ConfigError(f"unknown edit mode {mode!r}; expected 'linear' or 'tangent'")


@dataclass(eq=False)
class LatentState:
    """Output of :func:`ddim_invert`: everything the reverse process needs.

    ``bottlenecks`` holds the unedited activation recorded at every visited
    timestep; ``boost_noise`` the frozen stochastic-phase noise keyed by the
    source timestep of each reverse transition.
    """

    x_t0: torch.Tensor
    bottlenecks: dict[int, torch.Tensor]
    boost_noise: dict[int, torch.Tensor]
    timesteps: np.ndarray
    window: EditWindow
    schedule: NoiseSchedule
    seed: int
    source: torch.Tensor = field(repr=False, default=None)

    @property
    def latent(self) -> torch.Tensor:
        """The deepest recorded bottleneck activation (the editable latent)."""
        return self.bottlenecks[int(self.timesteps[-1])]


def _check_finite(x: torch.Tensor, t: int) -> None:
    if not torch.isfinite(x.detach()).all():
        raise NumericalFailureError(
            f"non-finite values produced at timestep {t}", timestep=t
        )


def _sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    return eta * schedule.ddim_sigma(t, t_prev) if eta > 0 else 0.0


def reverse_step(
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    backend: DenoiserBackend,
    direction: torch.Tensor | None = None,
    mode: str = MODE_LINEAR,
    strength: float = 1.0,
    eta: float = 0.0,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One asymmetric reverse transition from ``t`` down to ``t_prev``.

    The predicted-clean-image term uses the guided noise estimate (with the
    bottleneck edited by ``direction``) while the direction-to-x_t term uses
    the unconditional estimate.  With ``eta=1`` the DDPM-posterior-scale
    noise is added, taken from ``noise`` or drawn from ``generator``; global
    RNG is never consulted.
    """
    if not t > t_prev >= 0:
        raise ConfigError(f"reverse step needs t > t_prev >= 0, got {t} -> {t_prev}")
    eps_uncond, h = backend.predict(x_t, t)
    if direction is not None:
        eps_guided = backend.predict_injected(x_t, t, apply_edit(h, direction, mode, strength))
    else:
        eps_guided = eps_uncond

    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    sigma = _sigma(schedule, t, t_prev, eta)

    pred_x0 = (x_t - math.sqrt(1.0 - ab_t) * eps_guided) / math.sqrt(ab_t)
    x_prev = math.sqrt(ab_prev) * pred_x0
    x_prev = x_prev + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_uncond
    if sigma > 0:
        if noise is None:
            if generator is None:
                raise ConfigError(
                    "stochastic reverse step requires explicit noise or a seeded generator"
                )
            noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
        x_prev = x_prev + sigma * noise
    return x_prev


def _invert_step(
    x_prev: torch.Tensor,
    t_prev: int,
    t: int,
    schedule: NoiseSchedule,
    backend: DenoiserBackend,
    sigma: float,
    noise: torch.Tensor | None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Invert the reverse transition ``t -> t_prev``, returning (x_t, h_at_t_prev).

    Uses the standard DDIM local approximation eps(x_t, t) ~ eps(x_prev, t_prev)
    and subtracts the known frozen noise before inverting stochastic steps.
    """
    eps, h_prev = backend.predict(x_prev, t_prev)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    residual = x_prev
    if sigma > 0:
        residual = residual - sigma * noise
    pred_x0 = (residual - math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps) / math.sqrt(
        ab_prev
    )
    x_t = math.sqrt(ab_t) * pred_x0 + math.sqrt(1.0 - ab_t) * eps
    return x_t, h_prev


def _frozen_boost_noise(
    steps: np.ndarray,
    window: EditWindow,
    shape: torch.Size,
    dtype: torch.dtype,
    seed: int,
) -> dict[int, torch.Tensor]:
    """Draw the eta=1 phase noise once, in ascending-timestep order."""
    g = torch.Generator().manual_seed(seed)
    out: dict[int, torch.Tensor] = {}
    for t, t_prev in sorted(transition_pairs(steps), key=lambda p: p[0]):
        if window.phase_of(t) == PHASE_BOOST and t_prev > 0:
            out[t] = torch.randn(shape, generator=g, dtype=dtype)
    return out


def ddim_invert(
    x: torch.Tensor,
    schedule: NoiseSchedule,
    window: EditWindow,
    backend: DenoiserBackend,
    seed: int = 1006,
) -> LatentState:
    """Map an image to its noised state at ``window.t0``.

    Runs the deterministic DDIM recursion upward over the discretized
    timesteps, recording the bottleneck activation at every visited step.
    The frozen boost-phase noise is drawn here (seeded) and folded into the
    recursion so that :func:`denoise_with_edit` with a zero direction
    reconstructs ``x``.
    """
    validate_image(x)
    steps = discretize(window, schedule)
    x_cur = x.detach()
    noise = _frozen_boost_noise(steps, window, x_cur.shape, x_cur.dtype, seed)

    bottlenecks: dict[int, torch.Tensor] = {}
    visited = {int(t) for t in steps}
    with torch.no_grad():
        t_prev = 0
        for t in (int(t) for t in steps):
            eta = 1.0 if window.phase_of(t) == PHASE_BOOST else 0.0
            sigma = _sigma(schedule, t, t_prev, eta)
            x_cur, h_prev = _invert_step(
                x_cur, t_prev, t, schedule, backend, sigma, noise.get(t)
            )
            if t_prev in visited:
                bottlenecks[t_prev] = h_prev
            _check_finite(x_cur, t)
            t_prev = t
        _, bottlenecks[t_prev] = backend.predict(x_cur, t_prev)

    return LatentState(
        x_t0=x_cur,
        bottlenecks=bottlenecks,
        boost_noise=noise,
        timesteps=steps,
        window=window,
        schedule=schedule,
        seed=seed,
        source=x.detach(),
    )


def _same_schedule(a: NoiseSchedule, b: NoiseSchedule) -> bool:
    return a is b or np.array_equal(a.betas, b.betas)


def denoise_with_edit(
    state: LatentState,
    backend: DenoiserBackend,
    direction: torch.Tensor | None = None,
    mode: str = MODE_LINEAR,
    strength: float = 1.0,
    window: EditWindow | None = None,
    schedule: NoiseSchedule | None = None,
    use_checkpoint: bool = False,
) -> torch.Tensor:
    """Decode a latent state back to an image, injecting the edit direction.

    Phases over the discretized ladder, by source timestep t:
    guided injection for ``t0 >= t > t_edit`` (every visited bottleneck is
    edited with the shared ``direction``), deterministic denoising for
    ``t_edit >= t > t_boost``, and the frozen-noise stochastic boost for
    ``t_boost >= t > 0``.  The output is clamped to ``[-1, 1]``.

    With ``use_checkpoint=True`` each transition is recomputed during
    backpropagation instead of storing its intermediates.
    """
    if window is not None and window != state.window:
        raise ConfigError("window differs from the one used at inversion")
    if schedule is not None and not _same_schedule(schedule, state.schedule):
        raise ConfigError("schedule differs from the one used at inversion")
    window = state.window
    schedule = state.schedule

    trace = _GRAD_TRACE.get()
    x = state.x_t0
    for t, t_prev in transition_pairs(state.timesteps):
        phase = window.phase_of(t)
        guided = phase == PHASE_GUIDED and direction is not None
        eta = 1.0 if phase == PHASE_BOOST else 0.0
        frozen = state.boost_noise.get(t)

        def step(x_t, dh=None, t=t, t_prev=t_prev, eta=eta, frozen=frozen):
            return reverse_step(
                x_t, t, t_prev, schedule, backend,
                direction=dh, mode=mode, strength=strength,
                eta=eta, noise=frozen,
            )

        inputs = (x, direction) if guided else (x,)
        wants_grad = torch.is_grad_enabled() and any(
            isinstance(i, torch.Tensor) and i.requires_grad for i in inputs
        )
        if use_checkpoint and wants_grad:
            x = _torch_checkpoint(step, *inputs, use_reentrant=False)
        else:
            x = step(*inputs)
        _check_finite(x, t)
        if trace is not None and x.requires_grad:
            x.register_hook(_make_trace_hook(trace, t))
    return torch.clamp(x, -1.0, 1.0)


def _make_trace_hook(trace: dict, t: int) -> Callable[[torch.Tensor], None]:
    def hook(grad: torch.Tensor) -> None:
        if not torch.isfinite(grad).all():
            trace.setdefault("bad", []).append(t)

    return hook


def compute_gradient(
    loss_value_fn: Callable[[torch.Tensor], torch.Tensor],
    direction: torch.Tensor,
) -> torch.Tensor:
    """Gradient of an end-to-end loss with respect to the edit direction.

    ``loss_value_fn`` must map the passed direction tensor to a scalar loss
    through the differentiable decode (checkpointed or not; both produce
    the same gradient).  A fresh leaf is used, so ``direction`` itself is
    never modified.
    """
    leaf = direction.detach().clone().requires_grad_(True)
    token = _GRAD_TRACE.set({})
    try:
        loss = loss_value_fn(leaf)
        if not torch.isfinite(loss.detach()).all():
            raise NumericalFailureError("loss value is non-finite")
        (grad,) = torch.autograd.grad(loss, leaf)
        trace = _GRAD_TRACE.get()
    finally:
        _GRAD_TRACE.reset(token)
    if not torch.isfinite(grad).all():
        bad = trace.get("bad", [])
        at = f" (first detected at timestep {bad[0]})" if bad else ""
        raise NumericalFailureError(
            f"non-finite gradient entries{at}",
            timestep=bad[0] if bad else None,
        )
    return grad
