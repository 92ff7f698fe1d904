"""Reverse-process engine tests.

The core check re-implements the inversion and guided-decode recursions
from scratch (plain loops over the closed-form update equations) and
requires the engine to match at near machine precision, for both the
unedited and the injected path.
"""

import math

import numpy as np
import pytest
import torch

from latentdeid import (
    ConfigError,
    EditWindow,
    NoiseSchedule,
    NumericalFailureError,
    ToyDenoiser,
    compute_gradient,
    ddim_invert,
    denoise_with_edit,
    initialize_direction,
    reverse_step,
)


def _ladder(window):
    n = window.n_denoise
    return [int(math.floor(i * window.t0 / n + 0.5)) for i in range(1, n + 1)]


def _abar(schedule):
    return np.concatenate([[1.0], np.cumprod(1.0 - schedule.betas)])


def _sigma(abar, t, t_prev):
    if t_prev == 0:
        return 0.0
    return math.sqrt((1 - abar[t_prev]) / (1 - abar[t])) * math.sqrt(
        1 - abar[t] / abar[t_prev]
    )


def reference_run(x, schedule, window, backend, seed, direction=None, strength=1000.0):
    """Independent re-implementation of invert + guided decode."""
    abar = _abar(schedule)
    steps = _ladder(window)
    pairs = list(zip(steps, [0] + steps[:-1]))  # ascending (t, t_prev)

    g = torch.Generator().manual_seed(seed)
    frozen = {}
    for t, tp in pairs:
        if t <= window.t_boost and tp > 0:
            frozen[t] = torch.randn(x.shape, generator=g, dtype=x.dtype)

    cur = x.clone()
    for t, tp in pairs:
        eps, _ = backend.predict(cur, tp)
        s = _sigma(abar, t, tp) if t <= window.t_boost else 0.0
        resid = cur - s * frozen.get(t, 0) if s > 0 else cur
        x0 = (resid - math.sqrt(max(1 - abar[tp] - s * s, 0.0)) * eps) / math.sqrt(abar[tp])
        cur = math.sqrt(abar[t]) * x0 + math.sqrt(1 - abar[t]) * eps
    x_t0 = cur.clone()

    for t, tp in reversed(pairs):
        eps_u, h = backend.predict(cur, t)
        if direction is not None and t > window.t_edit:
            eps_g = backend.predict_injected(cur, t, h + strength * direction)
        else:
            eps_g = eps_u
        s = _sigma(abar, t, tp) if t <= window.t_boost else 0.0
        x0 = (cur - math.sqrt(1 - abar[t]) * eps_g) / math.sqrt(abar[t])
        cur = math.sqrt(abar[tp]) * x0 + math.sqrt(max(1 - abar[tp] - s * s, 0.0)) * eps_u
        if s > 0:
            cur = cur + s * frozen[t]
    return x_t0, torch.clamp(cur, -1.0, 1.0)


class CountingBackend:
    """Delegating wrapper that records every injected-bottleneck call."""

    def __init__(self, inner):
        self.inner = inner
        self.injected_at = []

    @property
    def h_shape(self):
        return self.inner.h_shape

    def predict(self, x_t, t):
        return self.inner.predict(x_t, t)

    def predict_injected(self, x_t, t, h_override):
        self.injected_at.append(t)
        return self.inner.predict_injected(x_t, t, h_override)


class PoisonBackend(CountingBackend):
    def __init__(self, inner, poison_t):
        super().__init__(inner)
        self.poison_t = poison_t

    def predict(self, x_t, t):
        eps, h = self.inner.predict(x_t, t)
        if t == self.poison_t:
            eps = eps * float("nan")
        return eps, h


def test_engine_matches_reference_unedited(image32, schedule, window8, backend):
    state = ddim_invert(image32, schedule, window8, backend, seed=1006)
    out = denoise_with_edit(state, backend)
    ref_x_t0, ref_out = reference_run(image32, schedule, window8, backend, seed=1006)
    assert float((state.x_t0 - ref_x_t0).abs().max()) < 1e-12
    assert float((out - ref_out).abs().max()) < 1e-12


def test_engine_matches_reference_with_injection(image32, schedule, window8, backend):
    direction = initialize_direction(backend.h_shape, 0.1, 77)
    state = ddim_invert(image32, schedule, window8, backend, seed=1006)
    out = denoise_with_edit(state, backend, direction=direction, strength=1000.0)
    _, ref_out = reference_run(
        image32, schedule, window8, backend, seed=1006,
        direction=direction, strength=1000.0,
    )
    assert float((out - ref_out).abs().max()) < 1e-12


def test_invert_then_decode_reconstructs(image32, schedule, backend):
    for window in (EditWindow(n_denoise=8), EditWindow()):
        state = ddim_invert(image32, schedule, window, backend, seed=1006)
        recon = denoise_with_edit(state, backend)
        assert float((recon - image32).abs().max()) < 1e-4


def test_zero_backend_roundtrip_is_exact(image32, schedule, window16):
    backend = ToyDenoiser.zero(image_size=(32, 32))
    state = ddim_invert(image32, schedule, window16, backend, seed=5)
    recon = denoise_with_edit(state, backend)
    assert float((recon - image32).abs().max()) < 1e-12


def test_frozen_noise_is_seeded(image32, schedule, window8, backend):
    a = ddim_invert(image32, schedule, window8, backend, seed=1)
    b = ddim_invert(image32, schedule, window8, backend, seed=1)
    c = ddim_invert(image32, schedule, window8, backend, seed=2)
    assert torch.equal(a.x_t0, b.x_t0)
    assert sorted(a.boost_noise) == sorted(b.boost_noise)
    for t in a.boost_noise:
        assert torch.equal(a.boost_noise[t], b.boost_noise[t])
    assert any(not torch.equal(a.boost_noise[t], c.boost_noise[t]) for t in a.boost_noise)


def test_boost_noise_keys_are_boost_sources(state8, window8):
    # sources of stochastic transitions, excluding the final step to t=0
    assert sorted(state8.boost_noise) == [150]
    assert all(window8.phase_of(t) == "boost" for t in state8.boost_noise)


def test_state_records_bottlenecks_at_every_visited_step(state8):
    assert sorted(state8.bottlenecks) == state8.timesteps.tolist()
    assert torch.equal(state8.latent, state8.bottlenecks[600])


def test_decode_is_repeatable(state8, backend):
    assert torch.equal(
        denoise_with_edit(state8, backend), denoise_with_edit(state8, backend)
    )


def test_injection_happens_only_in_guided_phase(image32, schedule, window8, backend):
    counting = CountingBackend(backend)
    state = ddim_invert(image32, schedule, window8, counting, seed=1006)
    assert counting.injected_at == []  # inversion never injects

    direction = initialize_direction(backend.h_shape, 0.1, 7)
    denoise_with_edit(state, counting, direction=direction)
    assert sorted(counting.injected_at) == [450, 525, 600]

    counting.injected_at.clear()
    denoise_with_edit(state, counting)  # no direction, no injection
    assert counting.injected_at == []


def test_reverse_step_matches_hand_formula(image32, schedule, backend):
    t, tp = 600, 563
    eps, _ = backend.predict(image32, t)
    ab_t, ab_p = schedule.alpha_bar(t), schedule.alpha_bar(tp)
    expected = (
        math.sqrt(ab_p) * (image32 - math.sqrt(1 - ab_t) * eps) / math.sqrt(ab_t)
        + math.sqrt(1 - ab_p) * eps
    )
    got = reverse_step(image32, t, tp, schedule, backend)
    assert float((got - expected).abs().max()) < 1e-12


def test_reverse_step_stochastic_needs_noise_source(image32, schedule, backend):
    with pytest.raises(ConfigError, match="noise"):
        reverse_step(image32, 150, 75, schedule, backend, eta=1.0)
    n = torch.zeros_like(image32)
    a = reverse_step(image32, 150, 75, schedule, backend, eta=1.0, noise=n)
    g = torch.Generator().manual_seed(0)
    b = reverse_step(image32, 150, 75, schedule, backend, eta=1.0, generator=g)
    sigma = schedule.ddim_sigma(150, 75)
    assert sigma > 0
    assert not torch.equal(a, b)


def test_reverse_step_rejects_bad_timesteps(image32, schedule, backend):
    with pytest.raises(ConfigError):
        reverse_step(image32, 100, 100, schedule, backend)
    with pytest.raises(ConfigError):
        reverse_step(image32, 100, -1, schedule, backend)


def test_denoise_validates_window_and_schedule(state8, backend, schedule):
    with pytest.raises(ConfigError, match="window"):
        denoise_with_edit(state8, backend, window=EditWindow())
    with pytest.raises(ConfigError, match="schedule"):
        denoise_with_edit(state8, backend, schedule=NoiseSchedule.linear(total_steps=900))
    # a distinct but numerically identical schedule is accepted
    same = NoiseSchedule.linear()
    assert same is not schedule
    denoise_with_edit(state8, backend, schedule=same)


def test_output_clamped(state8, backend):
    big = torch.ones(backend.h_shape, dtype=torch.float64)
    out = denoise_with_edit(state8, backend, direction=big, strength=1000.0)
    assert float(out.max()) <= 1.0
    assert float(out.min()) >= -1.0
    assert float(out.abs().max()) == 1.0  # the edit is strong enough to saturate


def test_nonfinite_step_reports_timestep(image32, schedule, window8, backend):
    poisoned = PoisonBackend(backend, poison_t=225)
    state = ddim_invert(image32, schedule, window8, backend, seed=1006)
    with pytest.raises(NumericalFailureError, match="225") as exc:
        denoise_with_edit(state, poisoned)
    assert exc.value.timestep == 225


def test_invert_rejects_bad_images(schedule, window8, backend):
    bad = torch.full((32, 32, 3), float("nan"), dtype=torch.float64)
    with pytest.raises(ValueError):
        ddim_invert(bad, schedule, window8, backend)
    with pytest.raises(ValueError):
        ddim_invert(torch.full((32, 32, 3), 2.0, dtype=torch.float64),
                    schedule, window8, backend)


def test_gradient_checkpointing_matches_stored_graph(image32, state8, backend, providers):
    f_src = providers.embedder.embed(image32)

    def loss(ckpt):
        def fn(dh):
            xh = denoise_with_edit(
                state8, backend, direction=dh, strength=1000.0, use_checkpoint=ckpt
            )
            return torch.exp(-torch.linalg.vector_norm(f_src - providers.embedder.embed(xh)))
        return fn

    dh = initialize_direction(backend.h_shape, 0.1, 1006)
    g_stored = compute_gradient(loss(False), dh)
    g_ckpt = compute_gradient(loss(True), dh)
    assert float((g_stored - g_ckpt).abs().max()) <= 1e-6


def test_compute_gradient_leaves_input_untouched(state8, backend):
    dh = initialize_direction(backend.h_shape, 0.1, 3)
    snapshot = dh.clone()

    def fn(leaf):
        xh = denoise_with_edit(state8, backend, direction=leaf, strength=1000.0)
        return xh.sum()

    grad = compute_gradient(fn, dh)
    assert torch.equal(dh, snapshot)
    assert not dh.requires_grad
    assert torch.isfinite(grad).all()


def test_nonfinite_loss_raises(state8, backend):
    def fn(leaf):
        return leaf.sum() * float("inf")

    with pytest.raises(NumericalFailureError, match="loss"):
        compute_gradient(fn, torch.ones(4, 4, 4, dtype=torch.float64))


def test_nonfinite_gradient_blames_a_timestep(state8, backend):
    # d(sqrt(u))/du at u=0 is infinite, so every upstream step receives a
    # non-finite gradient; the first one met on the way back is the final
    # reverse transition, whose source is the smallest visited timestep.
    def fn(dh):
        xh = denoise_with_edit(state8, backend, direction=dh, strength=1000.0)
        return torch.sqrt((xh - xh.detach()).abs().sum())

    dh = initialize_direction(backend.h_shape, 0.1, 9)
    with pytest.raises(NumericalFailureError) as exc:
        compute_gradient(fn, dh)
    assert exc.value.timestep == 75
