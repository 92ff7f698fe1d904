"""Denoiser backends: the adapter contract plus an analytic toy implementation.

Images are ``(H, W, 3)`` tensors in ``[-1, 1]``; the bottleneck activation
("h") is a ``(C, H', W')`` tensor whose shape is a property of the backend,
constant across timesteps.

Adapter contract
----------------
A backend wraps one pretrained noise predictor and must provide:

``h_shape``
    Shape of the bottleneck activation tensor.
``predict(x_t, t) -> (eps, h)``
    Noise prediction at timestep ``t`` together with the bottleneck
    activation produced by that same forward pass.  Must be deterministic:
    identical inputs give identical outputs.
``predict_injected(x_t, t, h_override) -> eps``
    The same forward pass with the bottleneck replaced by ``h_override``.
    Must be differentiable with respect to ``h_override``, and must agree
    with ``predict`` when ``h_override`` equals the natural activation.

Checkpoint loading and preprocessing for real pretrained models belong to
the adapter, not to this module.  A backend instance serves one
optimization at a time; run independent images on independent instances.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F


@runtime_checkable
class DenoiserBackend(Protocol):
    """Structural interface every denoiser adapter must satisfy."""

    @property
    def h_shape(self) -> tuple[int, ...]: ...

    def predict(self, x_t: torch.Tensor, t: int) -> tuple[torch.Tensor, torch.Tensor]: ...

    def predict_injected(
        self, x_t: torch.Tensor, t: int, h_override: torch.Tensor
    ) -> torch.Tensor: ...


class ToyDenoiser:
    """Analytic stand-in for a pretrained U-Net, affine in both inputs.

    The bottleneck is an average-pooled, channel-mixed view of the image
    shifted by a fixed base activation; the noise prediction combines a
    fixed base noise, a weak direct coupling to the image, and a decoded
    contribution of the (possibly injected) bottleneck:

        h(x)        = h_base + h_sensitivity * mix(pool(x))
        eps(x, h)   = base_noise + x_coupling * x
                      + decode_scale * window * up(unmix(h))

    ``window`` is a fixed soft central ellipse, so bottleneck edits act
    mostly on the face region — as they do in a real face model — which
    keeps the background-preservation loss informative rather than
    saturating on whole-image shifts.

    All parameters are drawn once from ``seed``; the instance is stateless
    afterwards and safe for concurrent read-only use.  The default coupling
    scales keep the unguided process nearly self-inverse (DDIM round trips
    close to machine precision) while injected bottleneck edits still move
    the output visibly.
    """

    def __init__(
        self,
        image_size: tuple[int, int] = (32, 32),
        h_shape: tuple[int, int, int] = (4, 4, 4),
        seed: int = 7,
        base_scale: float = 0.1,
        x_coupling: float = 1e-5,
        h_sensitivity: float = 1e-3,
        decode_scale: float = 2e-4,
        h_base_norm: float = 25.0,
    ):
        self.image_size = tuple(image_size)
        self._h_shape = tuple(h_shape)
        self.seed = seed
        self.x_coupling = x_coupling
        self.h_sensitivity = h_sensitivity
        self.decode_scale = decode_scale

        hc = h_shape[0]
        g = torch.Generator().manual_seed(seed)
        dbl = dict(dtype=torch.float64)
        self.base_noise = base_scale * torch.randn(*image_size, 3, generator=g, **dbl)
        h_base = torch.randn(*h_shape, generator=g, **dbl)
        self.h_base = h_base * (h_base_norm / torch.linalg.vector_norm(h_base))
        self.mix = torch.randn(hc, 3, generator=g, **dbl) / 3.0**0.5
        self.unmix = torch.randn(3, hc, generator=g, **dbl) / hc**0.5

        # Strictly inside the parser's face ellipse, so edits mostly act on
        # the face; the small floor leaks a uniform trace into the
        # background, keeping the background loss smooth around the
        # operating point instead of pinned to its kink at zero.
        ys = torch.linspace(-1.0, 1.0, self.image_size[0], **dbl)
        xs = torch.linspace(-1.0, 1.0, self.image_size[1], **dbl)
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        d = (yy / 0.55) ** 2 + (xx / 0.42) ** 2
        self.spatial_window = 0.02 + 0.98 * torch.sigmoid((1.0 - d) * 8.0)

    @property
    def h_shape(self) -> tuple[int, ...]:
        return self._h_shape

    def _pool(self, x: torch.Tensor) -> torch.Tensor:
        # (H, W, 3) -> (hC, hH, hW)
        chw = x.permute(2, 0, 1).unsqueeze(0)
        pooled = F.adaptive_avg_pool2d(chw, self._h_shape[1:]).squeeze(0)
        return torch.einsum("kc,chw->khw", self.mix.to(x.dtype), pooled)

    def _decode(self, h: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
        # (hC, hH, hW) -> (H, W, 3), attenuated outside the central ellipse
        rgb = torch.einsum("ck,khw->chw", self.unmix.to(dtype), h.to(dtype))
        up = F.interpolate(rgb.unsqueeze(0), size=self.image_size, mode="nearest")
        windowed = up.squeeze(0).permute(1, 2, 0) * self.spatial_window.to(dtype)[..., None]
        return self.decode_scale * windowed

    def bottleneck(self, x_t: torch.Tensor) -> torch.Tensor:
        return self.h_base.to(x_t.dtype) + self.h_sensitivity * self._pool(x_t)

    def predict(self, x_t: torch.Tensor, t: int) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.bottleneck(x_t)
        return self.predict_injected(x_t, t, h), h

    def predict_injected(
        self, x_t: torch.Tensor, t: int, h_override: torch.Tensor
    ) -> torch.Tensor:
        if tuple(h_override.shape) != self._h_shape:
            raise ValueError(
                f"injected bottleneck shape {tuple(h_override.shape)} does not "
                f"match backend h_shape {self._h_shape}"
            )
        return (
            self.base_noise.to(x_t.dtype)
            + self.x_coupling * x_t
            + self._decode(h_override, x_t.dtype)
        )

    @classmethod
    def zero(cls, image_size: tuple[int, int] = (32, 32), **kwargs) -> "ToyDenoiser":
        """Variant predicting exactly zero noise (closed-form inversion)."""
        kwargs.setdefault("base_scale", 0.0)
        kwargs.setdefault("x_coupling", 0.0)
        kwargs.setdefault("decode_scale", 0.0)
        return cls(image_size=image_size, **kwargs)
