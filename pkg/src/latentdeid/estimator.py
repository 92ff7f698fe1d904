"""Scikit-learn style front door.

``FaceDeidentifier`` wraps the whole pipeline as a transformer: ``fit``
materializes the backend/providers/schedule for the incoming image
geometry, ``transform`` maps a stack of images to their de-identified
counterparts.  Hyperparameters follow sklearn conventions (set in
``__init__`` verbatim, validated at fit time), so ``clone`` and
``ParameterGrid`` drive ablation sweeps directly.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backends import DenoiserBackend, ToyDenoiser
from .exceptions import ConfigError
from .losses import LossWeights
from .optimizer import OptimizationConfig, optimize
from .providers import ProviderBundle, make_providers
from .schedule import EditWindow, NoiseSchedule


def _validate_images(X, expected_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a finite (n, H, W, 3) float64 array in [-1, 1]."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ConfigError(
            f"expected images of shape (n, H, W, 3), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("images contain non-finite values")
    if arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError("image values must lie in [-1, 1]")
    if expected_hw is not None and tuple(arr.shape[1:3]) != expected_hw:
        raise ConfigError(
            f"images have plane {arr.shape[1:3]}, fitted for {expected_hw}"
        )
    return arr


class FaceDeidentifier(BaseEstimator, TransformerMixin):
    """De-identify face images by optimizing a bottleneck edit direction.

    Parameters mirror the pipeline defaults: ``mode`` selects linear or
    tangent editing, ``strength`` is the linear injection scale, the
    ``t0``/``t_edit``/``t_boost``/``n_denoise`` quadruple defines the
    three-phase reverse schedule, and the three ``weight_*`` values weight
    the identity/attribute/mask losses.  ``backend=None`` builds the toy
    denoiser sized to the fitted images; pass a backend instance (or a
    registered provider-bundle name via ``providers``) to run real models.

    After ``transform``, per-image artifacts are available on
    ``directions_`` and ``trajectories_``.
    """

    def __init__(
        self,
        mode: str = "linear",
        lr: float = 0.001,
        strength: float = 1000.0,
        n_opt: int = 50,
        init_norm: float = 0.1,
        seed: int = 1006,
        t0: int = 600,
        t_edit: int = 400,
        t_boost: int = 200,
        n_denoise: int = 16,
        total_steps: int = 1000,
        weight_identity: float = 1.0,
        weight_attribute: float = 1.0,
        weight_mask: float = 0.5,
        bernoulli_attr: bool = False,
        use_checkpoint: bool = False,
        attribute_targets: dict | None = None,
        providers: str | ProviderBundle = "toy",
        backend: DenoiserBackend | None = None,
        record_latents: bool = False,
    ):
        self.mode = mode
        self.lr = lr
        self.strength = strength
        self.n_opt = n_opt
        self.init_norm = init_norm
        self.seed = seed
        self.t0 = t0
        self.t_edit = t_edit
        self.t_boost = t_boost
        self.n_denoise = n_denoise
        self.total_steps = total_steps
        self.weight_identity = weight_identity
        self.weight_attribute = weight_attribute
        self.weight_mask = weight_mask
        self.bernoulli_attr = bernoulli_attr
        self.use_checkpoint = use_checkpoint
        self.attribute_targets = attribute_targets
        self.providers = providers
        self.backend = backend
        self.record_latents = record_latents

    def _build_config(self) -> OptimizationConfig:
        return OptimizationConfig(
            mode=self.mode,
            lr=self.lr,
            strength=self.strength,
            n_opt=self.n_opt,
            init_norm=self.init_norm,
            seed=self.seed,
            weights=LossWeights(
                identity=self.weight_identity,
                attribute=self.weight_attribute,
                mask=self.weight_mask,
            ),
            window=EditWindow(
                t0=self.t0,
                t_edit=self.t_edit,
                t_boost=self.t_boost,
                n_denoise=self.n_denoise,
            ),
            bernoulli_attr=self.bernoulli_attr,
            use_checkpoint=self.use_checkpoint,
            attribute_targets=dict(self.attribute_targets or {}),
        )

    def fit(self, X, y=None):
        """Resolve backend, providers, schedule and window for this geometry."""
        arr = _validate_images(X)
        self.image_shape_ = tuple(arr.shape[1:3])
        self.config_ = self._build_config()
        self.schedule_ = NoiseSchedule.linear(total_steps=self.total_steps)
        if self.backend is not None:
            self.backend_ = self.backend
        else:
            self.backend_ = ToyDenoiser(image_size=self.image_shape_)
        if isinstance(self.providers, str):
            self.providers_ = make_providers(self.providers)
        else:
            self.providers_ = self.providers
        return self

    def transform(self, X) -> np.ndarray:
        """De-identify each image; returns a (n, H, W, 3) float64 array."""
        check_is_fitted(self, "config_")
        arr = _validate_images(X, expected_hw=self.image_shape_)
        outputs = []
        self.directions_ = []
        self.trajectories_ = []
        for img in arr:
            x = torch.from_numpy(np.ascontiguousarray(img))
            x_hat, dh, log = optimize(
                x,
                self.config_,
                self.backend_,
                self.providers_,
                schedule=self.schedule_,
                record_latents=self.record_latents,
            )
            outputs.append(x_hat.numpy())
            self.directions_.append(dh.numpy())
            self.trajectories_.append(log)
        return np.stack(outputs)
