"""Pluggable face-analysis providers.

The optimization path needs three differentiable models (identity embedder,
attribute predictor, face parser); the evaluation path needs a separate
bundle (recognition embedder, emotion/gender labelers, pose/gaze estimators,
two detectors).  Real pretrained adapters are supplied externally through
:func:`register_adapter`; the toy implementations here are deterministic
analytic stand-ins built from seeded fixed linear maps, so the whole
pipeline is exercisable (and differentiable) without any weights.

All providers are pure and safe for concurrent read-only inference unless
their class sets ``exclusive = True``, in which case callers must serialize
access.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import torch
import torch.nn.functional as F

from .exceptions import ConfigError
from .losses import ATTRIBUTE_NAMES

EMOTION_LABELS = ("neutral", "happy", "sad", "angry")
GENDER_LABELS = ("female", "male")

_POOL_GRID = 8


@runtime_checkable
class IdentityEmbedder(Protocol):
    def embed(self, image: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class AttributePredictor(Protocol):
    def predict(self, image: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class FaceParser(Protocol):
    def parse(self, image: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class EvalProviders(Protocol):
    def recog_embed(self, image: torch.Tensor) -> torch.Tensor: ...
    def emotion(self, image: torch.Tensor) -> str: ...
    def gender(self, image: torch.Tensor) -> str: ...
    def pose(self, image: torch.Tensor) -> tuple[float, float, float]: ...
    def gaze(self, image: torch.Tensor) -> tuple[float, float]: ...
    def detect(self, image: torch.Tensor) -> tuple[bool, bool]: ...


def _pool_features(image: torch.Tensor, grid: int = _POOL_GRID) -> torch.Tensor:
    """(H, W, 3) image -> flat (3*grid*grid,) average-pooled feature vector."""
    chw = image.permute(2, 0, 1)
    return F.adaptive_avg_pool2d(chw, (grid, grid)).reshape(-1)


def _seeded_matrix(rows: int, cols: int, seed: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.randn(rows, cols, generator=g, dtype=torch.float64) / cols**0.5


class ToyIdentityEmbedder:
    """Fixed random projection of the pooled image; linear, hence exactly
    differentiable: embed(a*x) = a*embed(x).

    The gain amplifies small in-face image changes into embedding distances
    of order one, the regime where the exponential identity loss has useful
    gradients.
    """

    exclusive = False

    def __init__(self, dim: int = 32, seed: int = 710, gain: float = 25.0):
        self.dim = dim
        self._w = _seeded_matrix(dim, 3 * _POOL_GRID**2, seed) * gain

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        return self._w @ _pool_features(image)


class ToyAttributePredictor:
    """Sigmoid of 40 fixed linear functionals of the pooled image."""

    exclusive = False

    def __init__(self, seed: int = 711, gain: float = 2.0):
        self._w = _seeded_matrix(len(ATTRIBUTE_NAMES), 3 * _POOL_GRID**2, seed) * gain

    def predict(self, image: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self._w @ _pool_features(image))


class ToyFaceParser:
    """Fixed centered soft ellipse covering roughly the middle of the frame."""

    exclusive = False

    def __init__(self, sharpness: float = 4.0):
        self.sharpness = sharpness

    def parse(self, image: torch.Tensor) -> torch.Tensor:
        h, w = image.shape[0], image.shape[1]
        ys = torch.linspace(-1.0, 1.0, h, dtype=torch.float64)
        xs = torch.linspace(-1.0, 1.0, w, dtype=torch.float64)
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        d = (yy / 0.7) ** 2 + (xx / 0.55) ** 2
        return torch.sigmoid((1.0 - d) * self.sharpness)


class ToyEvalProviders:
    """Analytic evaluation stand-ins.

    Labels come from argmax/sign of fixed functionals, angles from linear
    functionals scaled to plausible degree ranges, and both detectors always
    fire.  The recognition projection is seeded differently from the
    optimization-path embedder, mimicking the use of distinct recognition
    models for editing and for scoring.
    """

    exclusive = False

    def __init__(self, dim: int = 32, seed: int = 712):
        d = 3 * _POOL_GRID**2
        self._w_recog = _seeded_matrix(dim, d, seed)
        self._w_emotion = _seeded_matrix(len(EMOTION_LABELS), d, seed + 1)
        self._w_gender = _seeded_matrix(1, d, seed + 2)
        self._w_pose = _seeded_matrix(3, d, seed + 3) * 15.0
        self._w_gaze = _seeded_matrix(2, d, seed + 4) * 10.0

    def recog_embed(self, image: torch.Tensor) -> torch.Tensor:
        return self._w_recog @ _pool_features(image)

    def emotion(self, image: torch.Tensor) -> str:
        scores = self._w_emotion @ _pool_features(image)
        return EMOTION_LABELS[int(torch.argmax(scores))]

    def gender(self, image: torch.Tensor) -> str:
        score = float(self._w_gender @ _pool_features(image))
        return GENDER_LABELS[int(score > 0)]

    def pose(self, image: torch.Tensor) -> tuple[float, float, float]:
        p, y, r = (self._w_pose @ _pool_features(image)).tolist()
        return (p, y, r)

    def gaze(self, image: torch.Tensor) -> tuple[float, float]:
        p, y = (self._w_gaze @ _pool_features(image)).tolist()
        return (p, y)

    def detect(self, image: torch.Tensor) -> tuple[bool, bool]:
        return (True, True)


def toy_identity_embedder() -> ToyIdentityEmbedder:
    return ToyIdentityEmbedder()


def toy_attribute_predictor() -> ToyAttributePredictor:
    return ToyAttributePredictor()


def toy_face_parser() -> ToyFaceParser:
    return ToyFaceParser()


def toy_eval_providers() -> ToyEvalProviders:
    return ToyEvalProviders()


@dataclass(frozen=True)
class ProviderBundle:
    """Everything the optimization and evaluation paths consume."""

    embedder: IdentityEmbedder
    attributes: AttributePredictor
    parser: FaceParser
    evaluators: EvalProviders


def toy_providers() -> ProviderBundle:
    return ProviderBundle(
        embedder=toy_identity_embedder(),
        attributes=toy_attribute_predictor(),
        parser=toy_face_parser(),
        evaluators=toy_eval_providers(),
    )


_REGISTRY: dict[str, Callable[..., ProviderBundle]] = {}


def register_adapter(name: str, factory: Callable[..., ProviderBundle]) -> None:
    """Register a named provider-bundle factory (e.g. a real-model adapter).

    Names are resolved from configuration via :func:`make_providers`.
    """
    if name in _REGISTRY:
        raise ConfigError(f"provider adapter {name!r} is already registered")
    _REGISTRY[name] = factory


def registered_adapters() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def make_providers(name: str, **kwargs) -> ProviderBundle:
    """Instantiate the bundle registered under ``name``."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown provider adapter {name!r}; registered: "
            f"{', '.join(registered_adapters()) or '(none)'}"
        ) from None
    return factory(**kwargs)


register_adapter("toy", toy_providers)
