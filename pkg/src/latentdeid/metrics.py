"""Evaluation metrics and aggregation.

Per image-pair scores: source-identity distance (1 - cosine), detection
rate (mean of two detector booleans), emotion/gender label-match
indicators, and thresholded RMS scores for pose (tau=5 deg) and gaze
(tau=15 deg).  Dataset aggregation takes column means first, then a
harmonic mean over the four attribute means, then the overall harmonic
mean over (mean SID, mean detect, attribute harmonic mean) — the nesting
that reproduces the published overall numbers.  Also holds the PCA
projection used for latent-trajectory visualization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .exceptions import ConfigError, DegenerateInputError
from .providers import EvalProviders

POSE_TAU = 5.0
GAZE_TAU = 15.0
HM_FLOOR = 1e-8

#: Column order used everywhere a report row is printed.
COLUMNS = ("sid", "detect", "emotion", "gender", "pose", "gaze")
ATTR_COLUMNS = ("emotion", "gender", "pose", "gaze")


def sid(e_src: torch.Tensor, e_gen: torch.Tensor) -> float:
    """1 - cosine similarity; in [0, 2], invariant to positive rescaling."""
    a = torch.as_tensor(e_src, dtype=torch.float64).reshape(-1)
    b = torch.as_tensor(e_gen, dtype=torch.float64).reshape(-1)
    if a.shape != b.shape:
        raise ConfigError(f"embedding dimensions differ: {a.numel()} vs {b.numel()}")
    na, nb = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
    if float(na) == 0.0 or float(nb) == 0.0:
        raise DegenerateInputError("zero-norm embedding in identity distance")
    # rounding can push the cosine of (near-)parallel vectors past 1
    cos = torch.clamp(torch.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(1.0 - cos)


def rms_deviation(deltas) -> float:
    """Root mean square of angle differences (degrees in, degrees out)."""
    arr = np.asarray(deltas, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ConfigError("rms_deviation needs at least one angle difference")
    return float(np.sqrt(np.mean(arr**2)))


def threshold_score(rms: float, tau: float) -> float:
    """max(0, 1 - rms/tau): 1 at no deviation, 0 at or beyond the threshold."""
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if rms < 0:
        raise ConfigError(f"rms must be >= 0, got {rms}")
    return max(0.0, 1.0 - rms / tau)


def hm(values) -> float:
    """Harmonic mean with zeros floored at 1e-8 so one zero dominates
    without dividing by it."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("harmonic mean of an empty sequence")
    if np.any(arr < 0):
        raise ConfigError("harmonic mean requires nonnegative values")
    arr = np.maximum(arr, HM_FLOOR)
    return float(arr.size / np.sum(1.0 / arr))


def overall_from_columns(
    sid_mean: float,
    detect_mean: float,
    emotion_mean: float,
    gender_mean: float,
    pose_mean: float,
    gaze_mean: float,
) -> tuple[float, float]:
    """(hm_attr, overall) from the six aggregate column values."""
    hm_attr = hm((emotion_mean, gender_mean, pose_mean, gaze_mean))
    return hm_attr, hm((sid_mean, detect_mean, hm_attr))


@dataclass
class PairScores:
    """Scores for one (source, edited) pair; None marks a provider failure."""

    sid: float | None = None
    detect: float | None = None
    emotion: float | None = None
    gender: float | None = None
    pose: float | None = None
    gaze: float | None = None
    name: str = ""
    errors: dict[str, str] = field(default_factory=dict)


def evaluate_pair(
    x: torch.Tensor, x_hat: torch.Tensor, providers: EvalProviders, name: str = ""
) -> PairScores:
    """Score one pair; provider exceptions mark that metric missing."""
    scores = PairScores(name=name)

    def run(metric, fn):
        try:
            setattr(scores, metric, fn())
        except Exception as e:  # noqa: BLE001 - failures become missing scores
            scores.errors[metric] = f"{type(e).__name__}: {e}"

    run("sid", lambda: sid(providers.recog_embed(x), providers.recog_embed(x_hat)))
    run("detect", lambda: float(np.mean([bool(b) for b in providers.detect(x_hat)])))
    run("emotion", lambda: float(providers.emotion(x) == providers.emotion(x_hat)))
    run("gender", lambda: float(providers.gender(x) == providers.gender(x_hat)))
    run(
        "pose",
        lambda: threshold_score(
            rms_deviation(np.subtract(providers.pose(x), providers.pose(x_hat))),
            POSE_TAU,
        ),
    )
    run(
        "gaze",
        lambda: threshold_score(
            rms_deviation(np.subtract(providers.gaze(x), providers.gaze(x_hat))),
            GAZE_TAU,
        ),
    )
    return scores


@dataclass
class MetricsReport:
    """Aggregate over a set of pairs, plus the per-image rows."""

    pairs: list[PairScores]
    means: dict[str, float | None]
    missing: dict[str, int]
    hm_attr: float | None
    overall: float | None

    @property
    def n_images(self) -> int:
        return len(self.pairs)

    def to_json(self, indent: int = 2) -> str:
        payload = {
            "n_images": self.n_images,
            "means": self.means,
            "missing": self.missing,
            "hm_attr": self.hm_attr,
            "overall": self.overall,
            "images": [asdict(p) for p in self.pairs],
        }
        return json.dumps(payload, indent=indent, sort_keys=True)

    def table_row(self, label: str = "", sep: str = "\t") -> str:
        """One delimited row in SID/Detect/Emotion/Gender/Pose/Gaze/Overall order."""
        cells = [label] if label else []
        for col in COLUMNS:
            v = self.means[col]
            cells.append("n/a" if v is None else f"{v:.3f}")
        cells.append("n/a" if self.overall is None else f"{self.overall:.3f}")
        return sep.join(cells)


TABLE_HEADER = ("SID", "Detect", "Emotion", "Gender", "Pose", "Gaze", "Overall")


def aggregate(pairs: list[PairScores]) -> MetricsReport:
    """Column means over available scores, then the nested harmonic means.

    Missing per-image scores are excluded from their column mean and
    counted in ``missing``; if an entire column is missing the dependent
    harmonic means are reported as None.
    """
    if not pairs:
        raise ConfigError("aggregate needs at least one scored pair")
    means: dict[str, float | None] = {}
    missing: dict[str, int] = {}
    for col in COLUMNS:
        values = [getattr(p, col) for p in pairs if getattr(p, col) is not None]
        missing[col] = len(pairs) - len(values)
        means[col] = float(np.mean(values)) if values else None

    hm_attr = overall = None
    if all(means[c] is not None for c in COLUMNS):
        hm_attr, overall = overall_from_columns(*(means[c] for c in COLUMNS))
    return MetricsReport(
        pairs=list(pairs), means=means, missing=missing, hm_attr=hm_attr, overall=overall
    )


@dataclass(frozen=True)
class PCABasis:
    """Top-k principal axes of a centered pool, with a deterministic sign
    convention: each axis's largest-magnitude loading is positive."""

    mean: np.ndarray
    axes: np.ndarray
    explained_variance_ratio: np.ndarray

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.axes.T


def fit_pca(pool: np.ndarray, k: int = 3) -> PCABasis:
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2:
        raise ConfigError(f"PCA pool must be 2-D (n, d), got shape {pool.shape}")
    n, d = pool.shape
    if n <= k:
        raise ConfigError(f"PCA pool of {n} vectors cannot support k={k}")
    mean = pool.mean(axis=0)
    centered = pool - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(n, d) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < k:
        raise ConfigError(f"rank-deficient pool: rank {rank} < k={k}")
    axes = vt[:k].copy()
    for i in range(k):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    var = s**2
    evr = var[:k] / var.sum()
    return PCABasis(mean=mean, axes=axes, explained_variance_ratio=evr)


def pca_project(
    snapshots: np.ndarray, k: int = 3, trajectories: np.ndarray | None = None
) -> np.ndarray:
    """Fit the pool and project (defaults to projecting the pool itself)."""
    basis = fit_pca(snapshots, k=k)
    target = snapshots if trajectories is None else trajectories
    return basis.project(target)
