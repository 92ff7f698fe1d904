"""Image loading, saving and validation.

Images are float64 torch tensors of shape (H, W, 3) scaled symmetrically to
[-1, 1]; PNG files rounduint8 channels with the usual half-up convention.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .exceptions import ShapeMismatchError

RANGE_TOL = 1e-6


def validate_image(x: torch.Tensor, name: str = "image") -> None:
    """Raise if ``x`` is not a finite (H, W, 3) tensor within [-1, 1]."""
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ShapeMismatchError(
            f"{name} must have shape (H, W, 3), got {tuple(x.shape)}"
        )
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(x.min()), float(x.max())
    if lo < -1.0 - RANGE_TOL or hi > 1.0 + RANGE_TOL:
        raise ValueError(
            f"{name} values must lie in [-1, 1], got range [{lo:.4g}, {hi:.4g}]"
        )


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """[-1, 1] float tensor -> (H, W, 3) uint8 array."""
    validate_image(x)
    arr = (x.detach().cpu().numpy() + 1.0) * 127.5
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 array -> [-1, 1] float64 tensor."""
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) array, got {arr.shape}")
    return torch.from_numpy(arr.astype(np.float64) / 127.5 - 1.0)


def load_image(path: str | Path) -> torch.Tensor:
    """Read an image file as an RGB [-1, 1] float64 tensor."""
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def save_image(x: torch.Tensor, path: str | Path) -> None:
    """Write a [-1, 1] tensor as a PNG (or whatever the suffix implies)."""
    Image.fromarray(to_uint8(x)).save(path)
