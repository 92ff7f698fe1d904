"""Image range conventions and file round-trips."""

import numpy as np
import pytest
import torch

from latentdeid import ShapeMismatchError, load_image, save_image, validate_image
from latentdeid.imgio import from_uint8, to_uint8


def test_validate_accepts_boundaries(image32):
    validate_image(image32)
    validate_image(torch.ones((2, 2, 3), dtype=torch.float64))
    validate_image(-torch.ones((2, 2, 3), dtype=torch.float64))


def test_validate_rejects_bad_inputs():
    with pytest.raises(TypeError):
        validate_image(np.zeros((2, 2, 3)))
    with pytest.raises(ShapeMismatchError):
        validate_image(torch.zeros((2, 2), dtype=torch.float64))
    with pytest.raises(ShapeMismatchError):
        validate_image(torch.zeros((2, 2, 4), dtype=torch.float64))
    with pytest.raises(ValueError, match="finite"):
        validate_image(torch.full((2, 2, 3), float("inf")))
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        validate_image(torch.full((2, 2, 3), 1.1))


def test_uint8_round_trip_hits_exact_codes():
    codes = np.arange(256, dtype=np.uint8).reshape(16, 16)[..., None].repeat(3, -1)
    assert np.array_equal(to_uint8(from_uint8(codes)), codes)


def test_uint8_extremes():
    x = torch.tensor([[[-1.0, 0.0, 1.0]]], dtype=torch.float64)
    out = to_uint8(x)
    assert out.tolist() == [[[0, 128, 255]]]  # 0.0 rounds to rint(127.5) = 128


def test_png_round_trip(tmp_path, image32):
    path = tmp_path / "face.png"
    save_image(image32, path)
    back = load_image(path)
    assert back.shape == (32, 32, 3)
    assert back.dtype == torch.float64
    # quantization error is at most half a code width
    assert float((back - image32).abs().max()) <= (1.0 / 127.5) / 2 + 1e-9
    # a second save of the loaded image is lossless
    save_image(back, tmp_path / "again.png")
    assert torch.equal(load_image(tmp_path / "again.png"), back)
