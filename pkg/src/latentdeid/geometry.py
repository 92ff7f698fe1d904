"""Linear and tangent (geodesic) edits on bottleneck latent tensors.

A latent tensor of any shape is treated as a single Euclidean vector of
dimension ``d`` (its flattened view); norms and inner products below are
always taken on that view.  The tangent edit moves the latent along a
great-circle arc on the hypersphere of radius ``||z||``, so the edited
latent keeps the norm of the original.
"""

from __future__ import annotations

import math

import torch

from .exceptions import (
    DegenerateDirectionError,
    DegenerateInputError,
    ShapeMismatchError,
)

# Below this projection norm the tangent direction is numerically meaningless.
PARALLEL_EPS = 1e-8


def _check_shapes(z: torch.Tensor, direction: torch.Tensor) -> None:
    if z.shape != direction.shape:
        raise ShapeMismatchError(
            f"latent shape {tuple(z.shape)} does not match "
            f"direction shape {tuple(direction.shape)}"
        )


def _flat_norm(t: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(t.reshape(-1))


def linear_edit(z: torch.Tensor, direction: torch.Tensor, strength: float) -> torch.Tensor:
    """Shift ``z`` along ``direction``: ``z + strength * direction``.

    Inputs are not modified; the result is a new tensor of the same shape.
    """
    _check_shapes(z, direction)
    return z + strength * direction


def tangent_project(z: torch.Tensor, direction: torch.Tensor) -> torch.Tensor:
    """Project the unit direction onto the tangent plane of the sphere at ``z``.

    Both inputs are normalized on their flattened views, then the component
    of the direction along ``z`` is removed:

        proj = d_unit - <d_unit, z_unit> * z_unit

    Returns
    -------
    Tensor of the same shape as ``direction``, orthogonal to ``z``.

    Raises
    ------
    DegenerateInputError
        If ``z`` or ``direction`` has zero norm.
    DegenerateDirectionError
        If ``direction`` is (numerically) parallel to ``z``: the projection
        norm falls below ``PARALLEL_EPS``.
    """
    _check_shapes(z, direction)
    z_norm = _flat_norm(z)
    d_norm = _flat_norm(direction)
    if z_norm == 0:
        raise DegenerateInputError("latent has zero norm; no tangent plane exists")
    if d_norm == 0:
        raise DegenerateInputError("edit direction has zero norm")

    z_unit = z / z_norm
    d_unit = direction / d_norm
    inner = torch.sum(d_unit.reshape(-1) * z_unit.reshape(-1))
    proj = d_unit - inner * z_unit
    if _flat_norm(proj.detach()) < PARALLEL_EPS:
        raise DegenerateDirectionError(
            "edit direction is parallel to the latent; tangent projection vanished"
        )
    return proj


def tangent_edit(
    z: torch.Tensor,
    direction: torch.Tensor,
    renormalize: bool = True,
) -> torch.Tensor:
    """Move ``z`` along the geodesic selected by ``direction``.

    The traversal angle is the norm of ``direction`` in radians, clamped to
    ``[0, pi]``.  With ``renormalize=True`` (default) the tangent projection
    is rescaled to unit length first, so the edited latent keeps exactly the
    norm of ``z``; with ``renormalize=False`` the raw projection is used and
    the norm may shrink.

        z_hat = ||z|| * (cos(theta) * z_unit + sin(theta) * tangent_dir)

    Raises the same degenerate-input errors as :func:`tangent_project`.
    """
    proj = tangent_project(z, direction)
    if renormalize:
        proj = proj / _flat_norm(proj)
    theta = torch.clamp(_flat_norm(direction), max=math.pi)
    z_norm = _flat_norm(z)
    z_unit = z / z_norm
    return z_norm * (torch.cos(theta) * z_unit + torch.sin(theta) * proj)


def geodesic_angle(z: torch.Tensor, z_edited: torch.Tensor) -> float:
    """Great-circle distance between two latents, in radians."""
    zn = _flat_norm(z)
    en = _flat_norm(z_edited)
    if zn == 0 or en == 0:
        raise DegenerateInputError("cannot measure an angle against a zero latent")
    cos = torch.sum(z.reshape(-1) * z_edited.reshape(-1)) / (zn * en)
    return float(torch.arccos(torch.clamp(cos, -1.0, 1.0)))
