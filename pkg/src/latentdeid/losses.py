"""Differentiable losses steering the identity edit.

Three terms, each computed on the decoded image through pretrained
predictors: an identity-repulsion term that decays exponentially with
embedding distance, a KL-style attribute-preservation term on predictor
probabilities, and an L1 background term restricted to the non-face region
of a soft mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .exceptions import ConfigError, ShapeMismatchError

PROB_EPS = 1e-8

#: CelebA facial attribute names, in canonical order.
ATTRIBUTE_NAMES: tuple[str, ...] = (
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes",
    "Bald", "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair",
    "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin",
    "Eyeglasses", "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones",
    "Male", "Mouth_Slightly_Open", "Mustache", "Narrow_Eyes", "No_Beard",
    "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline",
    "Rosy_Cheeks", "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair",
    "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick",
    "Wearing_Necklace", "Wearing_Necktie", "Young",
)

_ALIASES = {"smile": "Smiling"}


def _canon(name: str) -> str:
    return name.strip().lower().replace(" ", "_").replace("-", "_")


_CANON_TO_INDEX = {_canon(n): i for i, n in enumerate(ATTRIBUTE_NAMES)}


def resolve_attribute(name: str) -> str:
    """Map a user-typed attribute name to its canonical spelling."""
    return ATTRIBUTE_NAMES[attribute_index(name)]


def attribute_index(name: str) -> int:
    """Index of an attribute, accepting case/space/hyphen variants and aliases."""
    key = _canon(name)
    key = _canon(_ALIASES.get(key, key))
    try:
        return _CANON_TO_INDEX[key]
    except KeyError:
        raise ConfigError(
            f"unknown attribute {name!r}; valid names: {', '.join(ATTRIBUTE_NAMES)}"
        ) from None


def clamp_probs(p: torch.Tensor, eps: float = PROB_EPS) -> torch.Tensor:
    """Clamp probabilities into [eps, 1 - eps] so logs stay finite."""
    return torch.clamp(p, min=eps, max=1.0 - eps)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{what} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def identity_loss(f_src: torch.Tensor, f_gen: torch.Tensor) -> torch.Tensor:
    """exp(-||f_src - f_gen||_2): near 1 for same identity, decays to 0."""
    _check_same_shape(f_src, f_gen, "embedding")
    return torch.exp(-torch.linalg.vector_norm(f_src.reshape(-1) - f_gen.reshape(-1)))


def attribute_loss(
    a_src: torch.Tensor, a_gen: torch.Tensor, bernoulli: bool = False
) -> torch.Tensor:
    """Sum of a_src * ln(a_src / a_gen) over attributes.

    With ``bernoulli=True`` the complementary term
    (1 - a_src) * ln((1 - a_src) / (1 - a_gen)) is added per attribute,
    making each summand a proper two-outcome KL divergence.
    """
    _check_same_shape(a_src, a_gen, "attribute")
    p = clamp_probs(a_src)
    q = clamp_probs(a_gen)
    loss = (p * torch.log(p / q)).sum()
    if bernoulli:
        loss = loss + ((1.0 - p) * torch.log((1.0 - p) / (1.0 - q))).sum()
    return loss


def mask_loss(x: torch.Tensor, x_hat: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Sum of |x - x_hat| outside the face region.

    ``mask`` is (H, W) with 1 on the face; its complement weights the
    absolute error, broadcast over the three channels.  The sum (not mean)
    is intentional: the weight on this term is calibrated against it.
    """
    _check_same_shape(x, x_hat, "image")
    if mask.shape != x.shape[:2]:
        raise ShapeMismatchError(
            f"mask shape {tuple(mask.shape)} does not match image plane {tuple(x.shape[:2])}"
        )
    if mask.numel() and (float(mask.min()) < 0.0 or float(mask.max()) > 1.0):
        raise ValueError("mask values must lie in [0, 1]")
    return ((x - x_hat).abs() * (1.0 - mask).unsqueeze(-1)).sum()


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the three loss terms."""

    identity: float = 1.0
    attribute: float = 1.0
    mask: float = 0.5


def total_loss(
    x_src: torch.Tensor,
    x_hat: torch.Tensor,
    f_src: torch.Tensor,
    f_gen: torch.Tensor,
    a_src: torch.Tensor,
    a_gen: torch.Tensor,
    mask: torch.Tensor,
    weights: LossWeights = LossWeights(),
    bernoulli: bool = False,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted objective and a detached per-term breakdown.

    The breakdown reports the unweighted term values plus the weighted
    total, all as plain floats for logging.
    """
    l_id = identity_loss(f_src, f_gen)
    l_attr = attribute_loss(a_src, a_gen, bernoulli=bernoulli)
    l_mask = mask_loss(x_src, x_hat, mask)
    total = weights.identity * l_id + weights.attribute * l_attr + weights.mask * l_mask
    breakdown = {
        "identity": float(l_id.detach()),
        "attribute": float(l_attr.detach()),
        "mask": float(l_mask.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
