"""Pretraining objectives: RGB L2, semantic cross-entropy on rendered
probabilities, feature L1, their weighted total, and the symmetrized
self-predictive loss with stop-gradient targets.

Reductions default to sums over the ray batch; a mean reduction is available
behind the ``reduction`` argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

LOG_CLAMP_EPS = 1e-8


@dataclass
class LossWeights:
    lambda_sem: float = 0.004
    lambda_feat: float = 0.04
    lambda_aux: float = 1.0

    def __post_init__(self):
        if min(self.lambda_sem, self.lambda_feat, self.lambda_aux) < 0:
            raise ValueError("loss weights must be nonnegative")


def _reduce(per_ray: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "sum":
        return per_ray.sum()
    if reduction == "mean":
        return per_ray.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def loss_rgb(rendered: torch.Tensor, target: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """Squared L2 between rendered and ground-truth pixel colors, per ray."""
    if rendered.shape != target.shape:
        raise ValueError("rendered/target shape mismatch")
    return _reduce(((rendered - target) ** 2).sum(dim=-1), reduction)


def loss_sem(rendered_probs: torch.Tensor, target_class: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """Cross entropy -log p(gt class) of the rendered class probabilities."""
    if target_class.max() >= rendered_probs.shape[-1] or target_class.min() < 0:
        raise ValueError("target class id out of range")
    picked = rendered_probs.gather(-1, target_class.long().unsqueeze(-1)).squeeze(-1)
    return _reduce(-torch.log(picked.clamp(min=LOG_CLAMP_EPS)), reduction)


def loss_feat(rendered: torch.Tensor, target: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """L1 between rendered and teacher features, per ray."""
    if rendered.shape != target.shape:
        raise ValueError("rendered/target shape mismatch")
    return _reduce((rendered - target).abs().sum(dim=-1), reduction)


def loss_total(rgb, sem, feat, weights: LossWeights):
    """Weighted combination of the three field losses."""
    return rgb + weights.lambda_sem * sem + weights.lambda_feat * feat


def negative_cosine(p: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """-cos(p, z) with z treated as a constant (stop-gradient target)."""
    with torch.no_grad():
        if float(p.norm(dim=-1).min()) == 0.0 or float(z.norm(dim=-1).min()) == 0.0:
            raise ValueError("cosine similarity undefined for zero-norm vectors")
    z = z.detach()
    return -(F.normalize(p, dim=-1) * F.normalize(z, dim=-1)).sum(dim=-1).mean()


def loss_aux(p1: torch.Tensor, z2: torch.Tensor, p2: torch.Tensor, z1: torch.Tensor) -> torch.Tensor:
    """Symmetrized self-predictive loss; gradients flow only through p1/p2."""
    return 0.5 * negative_cosine(p1, z2) + 0.5 * negative_cosine(p2, z1)
