"""Differentiable quadrature of the density/RGB/semantic/feature fields
along rays, with background compositing.

Per-sample weights w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
T_i = exp(-sum_{j<i} sigma_j delta_j). RGB composites residual transmittance
onto a background color; semantics route residual mass to class 0 through a
fixed background logit bonus before the softmax; features composite nothing
(teacher targets cover full frames).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .field import LatentField
from .geometry import CameraModel, camera_ray_grid, deltas_from_depths, stratified_depths

DEFAULT_BACKGROUND_BONUS = 10.0


@dataclass
class RenderResult:
    rgb: torch.Tensor
    sem_probs: torch.Tensor
    feat: torch.Tensor
    acc: torch.Tensor
    depth: torch.Tensor


def quadrature_weights(sigmas: torch.Tensor, deltas: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Transmittance T_i and weights w_i per sample; shapes (..., S)."""
    if sigmas.shape != deltas.shape:
        raise ValueError("sigmas and deltas must have matching shapes")
    if bool((sigmas < 0).any()):
        raise ValueError("negative density")
    if bool((deltas < 0).any()):
        raise ValueError("negative delta")
    tau = sigmas * deltas
    accum = torch.cumsum(tau, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(accum[..., :1]), accum[..., :-1]], dim=-1))
    alpha = 1.0 - torch.exp(-tau)
    return trans, trans * alpha


def render_rgb(weights: torch.Tensor, colors: torch.Tensor, bg_color: torch.Tensor) -> torch.Tensor:
    """Composite per-sample colors (..., S, 3); residual mass takes the background color."""
    acc = weights.sum(dim=-1, keepdim=True)
    return (weights.unsqueeze(-1) * colors).sum(dim=-2) + (1.0 - acc) * bg_color


def render_semantic(
    weights: torch.Tensor,
    sem_logits: torch.Tensor,
    background_bonus: float = DEFAULT_BACKGROUND_BONUS,
) -> torch.Tensor:
    """Volume-render logits, boost class 0 by the residual mass, then softmax."""
    rendered = (weights.unsqueeze(-1) * sem_logits).sum(dim=-2)
    residual = (1.0 - weights.sum(dim=-1)).clamp(min=0.0)
    bonus = torch.zeros_like(rendered)
    bonus[..., 0] = background_bonus * residual
    return torch.softmax(rendered + bonus, dim=-1)


def render_feature(weights: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    return (weights.unsqueeze(-1) * feats).sum(dim=-2)


def render_rays(
    field: LatentField,
    z: torch.Tensor,
    origins: torch.Tensor,
    directions: torch.Tensor,
    depths: torch.Tensor,
    t_far: float,
    bg_color: torch.Tensor,
    background_bonus: float = DEFAULT_BACKGROUND_BONUS,
) -> RenderResult:
    """Evaluate the field at (origins + depths * directions) and composite.

    origins/directions: (R, 3); depths: (R, S) strictly increasing per ray.
    All three fields share the weights derived from the common density.
    """
    n_rays, n_samples = depths.shape
    points = origins.unsqueeze(1) + depths.unsqueeze(-1) * directions.unsqueeze(1)
    dirs = directions.unsqueeze(1).expand(n_rays, n_samples, 3)
    out = field(z, points.reshape(-1, 3), dirs.reshape(-1, 3))

    sigma = out.sigma.view(n_rays, n_samples)
    deltas = torch.cat([depths[:, 1:] - depths[:, :-1], t_far - depths[:, -1:]], dim=-1)
    _, weights = quadrature_weights(sigma, deltas)

    rgb = render_rgb(weights, out.rgb.view(n_rays, n_samples, 3), bg_color)
    sem = render_semantic(weights, out.sem_logits.view(n_rays, n_samples, -1), background_bonus)
    feat = render_feature(weights, out.feat.view(n_rays, n_samples, -1))
    acc = weights.sum(dim=-1)
    depth = (weights * depths).sum(dim=-1)
    return RenderResult(rgb=rgb, sem_probs=sem, feat=feat, acc=acc, depth=depth)


def render_image(
    field: LatentField,
    z: torch.Tensor,
    camera: CameraModel,
    t_near: float,
    t_far: float,
    n_samples: int,
    bg_color,
    rng: np.random.Generator,
    background_bonus: float = DEFAULT_BACKGROUND_BONUS,
    chunk: int = 1024,
) -> dict[str, np.ndarray]:
    """Render a full view; returns float arrays keyed rgb/sem_probs/feat/acc/depth."""
    origins, dirs = camera_ray_grid(camera)
    h, w = origins.shape[:2]
    dtype = next(field.parameters()).dtype
    origins_t = torch.from_numpy(origins.reshape(-1, 3)).to(dtype)
    dirs_t = torch.from_numpy(dirs.reshape(-1, 3)).to(dtype)
    depths_np = stratified_depths(t_near, t_far, h * w, n_samples, rng)
    depths_t = torch.from_numpy(depths_np).to(dtype)
    bg = torch.as_tensor(bg_color, dtype=dtype)

    outs: dict[str, list[np.ndarray]] = {k: [] for k in ("rgb", "sem_probs", "feat", "acc", "depth")}
    with torch.no_grad():
        for lo in range(0, h * w, chunk):
            hi = min(lo + chunk, h * w)
            res = render_rays(
                field, z, origins_t[lo:hi], dirs_t[lo:hi], depths_t[lo:hi],
                t_far, bg, background_bonus,
            )
            outs["rgb"].append(res.rgb.numpy())
            outs["sem_probs"].append(res.sem_probs.numpy())
            outs["feat"].append(res.feat.numpy())
            outs["acc"].append(res.acc.numpy())
            outs["depth"].append(res.depth.numpy())
    stacked = {k: np.concatenate(v, axis=0) for k, v in outs.items()}
    return {
        "rgb": stacked["rgb"].reshape(h, w, 3),
        "sem_probs": stacked["sem_probs"].reshape(h, w, -1),
        "feat": stacked["feat"].reshape(h, w, -1),
        "acc": stacked["acc"].reshape(h, w),
        "depth": stacked["depth"].reshape(h, w),
    }
