"""Latent-conditioned neural field: shared trunk to density, with RGB,
semantic-logit, and feature heads.

Density, semantic logits, and features are functions of (z, x) only; RGB
additionally consumes the encoded view direction, injected after the trunk so
all four quantities share the same density (and hence the same compositing
weights along a ray).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F


def positional_encode(v: torch.Tensor, n_freqs: int, include_input: bool = True) -> torch.Tensor:
    """Sin/cos features at frequencies 2^k * pi, k = 0..n_freqs-1.

    Output width is d * 2 * n_freqs, plus d when the raw input is appended.
    """
    parts = [v] if include_input else []
    for k in range(n_freqs):
        arg = (2.0**k) * torch.pi * v
        parts.append(torch.sin(arg))
        parts.append(torch.cos(arg))
    if not parts:
        return v[..., :0]
    return torch.cat(parts, dim=-1)


def encoded_dim(d: int, n_freqs: int, include_input: bool = True) -> int:
    return d * 2 * n_freqs + (d if include_input else 0)


@dataclass
class FieldConfig:
    z_dim: int = 64
    n_classes: int = 5
    feature_dim: int = 64
    trunk_layers: int = 8
    hidden: int = 256
    skip_at: int = 4
    rgb_hidden: int = 128
    x_freqs: int = 10
    d_freqs: int = 4
    include_input: bool = True


@dataclass
class FieldOutput:
    sigma: torch.Tensor
    rgb: torch.Tensor | None
    sem_logits: torch.Tensor
    feat: torch.Tensor


class LatentField(nn.Module):
    """MLP field conditioned on a scene latent z.

    The latent is concatenated to the encoded position at the trunk input and
    again at the skip layer. Density uses softplus, RGB sigmoid; semantic
    logits and features are unbounded.
    """

    def __init__(self, cfg: FieldConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        x_dim = encoded_dim(3, cfg.x_freqs, cfg.include_input)
        d_dim = encoded_dim(3, cfg.d_freqs, cfg.include_input)
        in_dim = x_dim + cfg.z_dim

        layers = []
        width_in = in_dim
        for i in range(cfg.trunk_layers):
            layers.append(nn.Linear(width_in, cfg.hidden, dtype=dtype))
            width_in = cfg.hidden
            if i + 1 == cfg.skip_at and i + 1 < cfg.trunk_layers:
                width_in += in_dim
        self.trunk = nn.ModuleList(layers)

        self.sigma_head = nn.Linear(cfg.hidden, 1, dtype=dtype)
        self.sem_head = nn.Linear(cfg.hidden, cfg.n_classes, dtype=dtype)
        self.feat_head = nn.Linear(cfg.hidden, cfg.feature_dim, dtype=dtype)
        self.rgb_in = nn.Linear(cfg.hidden + d_dim, cfg.rgb_hidden, dtype=dtype)
        self.rgb_out = nn.Linear(cfg.rgb_hidden, 3, dtype=dtype)

    def forward(self, z: torch.Tensor, x: torch.Tensor, d: torch.Tensor | None = None) -> FieldOutput:
        """Evaluate the field at points x (..., 3) under latent z (z_dim,) or (..., z_dim)."""
        if z.dim() == 1:
            z = z.expand(*x.shape[:-1], z.shape[-1])
        elif z.shape[:-1] != x.shape[:-1]:
            raise ValueError(f"latent batch shape {z.shape[:-1]} != point batch shape {x.shape[:-1]}")
        if z.shape[-1] != self.cfg.z_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != configured {self.cfg.z_dim}")

        x_enc = positional_encode(x, self.cfg.x_freqs, self.cfg.include_input)
        inp = torch.cat([x_enc, z], dim=-1)
        h = inp
        for i, layer in enumerate(self.trunk):
            h = F.relu(layer(h))
            if i + 1 == self.cfg.skip_at and i + 1 < self.cfg.trunk_layers:
                h = torch.cat([h, inp], dim=-1)

        sigma = F.softplus(self.sigma_head(h).squeeze(-1))
        sem_logits = self.sem_head(h)
        feat = self.feat_head(h)

        rgb = None
        if d is not None:
            d_enc = positional_encode(d, self.cfg.d_freqs, self.cfg.include_input)
            if d_enc.shape[:-1] != h.shape[:-1]:
                d_enc = d_enc.expand(*h.shape[:-1], d_enc.shape[-1])
            rgb = torch.sigmoid(self.rgb_out(F.relu(self.rgb_in(torch.cat([h, d_enc], dim=-1)))))
        return FieldOutput(sigma=sigma, rgb=rgb, sem_logits=sem_logits, feat=feat)
