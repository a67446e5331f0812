"""Multi-view convolutional encoder producing the fused latent z, plus the
prediction head used by the self-predictive auxiliary objective.

Per view: a shared conv stack (first stride 2, then stride 1, no padding)
followed by a linear map over [flattened conv features, 16 camera floats].
Views are mean-pooled, then projected, layer-normalized, and squashed by tanh.

The mean over views is mathematically permutation-invariant but floating-point
addition is not associative, so views are summed in a canonical order (sorted
by camera bytes, then image bytes) to make the invariance hold bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

CAMERA_FLATTEN_DIM = 16


@dataclass
class EncoderConfig:
    z_dim: int = 64
    n_views: int = 3
    in_channels: int = 3
    image_size: int = 32
    conv_layers: int = 4
    conv_filters: int = 32


def conv_output_size(image_size: int, conv_layers: int) -> int:
    size = (image_size - 3) // 2 + 1
    for _ in range(conv_layers - 1):
        size = size - 2
    if size < 1:
        raise ValueError(f"image size {image_size} too small for {conv_layers} conv layers")
    return size


class MultiViewEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        convs = [nn.Conv2d(cfg.in_channels, cfg.conv_filters, 3, stride=2, dtype=dtype)]
        for _ in range(cfg.conv_layers - 1):
            convs.append(nn.Conv2d(cfg.conv_filters, cfg.conv_filters, 3, stride=1, dtype=dtype))
        self.convs = nn.ModuleList(convs)
        out_size = conv_output_size(cfg.image_size, cfg.conv_layers)
        self.view_feature_dim = cfg.conv_filters * out_size * out_size
        self.per_view = nn.Linear(self.view_feature_dim + CAMERA_FLATTEN_DIM, cfg.z_dim, dtype=dtype)
        self.fuse = nn.Linear(cfg.z_dim, cfg.z_dim, dtype=dtype)
        self.norm = nn.LayerNorm(cfg.z_dim, dtype=dtype)

    def cnn_features(self, images: torch.Tensor) -> torch.Tensor:
        """Flattened shared-conv features for images (..., H, W, C) with values 0..255."""
        lead = images.shape[:-3]
        if images.shape[-3:] != (self.cfg.image_size, self.cfg.image_size, self.cfg.in_channels):
            raise ValueError(
                f"expected images (..., {self.cfg.image_size}, {self.cfg.image_size}, "
                f"{self.cfg.in_channels}), got {tuple(images.shape)}"
            )
        x = images.reshape(-1, *images.shape[-3:]).permute(0, 3, 1, 2)
        x = x.to(next(self.parameters()).dtype) / 255.0
        for conv in self.convs:
            x = F.relu(conv(x))
        return x.reshape(*lead, self.view_feature_dim)

    def forward(
        self,
        images: torch.Tensor,
        cameras_flat: torch.Tensor,
        return_view_features: bool = False,
    ):
        """Latent z for one observation (V, H, W, C) or a batch (B, V, H, W, C).

        ``cameras_flat`` carries the padded 16-float projection matrix per view.
        """
        batched = images.dim() == 5
        if not batched:
            images = images.unsqueeze(0)
            cameras_flat = cameras_flat.unsqueeze(0)
        if cameras_flat.shape[-1] != CAMERA_FLATTEN_DIM:
            raise ValueError("camera flatten must have 16 floats per view")
        if images.shape[1] != cameras_flat.shape[1]:
            raise ValueError("view count mismatch between images and cameras")

        order = _canonical_view_order(images, cameras_flat)
        idx = torch.as_tensor(order, dtype=torch.long)
        images = torch.stack([images[b, idx[b]] for b in range(images.shape[0])])
        cameras_flat = torch.stack([cameras_flat[b, idx[b]] for b in range(images.shape[0])])

        feats = self.cnn_features(images)
        dtype = next(self.parameters()).dtype
        per_view = self.per_view(torch.cat([feats, cameras_flat.to(dtype)], dim=-1))
        fused = per_view.mean(dim=1)
        z = torch.tanh(self.norm(self.fuse(fused)))
        if not batched:
            z = z.squeeze(0)
            feats = feats.squeeze(0)
        if return_view_features:
            return z, feats
        return z

    def encode(self, images: torch.Tensor, cameras_flat: torch.Tensor) -> torch.Tensor:
        return self.forward(images, cameras_flat)


class PredictionHead(nn.Module):
    """Two-layer head mapping a per-view conv feature to a prediction of the
    same shape, with the bottleneck at the latent width."""

    def __init__(self, feature_dim: int, z_dim: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.fc1 = nn.Linear(feature_dim, z_dim, dtype=dtype)
        self.fc2 = nn.Linear(z_dim, feature_dim, dtype=dtype)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(feature)))


def _canonical_view_order(images: torch.Tensor, cameras_flat: torch.Tensor) -> list[list[int]]:
    orders = []
    for b in range(images.shape[0]):
        keys = []
        for v in range(images.shape[1]):
            keys.append(
                (
                    cameras_flat[b, v].detach().cpu().numpy().tobytes(),
                    images[b, v].detach().cpu().numpy().tobytes(),
                    v,
                )
            )
        orders.append([k[2] for k in sorted(keys, key=lambda k: (k[0], k[1]))])
    return orders
