"""Per-pixel feature descriptors that produce distillation targets.

The default synthetic teacher assigns each semantic class an orthonormal
anchor direction and perturbs it with a capped random projection of
(normalized pixel coordinates, local RGB). Perturbations live in the
orthogonal complement of the anchor span, which guarantees the margins:
same-class pixel pairs have cosine >= (1-cap^2)/(1+cap^2) ~ 0.83 and
different-class pairs |cosine| <= cap^2 ~ 0.09.

A real patch-based descriptor (e.g. a ViT) can be plugged in through
``PatchDescriptorAdapter``, which nearest-upsamples patch features to pixel
resolution behind the same interface.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

TEACHER_SEED = 1943
PERTURBATION_CAP = 0.3
_POSE_COLOR_DIMS = 5  # (u, v) normalized + RGB


class TeacherDescriptor(Protocol):
    feature_dim: int

    def describe(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Dense per-pixel features (H, W, feature_dim) for one view."""
        ...


class SyntheticTeacher:
    """Deterministic class-aware descriptor standing in for a pretrained ViT."""

    def __init__(self, feature_dim: int = 64, n_classes: int = 5, seed: int = TEACHER_SEED):
        if feature_dim < n_classes + _POSE_COLOR_DIMS:
            raise ValueError(
                f"feature_dim {feature_dim} too small for {n_classes} classes "
                f"(need >= n_classes + {_POSE_COLOR_DIMS})"
            )
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        rng = np.random.default_rng(seed)
        basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, n_classes + _POSE_COLOR_DIMS)))
        self._anchors = basis[:, :n_classes].T.copy()
        self._complement = basis[:, n_classes:].T.copy()
        self._mix = rng.standard_normal((_POSE_COLOR_DIMS, _POSE_COLOR_DIMS)) / np.sqrt(_POSE_COLOR_DIMS)

    def _perturbations(self, image: np.ndarray, uv: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        rgb = image[uv[..., 1], uv[..., 0]].astype(np.float64) / 255.0
        pose = np.stack(
            [uv[..., 0] / max(w - 1, 1), uv[..., 1] / max(h - 1, 1)], axis=-1
        ).astype(np.float64)
        g = np.concatenate([pose, rgb], axis=-1)
        raw = g @ self._mix.T
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        capped = raw * (PERTURBATION_CAP / np.maximum(norm, PERTURBATION_CAP))
        return capped @ self._complement

    def describe_pixels(self, image: np.ndarray, mask: np.ndarray, uv: np.ndarray) -> np.ndarray:
        """Features for the given integer pixel coordinates (N, 2), unit norm."""
        uv = np.asarray(uv)
        classes = mask[uv[..., 1], uv[..., 0]].astype(np.int64)
        if classes.max(initial=0) >= self.n_classes:
            raise ValueError("mask contains a class id beyond the configured count")
        vec = self._anchors[classes] + self._perturbations(image, uv)
        out = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
        return out.astype(np.float32)

    def describe(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        uv = np.stack([uu, vv], axis=-1)
        return self.describe_pixels(image, mask, uv)


def sample_feature(feature_map: np.ndarray, pixel, bilinear: bool = False) -> np.ndarray:
    """Look up a feature at (u, v); nearest pixel by default."""
    h, w = feature_map.shape[:2]
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel {pixel} out of bounds for {w}x{h} map")
    if not bilinear:
        return feature_map[int(round(v)) if round(v) < h else h - 1,
                           int(round(u)) if round(u) < w else w - 1]
    u0, v0 = int(np.floor(u)), int(np.floor(v))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    fu, fv = u - u0, v - v0
    top = (1 - fu) * feature_map[v0, u0] + fu * feature_map[v0, u1]
    bot = (1 - fu) * feature_map[v1, u0] + fu * feature_map[v1, u1]
    return (1 - fv) * top + fv * bot


class PatchDescriptorAdapter:
    """Adapts a patch-grid descriptor (image -> (h_p, w_p, D)) to the dense
    per-pixel interface by nearest-neighbor upsampling."""

    def __init__(self, patch_fn: Callable[[np.ndarray], np.ndarray], feature_dim: int):
        self.patch_fn = patch_fn
        self.feature_dim = feature_dim

    def describe(self, image: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        patches = np.asarray(self.patch_fn(image))
        if patches.ndim != 3 or patches.shape[-1] != self.feature_dim:
            raise ValueError("patch descriptor must return (h_p, w_p, feature_dim)")
        h, w = image.shape[:2]
        rows = np.minimum((np.arange(h) * patches.shape[0]) // h, patches.shape[0] - 1)
        cols = np.minimum((np.arange(w) * patches.shape[1]) // w, patches.shape[1] - 1)
        return patches[rows][:, cols]
