"""Pinhole cameras, ray generation, and depth sampling along rays.

Convention: the camera looks along -z in its own frame, and pixel (u, v)
back-projects to the camera-frame direction (-(u-cx)/fx, -(v-cy)/fy, -1).
With that choice the plain pinhole product P = K @ [R|t] (world-to-camera)
reprojects any point on the pixel's ray back onto (u, v) exactly, since the
homogeneous divide is sign-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world pose (row-major 4x4)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.cam_to_world, dtype=np.float64)
        if mat.shape != (4, 4):
            raise GeometryError(f"cam_to_world must be 4x4, got {mat.shape}")
        object.__setattr__(self, "cam_to_world", mat)
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise GeometryError("image size must be at least 1x1")
        rot = mat[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=ROTATION_TOL):
            raise GeometryError("rotation block is not orthonormal")
        if not np.allclose(mat[3], [0.0, 0.0, 0.0, 1.0], atol=ROTATION_TOL):
            raise GeometryError("last row of cam_to_world must be [0,0,0,1]")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    @property
    def world_to_camera(self) -> np.ndarray:
        rot = self.cam_to_world[:3, :3]
        trans = self.cam_to_world[:3, 3]
        out = np.eye(4)
        out[:3, :3] = rot.T
        out[:3, 3] = -rot.T @ trans
        return out

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:3, 3].copy()

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "cam_to_world": [float(v) for v in self.cam_to_world.reshape(16)],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraModel":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            cam_to_world=np.array(d["cam_to_world"], dtype=np.float64).reshape(4, 4),
        )


@dataclass(frozen=True)
class Ray:
    """World-space ray with unit direction and near/far depth bounds."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        direction = np.asarray(self.direction, dtype=np.float64)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
            raise GeometryError("ray direction must be unit length")
        if not (0 <= self.t_near < self.t_far):
            raise GeometryError("require 0 <= t_near < t_far")

    def at(self, t: float | np.ndarray) -> np.ndarray:
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True)
class RaySamples:
    """Strictly increasing depths along one ray; the last delta runs to t_far."""

    depths: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        depths = np.asarray(self.depths, dtype=np.float64)
        deltas = np.asarray(self.deltas, dtype=np.float64)
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "deltas", deltas)
        if depths.ndim != 1 or depths.shape != deltas.shape:
            raise GeometryError("depths and deltas must be 1-d and equal length")
        if np.any(np.diff(depths) <= 0):
            raise GeometryError("depths must be strictly increasing")
        if np.any(deltas < 0):
            raise GeometryError("deltas must be nonnegative")


def projection_matrix(cam: CameraModel) -> np.ndarray:
    """3x4 product intrinsics @ [R|t] of the world-to-camera transform."""
    return cam.intrinsics @ cam.world_to_camera[:3, :]


def flat_projection(cam: CameraModel, pad: bool = True) -> np.ndarray:
    """Row-major flatten of the projection matrix.

    With ``pad`` the 3x4 matrix is extended by the row [0,0,0,1] to the
    16-float form consumed by the multi-view encoder.
    """
    mat = projection_matrix(cam)
    if pad:
        mat = np.vstack([mat, [0.0, 0.0, 0.0, 1.0]])
    return mat.reshape(-1)


def project(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    """Project world points (N, 3) to pixel coordinates (N, 2)."""
    points = np.asarray(points, dtype=np.float64)
    hom = np.concatenate([points, np.ones_like(points[..., :1])], axis=-1)
    mapped = hom @ projection_matrix(cam).T
    return mapped[..., :2] / mapped[..., 2:3]


def pixel_rays(cam: CameraModel, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized back-projection: pixel coords (N, 2) -> unit ray origins/directions."""
    uv = np.asarray(uv, dtype=np.float64)
    d_cam = np.stack(
        [
            -(uv[..., 0] - cam.cx) / cam.fx,
            -(uv[..., 1] - cam.cy) / cam.fy,
            -np.ones(uv.shape[:-1]),
        ],
        axis=-1,
    )
    rot = cam.cam_to_world[:3, :3]
    d_world = d_cam @ rot.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.position, d_world.shape).copy()
    return origins, d_world


def generate_rays(cam: CameraModel, pixels, t_near: float, t_far: float) -> list[Ray]:
    """Rays through the given integer pixel coordinates; rejects out-of-bounds pixels."""
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if np.any(uv[:, 0] < 0) or np.any(uv[:, 0] >= cam.width):
        raise GeometryError("pixel u out of bounds")
    if np.any(uv[:, 1] < 0) or np.any(uv[:, 1] >= cam.height):
        raise GeometryError("pixel v out of bounds")
    origins, dirs = pixel_rays(cam, uv)
    return [
        Ray(origin=o, direction=d, t_near=t_near, t_far=t_far)
        for o, d in zip(origins, dirs)
    ]


def camera_ray_grid(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Origins and directions for every pixel, shaped (H, W, 3)."""
    vv, uu = np.meshgrid(
        np.arange(cam.height, dtype=np.float64),
        np.arange(cam.width, dtype=np.float64),
        indexing="ij",
    )
    uv = np.stack([uu, vv], axis=-1)
    return pixel_rays(cam, uv)


def stratified_depths(
    t_near: float,
    t_far: float,
    n_rays: int,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One uniform draw per stratum of [t_near, t_far] split into equal bins, per ray."""
    if n_samples < 1:
        raise GeometryError("need at least one sample per ray")
    edges = np.linspace(t_near, t_far, n_samples + 1)
    lo, hi = edges[:-1], edges[1:]
    u = rng.random((n_rays, n_samples))
    return lo + u * (hi - lo)


def stratified_samples(ray: Ray, n: int, rng: np.random.Generator) -> RaySamples:
    depths = stratified_depths(ray.t_near, ray.t_far, 1, n, rng)[0]
    deltas = np.empty_like(depths)
    deltas[:-1] = np.diff(depths)
    deltas[-1] = ray.t_far - depths[-1]
    return RaySamples(depths=depths, deltas=deltas)


def deltas_from_depths(depths: np.ndarray, t_far: float) -> np.ndarray:
    """Per-sample spacing; the final delta runs from the last depth to t_far."""
    deltas = np.empty_like(depths)
    deltas[..., :-1] = np.diff(depths, axis=-1)
    deltas[..., -1] = t_far - depths[..., -1]
    return deltas


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for a camera at ``position`` looking at ``target``.

    The camera's -z axis points from position toward target; the result is a
    proper rotation (det +1).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    backward = position - target
    norm = np.linalg.norm(backward)
    if norm < 1e-12:
        raise GeometryError("camera position coincides with look-at target")
    backward = backward / norm
    right = np.cross(up, backward)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise GeometryError("up vector is parallel to the viewing direction")
    right = right / norm
    true_up = np.cross(backward, right)
    mat = np.eye(4)
    mat[:3, 0] = right
    mat[:3, 1] = true_up
    mat[:3, 2] = backward
    mat[:3, 3] = position
    return mat
