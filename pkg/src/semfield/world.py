"""Analytic 3D scene sampling, an exact first-hit ray tracer producing
multi-view observations, and the toy continuous-control reach environment.

Scenes hold sphere/box primitives with per-primitive color and semantic class.
The effector (a controllable sphere) chases a target sphere; reward is the
negative effector-target distance plus a success bonus inside the success
radius. Rendering is deterministic: identical scene and cameras give
bit-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraModel, camera_ray_grid, look_at

BACKGROUND_CLASS = 0

# class palette: 0 background, 1 effector, 2 target, 3 box distractor, 4 sphere distractor
CLASS_COLORS = np.array(
    [
        [0.10, 0.10, 0.12],
        [0.85, 0.20, 0.15],
        [0.20, 0.82, 0.30],
        [0.25, 0.35, 0.85],
        [0.45, 0.80, 0.25],
    ]
)
N_CLASSES = len(CLASS_COLORS)

LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
AMBIENT = 0.35
RAY_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    color: np.ndarray
    class_id: int


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_size: np.ndarray
    color: np.ndarray
    class_id: int


Primitive = Sphere | Box


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[Primitive, ...]
    background: np.ndarray
    effector_index: int
    target_index: int

    def __post_init__(self):
        if self.effector_index == self.target_index:
            raise ValueError("effector and target must be distinct primitives")
        ids = sorted({p.class_id for p in self.primitives} | {BACKGROUND_CLASS})
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be dense starting at 0, got {ids}")

    @property
    def n_classes(self) -> int:
        return max(p.class_id for p in self.primitives) + 1

    @property
    def effector_position(self) -> np.ndarray:
        return self.primitives[self.effector_index].center

    @property
    def target_position(self) -> np.ndarray:
        return self.primitives[self.target_index].center

    def with_effector_at(self, position: np.ndarray) -> "SceneSpec":
        prims = list(self.primitives)
        prims[self.effector_index] = replace(prims[self.effector_index], center=np.asarray(position, dtype=np.float64))
        return replace(self, primitives=tuple(prims))


@dataclass
class MultiViewObservation:
    images: np.ndarray  # (V, H, W, 3) uint8
    masks: np.ndarray  # (V, H, W) uint8 class ids
    cameras: list[CameraModel]
    timestep: int = 0


@dataclass
class WorldConfig:
    resolution: int = 32
    views: int = 3
    horizon: int = 100
    action_limit: float = 0.05
    success_radius: float = 0.05
    seed: int = 0
    # scene geometry
    world_half_extent: float = 0.7
    spawn_xy: float = 0.55
    spawn_z: float = 0.3
    min_separation: float = 0.3
    effector_radius: float = 0.16
    target_radius: float = 0.16
    distractor_box_half: float = 0.12
    distractor_sphere_radius: float = 0.14
    # camera rig and rendering
    camera_distance: float = 3.0
    camera_elevation_deg: float = 30.0
    focal_at_32: float = 60.0
    t_near: float = 0.5
    t_far: float = 6.0

    def to_json_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "views": self.views,
            "horizon": self.horizon,
            "action_limit": self.action_limit,
            "success_radius": self.success_radius,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "WorldConfig":
        return cls(**{k: d[k] for k in d})


def camera_rig(cfg: WorldConfig) -> list[CameraModel]:
    """Fixed cameras at equal azimuth spacing, elevated, aimed at the origin."""
    res = cfg.resolution
    focal = cfg.focal_at_32 * res / 32.0
    elev = math.radians(cfg.camera_elevation_deg)
    cams = []
    for i in range(cfg.views):
        az = 2.0 * math.pi * i / cfg.views
        pos = cfg.camera_distance * np.array(
            [math.cos(elev) * math.cos(az), math.cos(elev) * math.sin(az), math.sin(elev)]
        )
        cams.append(
            CameraModel(
                fx=focal, fy=focal, cx=(res - 1) / 2.0, cy=(res - 1) / 2.0,
                width=res, height=res, cam_to_world=look_at(pos, [0.0, 0.0, 0.0]),
            )
        )
    return cams


def sample_scene(rng: np.random.Generator, cfg: WorldConfig | None = None) -> SceneSpec:
    """Random positions for effector, target, and two distractors, kept apart."""
    cfg = cfg or WorldConfig()

    def draw(existing):
        while True:
            p = np.array(
                [
                    rng.uniform(-cfg.spawn_xy, cfg.spawn_xy),
                    rng.uniform(-cfg.spawn_xy, cfg.spawn_xy),
                    rng.uniform(-cfg.spawn_z, cfg.spawn_z),
                ]
            )
            if all(np.linalg.norm(p - q) >= cfg.min_separation for q in existing):
                return p

    effector = draw([])
    target = draw([effector])
    box_pos = draw([effector, target])
    sphere_pos = draw([effector, target, box_pos])
    prims = (
        Sphere(center=effector, radius=cfg.effector_radius, color=CLASS_COLORS[1].copy(), class_id=1),
        Sphere(center=target, radius=cfg.target_radius, color=CLASS_COLORS[2].copy(), class_id=2),
        Box(center=box_pos, half_size=np.full(3, cfg.distractor_box_half), color=CLASS_COLORS[3].copy(), class_id=3),
        Sphere(center=sphere_pos, radius=cfg.distractor_sphere_radius, color=CLASS_COLORS[4].copy(), class_id=4),
    )
    return SceneSpec(
        primitives=prims, background=CLASS_COLORS[0].copy(), effector_index=0, target_index=1
    )


def intersect_sphere(sphere: Sphere, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive hit depth per ray, +inf where the ray misses."""
    oc = origins - sphere.center
    b = np.einsum("...k,...k->...", oc, dirs)
    c = np.einsum("...k,...k->...", oc, oc) - sphere.radius**2
    disc = b * b - c
    hit = disc >= 0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sqrt_disc
    t_far = -b + sqrt_disc
    t = np.where(t_near > RAY_EPS, t_near, t_far)
    return np.where(hit & (t > RAY_EPS), t, np.inf)


def intersect_box(box: Box, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    safe = np.where(np.abs(dirs) < 1e-12, np.copysign(1e-12, dirs), dirs)
    inv = 1.0 / safe
    lo = (box.center - box.half_size - origins) * inv
    hi = (box.center + box.half_size - origins) * inv
    t1 = np.minimum(lo, hi)
    t2 = np.maximum(lo, hi)
    t_enter = t1.max(axis=-1)
    t_exit = t2.min(axis=-1)
    t = np.where(t_enter > RAY_EPS, t_enter, t_exit)
    hit = (t_exit >= t_enter) & (t > RAY_EPS)
    return np.where(hit, t, np.inf)


def intersect(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    if isinstance(prim, Sphere):
        return intersect_sphere(prim, origins, dirs)
    return intersect_box(prim, origins, dirs)


def surface_normal(prim: Primitive, points: np.ndarray) -> np.ndarray:
    if isinstance(prim, Sphere):
        return (points - prim.center) / prim.radius
    rel = (points - prim.center) / prim.half_size
    axis = np.argmax(np.abs(rel), axis=-1)
    normals = np.zeros_like(points)
    rows = np.arange(points.shape[0])
    normals[rows, axis] = np.sign(rel[rows, axis])
    return normals


def shade(color: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Flat color with a fixed-light Lambert term, clipped to [0, 1]."""
    lambert = np.clip(normals @ LIGHT_DIR, 0.0, None)
    lit = color * (AMBIENT + (1.0 - AMBIENT) * lambert)[..., None]
    return np.clip(lit, 0.0, 1.0)


def trace(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """First-hit depths and primitive indices; index -1 means background."""
    flat_o = origins.reshape(-1, 3)
    flat_d = dirs.reshape(-1, 3)
    depths = np.stack([intersect(p, flat_o, flat_d) for p in scene.primitives])
    best = depths.argmin(axis=0)
    t = depths[best, np.arange(flat_o.shape[0])]
    prim_idx = np.where(np.isfinite(t), best, -1)
    return t.reshape(origins.shape[:-1]), prim_idx.reshape(origins.shape[:-1])


def render_view(scene: SceneSpec, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    origins, dirs = camera_ray_grid(camera)
    t, prim_idx = trace(scene, origins, dirs)
    h, w = t.shape
    image = np.tile(np.clip(scene.background, 0, 1), (h, w, 1))
    mask = np.full((h, w), BACKGROUND_CLASS, dtype=np.uint8)
    flat_idx = prim_idx.reshape(-1)
    flat_t = t.reshape(-1)
    flat_img = image.reshape(-1, 3)
    flat_mask = mask.reshape(-1)
    for i, prim in enumerate(scene.primitives):
        sel = flat_idx == i
        if not sel.any():
            continue
        points = origins.reshape(-1, 3)[sel] + flat_t[sel, None] * dirs.reshape(-1, 3)[sel]
        normals = surface_normal(prim, points)
        flat_img[sel] = shade(prim.color, normals)
        flat_mask[sel] = prim.class_id
    image8 = np.round(flat_img.reshape(h, w, 3) * 255.0).astype(np.uint8)
    return image8, flat_mask.reshape(h, w)


def render_views(scene: SceneSpec, cameras: list[CameraModel], timestep: int = 0) -> MultiViewObservation:
    images, masks = [], []
    for cam in cameras:
        img, msk = render_view(scene, cam)
        images.append(img)
        masks.append(msk)
    return MultiViewObservation(
        images=np.stack(images), masks=np.stack(masks), cameras=list(cameras), timestep=timestep
    )


class EnvError(RuntimeError):
    pass


class ReachEnv:
    """Dense-reward reach task: move the effector sphere to the target sphere.

    Dynamics are deterministic given (state, action); all randomness enters
    through reset(seed).
    """

    def __init__(self, cfg: WorldConfig | None = None):
        self.cfg = cfg or WorldConfig()
        self.cameras = camera_rig(self.cfg)
        self.scene: SceneSpec | None = None
        self.steps = 0
        self.done = True

    @property
    def action_dim(self) -> int:
        return 3

    def _observe(self) -> MultiViewObservation:
        return render_views(self.scene, self.cameras, timestep=self.steps)

    def reset(self, seed: int) -> MultiViewObservation:
        rng = np.random.default_rng(seed)
        self.scene = sample_scene(rng, self.cfg)
        self.steps = 0
        self.done = False
        return self._observe()

    def distance(self) -> float:
        return float(np.linalg.norm(self.scene.effector_position - self.scene.target_position))

    def step(self, action) -> tuple[MultiViewObservation, float, bool, dict]:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)[:3]
        action = np.clip(action, -self.cfg.action_limit, self.cfg.action_limit)
        new_pos = np.clip(
            self.scene.effector_position + action,
            -self.cfg.world_half_extent,
            self.cfg.world_half_extent,
        )
        self.scene = self.scene.with_effector_at(new_pos)
        self.steps += 1
        dist = self.distance()
        success = dist < self.cfg.success_radius
        reward = -dist + (1.0 if success else 0.0)
        self.done = success or self.steps >= self.cfg.horizon
        info = {"success": success, "distance": dist}
        return self._observe(), reward, self.done, info


def scripted_expert_action(scene: SceneSpec, cfg: WorldConfig, gain: float = 1.0) -> np.ndarray:
    """Proportional-to-displacement controller toward the target."""
    delta = gain * (scene.target_position - scene.effector_position)
    return np.clip(delta, -cfg.action_limit, cfg.action_limit)


def collect_offline_dataset(
    cfg: WorldConfig,
    n_records: int,
    seed: int,
    expert_mix: float = 0.5,
):
    """Observations from episodes driven by an expert/random action mix.

    The expert share of timesteps tracks ``expert_mix`` to within one step.
    Yields (record_index, MultiViewObservation).
    """
    if n_records < 1:
        raise ValueError("need at least one record")
    rng = np.random.default_rng(seed)
    env = ReachEnv(cfg)
    produced = 0
    expert_steps = 0
    total_steps = 0
    episode = 0
    while produced < n_records:
        obs = env.reset(seed=int(rng.integers(0, 2**31 - 1)))
        episode += 1
        yield produced, obs
        produced += 1
        while produced < n_records and not env.done:
            use_expert = expert_steps < expert_mix * (total_steps + 1)
            if use_expert:
                action = scripted_expert_action(env.scene, cfg)
                expert_steps += 1
            else:
                action = rng.uniform(-cfg.action_limit, cfg.action_limit, size=3)
            total_steps += 1
            obs, _, _, _ = env.step(action)
            yield produced, obs
            produced += 1
