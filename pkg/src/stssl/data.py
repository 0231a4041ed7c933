"""Procedural datasets: labeled toy shapes and ray-cast depth sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, PointCloud, euler_rotation
from .rng import RngStream
from .sequence import DepthSequence

SHAPE_CLASSES = ("sphere", "cube-surface", "cylinder", "torus", "cone", "plane-with-noise")

TORUS_MAJOR = 1.0
TORUS_MINOR = 0.35
PLANE_BUMP = 0.05


@dataclass
class ToyShapeConfig:
    classes: tuple[str, ...] = ("sphere", "cube-surface", "cylinder", "torus", "cone")
    samples_per_class: int = 100
    points_per_shape: int = 1024
    noise_sigma: float = 0.01
    random_pose: bool = True

    def __post_init__(self):
        self.classes = tuple(self.classes)
        unknown = set(self.classes) - set(SHAPE_CLASSES)
        if unknown:
            raise ValueError(f"unknown shape classes {sorted(unknown)}; choose from {SHAPE_CLASSES}")
        if len(set(self.classes)) != len(self.classes) or len(self.classes) < 2:
            raise ValueError("need at least 2 distinct classes")
        if self.samples_per_class < 4:
            raise ValueError("samples_per_class must be >= 4")
        if self.points_per_shape < 1 or self.noise_sigma < 0:
            raise ValueError("points_per_shape must be positive and noise_sigma non-negative")


def _unit_vectors(rng: RngStream, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n):
    return _unit_vectors(rng, n)


def _cube_surface(rng, n):
    # six equal-area faces of [-1, 1]^3
    face = rng.integers(0, 6, n)
    axis, sign = face // 2, np.where(face % 2 == 0, -1.0, 1.0)
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    pts[np.arange(n), axis] = sign
    return pts


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * np.pi, n)
    return r * np.cos(a), r * np.sin(a)


def _cylinder(rng, n):
    # radius 1, height 2; lateral area 4 pi, caps 2 pi
    part = rng.random(n) * 6 * np.pi
    side = part < 4 * np.pi
    a = rng.uniform(0, 2 * np.pi, n)
    pts = np.stack([np.cos(a), np.sin(a), rng.uniform(-1, 1, n)], axis=1)
    cap = ~side
    x, y = _disk(rng, n, 1.0)
    pts[cap] = np.stack([x, y, np.where(rng.random(n) < 0.5, -1.0, 1.0)], axis=1)[cap]
    return pts


def _torus(rng, n):
    # surface density is proportional to R + r cos(v): rejection on v
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.uniform(0, 2 * np.pi, m)
        v = rng.uniform(0, 2 * np.pi, m)
        keep = rng.random(m) * (TORUS_MAJOR + TORUS_MINOR) <= TORUS_MAJOR + TORUS_MINOR * np.cos(v)
        u, v = u[keep], v[keep]
        ring = TORUS_MAJOR + TORUS_MINOR * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u), TORUS_MINOR * np.sin(v)], axis=1)])
    return out[:n]


def _cone(rng, n):
    # base radius 1 at z = -1, apex at z = 1
    slant = np.sqrt(1.0 + 4.0)
    lateral, base = np.pi * slant, np.pi
    side = rng.random(n) * (lateral + base) < lateral
    # radius from the apex: uniform area on a cone means r ~ sqrt(U)
    t = np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * np.pi, n)
    pts = np.stack([t * np.cos(a), t * np.sin(a), 1.0 - 2.0 * t], axis=1)
    x, y = _disk(rng, n, 1.0)
    pts[~side] = np.stack([x, y, -np.ones(n)], axis=1)[~side]
    return pts


def _plane_with_noise(rng, n):
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    pts[:, 2] = rng.normal(0.0, PLANE_BUMP, n)
    return pts


_SAMPLERS = {
    "sphere": _sphere,
    "cube-surface": _cube_surface,
    "cylinder": _cylinder,
    "torus": _torus,
    "cone": _cone,
    "plane-with-noise": _plane_with_noise,
}


def random_rotation(rng: RngStream) -> np.ndarray:
    """Uniform rotation from a normalized random quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def sample_shape(name: str, rng: RngStream, n: int, noise_sigma: float = 0.0, random_pose: bool = False) -> np.ndarray:
    pts = _SAMPLERS[name](rng.child("surface"), n)
    if noise_sigma > 0:
        pts = pts + rng.child("noise").normal(0.0, noise_sigma, pts.shape)
    if random_pose:
        pose = rng.child("pose")
        pts = pts @ random_rotation(pose).T + pose.uniform(-0.5, 0.5, 3)
    return pts


def generate_toy_shapes(rng: RngStream, cfg: ToyShapeConfig) -> list[PointCloud]:
    """``samples_per_class`` clouds per class, class-major order, labels by class index."""
    out = []
    for label, name in enumerate(cfg.classes):
        for i in range(cfg.samples_per_class):
            pts = sample_shape(name, rng.child(name).child(i), cfg.points_per_shape, cfg.noise_sigma, cfg.random_pose)
            out.append(PointCloud(pts, label))
    return out


# ---------------------------------------------------------------- depth sequences


@dataclass
class SceneConfig:
    n_frames: int = 250
    width: int = 40
    height: int = 30
    fov_deg: float = 60.0
    n_objects: tuple[int, int] = (3, 6)
    wall_depth: float = 6.0
    floor_height: float = 1.2
    max_range: float = 10.0
    depth_quantum: float = 0.0  # 0 keeps full precision
    path_extent: float = 0.6
    max_yaw_deg: float = 20.0
    control_points: int = 5

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("a camera path needs at least 2 frames")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")
        lo, hi = self.n_objects
        if not 1 <= lo <= hi:
            raise ValueError(f"bad object count range {self.n_objects}")
        if self.control_points < 2:
            raise ValueError("need at least 2 spline control points")

    def intrinsics(self) -> CameraIntrinsics:
        f = 0.5 * self.width / np.tan(np.deg2rad(self.fov_deg) / 2)
        return CameraIntrinsics(f, f, (self.width - 1) / 2, (self.height - 1) / 2, self.width, self.height)


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - origin) @ self.normal) / denom
        return np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def intersect(self, origin, dirs):
        oc = origin - self.center
        a = (dirs * dirs).sum(axis=1)
        b = 2 * dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > 0, t0, t1)
        return np.where((disc >= 0) & (t > 0), t, np.inf)


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.lo - origin) * inv
            t2 = (self.hi - origin) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        t = np.where(tmin > 0, tmin, tmax)
        return np.where((tmax >= tmin) & (t > 0), t, np.inf)


def render_depth(primitives, intr: CameraIntrinsics, pose: CameraPose, max_range: float = np.inf) -> np.ndarray:
    """Ray-cast a depth frame; depth is the camera-frame z of the first hit
    (0 where nothing is hit within ``max_range``)."""
    v, u = np.mgrid[0: intr.height, 0: intr.width]
    cam_dirs = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u, dtype=float)], -1)
    cam_dirs = cam_dirs.reshape(-1, 3)
    # with unit camera z, the ray parameter equals depth
    world_dirs = cam_dirs @ pose.rotation.T
    t = np.full(len(world_dirs), np.inf)
    for prim in primitives:
        t = np.minimum(t, prim.intersect(pose.translation, world_dirs))
    t[~np.isfinite(t) | (t > max_range)] = 0.0
    return t.reshape(intr.height, intr.width)


def random_scene(rng: RngStream, cfg: SceneConfig) -> list:
    """A back wall, a floor, and a few spheres/boxes in front of the camera.

    Camera convention: x right, y down, z forward, so the floor is at
    ``y = +floor_height``.
    """
    prims: list = [
        Plane(np.array([0.0, 0.0, cfg.wall_depth]), np.array([0.0, 0.0, -1.0])),
        Plane(np.array([0.0, cfg.floor_height, 0.0]), np.array([0.0, -1.0, 0.0])),
    ]
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    for i in range(n):
        r = rng.child(i)
        center = np.array([r.uniform(-1.5, 1.5), r.uniform(-0.5, cfg.floor_height - 0.3), r.uniform(2.5, cfg.wall_depth - 1.0)])
        size = r.uniform(0.2, 0.5)
        if r.random() < 0.5:
            prims.append(Sphere(center, size))
        else:
            half = size * r.uniform(0.6, 1.4, 3)
            prims.append(Box(center - half, center + half))
    return prims


def _catmull_rom(ctrl: np.ndarray, n: int) -> np.ndarray:
    """Sample ``n`` points along a uniform Catmull-Rom spline through ``ctrl``."""
    p = np.concatenate([ctrl[:1], ctrl, ctrl[-1:]])
    segs = len(ctrl) - 1
    s = np.linspace(0.0, segs, n)
    i = np.minimum(s.astype(int), segs - 1)
    t = (s - i)[:, None]
    p0, p1, p2, p3 = p[i], p[i + 1], p[i + 2], p[i + 3]
    return 0.5 * (
        2 * p1 + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2 + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3
    )


def camera_path(rng: RngStream, cfg: SceneConfig) -> list[CameraPose]:
    """Smooth seeded trajectory: positions and yaw/pitch along splines."""
    m = cfg.control_points
    pos = rng.uniform(-cfg.path_extent, cfg.path_extent, (m, 3)) * np.array([1.0, 0.3, 1.0])
    lim = np.deg2rad(cfg.max_yaw_deg)
    ang = np.stack([rng.uniform(-lim / 3, lim / 3, m), rng.uniform(-lim, lim, m)], axis=1)
    if np.ptp(pos, axis=0).max() == 0 and np.ptp(ang, axis=0).max() == 0:
        raise ValueError("degenerate camera path: all control points coincide")
    positions = _catmull_rom(pos, cfg.n_frames)
    angles = _catmull_rom(ang, cfg.n_frames)
    return [CameraPose(euler_rotation(a[0], a[1], 0.0), p) for p, a in zip(positions, angles)]


def generate_depth_sequence(rng: RngStream, cfg: SceneConfig) -> DepthSequence:
    scene = random_scene(rng.child("scene"), cfg)
    poses = camera_path(rng.child("path"), cfg)
    intr = cfg.intrinsics()
    frames = []
    for pose in poses:
        d = render_depth(scene, intr, pose, cfg.max_range)
        if cfg.depth_quantum > 0:
            d = np.round(d / cfg.depth_quantum) * cfg.depth_quantum
        frames.append(d.astype(np.float32).astype(np.float64))
    return DepthSequence(frames, poses, intr)
