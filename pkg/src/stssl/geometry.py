"""Point clouds, rigid+scale transforms and the pinhole camera model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream

ORTHO_TOL = 1e-9


@dataclass
class PointCloud:
    """``points`` is an ``(N, 3)`` float array in meters."""

    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.label)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def extent(self) -> np.ndarray:
        lo, hi = self.bbox()
        return hi - lo


def _check_rotation(r: np.ndarray, tol: float, what: str) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {r.shape}")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"{what} is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise ValueError(f"{what} has determinant {det:.12g}, expected +1")
    return r


@dataclass
class RigidScaleTransform:
    """The map ``p -> scale * (rotation @ p) + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = _check_rotation(self.rotation, ORTHO_TOL, "rotation")
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls) -> "RigidScaleTransform":
        return cls()

    def is_identity(self) -> bool:
        return (
            np.array_equal(self.rotation, np.eye(3))
            and not self.translation.any()
            and self.scale == 1.0
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.rotation.T) + self.translation


def apply_transform(cloud: PointCloud, t: RigidScaleTransform) -> PointCloud:
    return cloud.with_points(t.apply(cloud.points))


def compose(second: RigidScaleTransform, first: RigidScaleTransform) -> RigidScaleTransform:
    """The transform equivalent to applying ``first`` and then ``second``."""
    return RigidScaleTransform(
        rotation=second.rotation @ first.rotation,
        translation=second.scale * (second.rotation @ first.translation) + second.translation,
        scale=second.scale * first.scale,
    )


def invert(t: RigidScaleTransform) -> RigidScaleTransform:
    rt = t.rotation.T
    return RigidScaleTransform(rotation=rt, translation=-(rt @ t.translation) / t.scale, scale=1.0 / t.scale)


def euler_rotation(ax: float, ay: float, az: float) -> np.ndarray:
    """``Rx(ax) @ Ry(ay) @ Rz(az)``, angles in radians."""
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide maps to the origin.
    """
    if not np.ptp(cloud.points, axis=0).any():
        # the mean of identical values can be off by rounding; do not blow that up
        return cloud.with_points(np.zeros_like(cloud.points))
    centered = cloud.points - cloud.points.mean(axis=0)
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    if radius > 0:
        centered = centered / radius
    return cloud.with_points(centered)


# ---------------------------------------------------------------- temporal transforms


@dataclass
class TemporalConfig:
    """Ranges for the synthetic view-change transform.

    Each of rotation / translation / scaling is included independently with
    ``part_prob``; the ``use_*`` switches remove a part entirely (ablation).
    """

    max_angle_deg: float = 15.0
    translate_frac: float = 0.1
    scale_range: tuple[float, float] = (0.8, 1.25)
    part_prob: float = 0.5
    use_rotation: bool = True
    use_translation: bool = True
    use_scaling: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        if not 0.0 <= self.part_prob <= 1.0:
            raise ValueError(f"part_prob must lie in [0, 1], got {self.part_prob}")
        if self.max_angle_deg < 0 or self.translate_frac < 0:
            raise ValueError("angle and translation bounds must be non-negative")
        self.scale_range = (float(lo), float(hi))

    @property
    def enabled(self) -> bool:
        return self.use_rotation or self.use_translation or self.use_scaling


def sample_temporal_transform(rng: RngStream, cfg: TemporalConfig, extent: np.ndarray) -> RigidScaleTransform:
    """Draw one view change for a cloud whose bounding box has size ``extent``.

    The same number of variates is consumed whatever the coin flips say, so
    downstream draws from ``rng`` do not depend on which parts were applied.
    """
    extent = np.asarray(extent, dtype=np.float64).reshape(3)
    coins = rng.random(3) < cfg.part_prob
    max_angle = np.deg2rad(cfg.max_angle_deg)
    angles = rng.uniform(-max_angle, max_angle, 3)
    shift = rng.uniform(-cfg.translate_frac, cfg.translate_frac, 3) * extent
    s = rng.uniform(*cfg.scale_range)

    rotation = euler_rotation(*angles) if coins[0] and cfg.use_rotation else np.eye(3)
    translation = shift if coins[1] and cfg.use_translation else np.zeros(3)
    scale = s if coins[2] and cfg.use_scaling else 1.0
    return RigidScaleTransform(rotation, translation, scale)


# ---------------------------------------------------------------- camera model


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        self.width, self.height = int(self.width), int(self.height)
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )


@dataclass
class CameraPose:
    """Camera-to-world map: ``p_world = rotation @ p_cam + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tol: float = field(default=ORTHO_TOL, repr=False)

    def __post_init__(self):
        self.rotation = _check_rotation(self.rotation, self.tol, "camera rotation")
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @property
    def center(self) -> np.ndarray:
        return self.translation


def backproject(depth: np.ndarray, intr: CameraIntrinsics, pose: CameraPose) -> PointCloud:
    """Lift every pixel with positive depth to a world-frame point.

    Pixel ``(u, v)`` is column ``u``, row ``v``; zero depth marks an
    invalid pixel and is skipped.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ValueError(f"depth frame {depth.shape} does not match {intr.height}x{intr.width} intrinsics")
    if np.any(depth < 0):
        raise ValueError("depth values must be non-negative")
    v, u = np.nonzero(depth > 0)
    if u.size == 0:
        raise ValueError("depth frame has no valid pixels")
    d = depth[v, u]
    cam = np.stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=1)
    return PointCloud(cam @ pose.rotation.T + pose.translation)


def project(points: np.ndarray, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """World points to ``(u, v, depth)`` rows; the inverse of :func:`backproject`."""
    cam = (np.asarray(points, dtype=np.float64) - pose.translation) @ pose.rotation
    z = cam[:, 2]
    return np.stack([cam[:, 0] * intr.fx / z + intr.cx, cam[:, 1] * intr.fy / z + intr.cy, z], axis=1)
