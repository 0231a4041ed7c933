"""Spatial augmentations that turn a sampled cloud into a network input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, normalize_unit_sphere
from .rng import RngStream

MAX_RESAMPLES = 10
_ASPECT_TRIES = 100


def _ordered(name: str, rng: tuple) -> tuple[float, float]:
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise ValueError(f"{name} must be ordered low <= high, got {rng}")
    return lo, hi


@dataclass
class AugmentationConfig:
    crop_volume_range: tuple[float, float] = (0.6, 1.0)
    crop_aspect_range: tuple[float, float] = (0.75, 1.33)
    cutout_dim_range: tuple[float, float] = (0.1, 0.4)
    jitter_max: float = 0.05
    dropout_ratio_range: tuple[float, float] = (0.0, 0.7)
    target_points: int = 512
    crop_prob: float = 0.5
    cutout_prob: float = 0.5
    normalize: bool = True
    min_surviving_points: int = 16

    def __post_init__(self):
        self.crop_volume_range = _ordered("crop_volume_range", self.crop_volume_range)
        self.crop_aspect_range = _ordered("crop_aspect_range", self.crop_aspect_range)
        self.cutout_dim_range = _ordered("cutout_dim_range", self.cutout_dim_range)
        self.dropout_ratio_range = _ordered("dropout_ratio_range", self.dropout_ratio_range)
        lo, hi = self.crop_volume_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop volumes must lie in (0, 1], got {self.crop_volume_range}")
        if not 0 < self.crop_aspect_range[0] <= 1 <= self.crop_aspect_range[1]:
            raise ValueError(f"crop aspect range must bracket 1, got {self.crop_aspect_range}")
        if not (0 <= self.cutout_dim_range[0] and self.cutout_dim_range[1] <= 1):
            raise ValueError(f"cutout dims must lie in [0, 1], got {self.cutout_dim_range}")
        if not (0 <= self.dropout_ratio_range[0] and self.dropout_ratio_range[1] < 1):
            raise ValueError(f"dropout ratios must lie in [0, 1), got {self.dropout_ratio_range}")
        for name in ("crop_prob", "cutout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.jitter_max < 0:
            raise ValueError("jitter_max must be non-negative")
        if not self.target_points >= self.min_surviving_points >= 4:
            raise ValueError(
                "need target_points >= min_surviving_points >= 4, got "
                f"{self.target_points} and {self.min_surviving_points}"
            )


def _box_mask(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.all((points >= lo) & (points <= hi), axis=1)
    return np.all((points > lo) & (points < hi), axis=1)


def sample_crop_edges(rng: RngStream, volume: float, aspect_range: tuple[float, float]) -> np.ndarray:
    """Relative cuboid edges with product ``volume``, every pairwise ratio in
    ``aspect_range`` and every edge at most 1 (so the box fits the bbox).

    Falls back to the cube ``volume ** (1/3)`` if rejection sampling fails,
    which is always feasible.
    """
    max_ratio = min(aspect_range[1], 1.0 / aspect_range[0])
    half = 0.5 * np.log(max_ratio)
    base = volume ** (1.0 / 3.0)
    for _ in range(_ASPECT_TRIES):
        w = rng.uniform(-half, half, 3)
        edges = base * np.exp(w - w.mean())
        if np.all(edges <= 1.0):
            return edges
    return np.full(3, base)


def crop_with_box(cloud: PointCloud, edges: np.ndarray, corner: np.ndarray) -> np.ndarray:
    """Keep-mask for a closed cuboid given in bbox-relative units: the box
    spans ``[corner, corner + edges]`` of the unit bbox."""
    lo, hi = cloud.bbox()
    ext = hi - lo
    return _box_mask(cloud.points, lo + corner * ext, lo + (corner + edges) * ext, closed=True)


def random_crop(cloud: PointCloud, rng: RngStream, cfg: AugmentationConfig) -> PointCloud:
    for _ in range(1 + MAX_RESAMPLES):
        volume = rng.uniform(*cfg.crop_volume_range)
        edges = sample_crop_edges(rng, volume, cfg.crop_aspect_range)
        corner = rng.uniform(0.0, 1.0, 3) * (1.0 - edges)
        keep = crop_with_box(cloud, edges, corner)
        if keep.sum() >= cfg.min_surviving_points:
            return cloud.with_points(cloud.points[keep])
    return cloud


def cutout_mask(cloud: PointCloud, center: np.ndarray, size: np.ndarray) -> np.ndarray:
    """Keep-mask removing points strictly inside the box ``center +- size/2``."""
    return ~_box_mask(cloud.points, center - size / 2, center + size / 2, closed=False)


def random_cutout(cloud: PointCloud, rng: RngStream, cfg: AugmentationConfig) -> PointCloud:
    lo, hi = cloud.bbox()
    ext = hi - lo
    for _ in range(1 + MAX_RESAMPLES):
        size = rng.uniform(*cfg.cutout_dim_range, 3) * ext
        center = lo + rng.uniform(0.0, 1.0, 3) * ext
        keep = cutout_mask(cloud, center, size)
        if keep.sum() >= cfg.min_surviving_points:
            return cloud.with_points(cloud.points[keep])
    return cloud


def random_jitter(cloud: PointCloud, rng: RngStream, cfg: AugmentationConfig) -> PointCloud:
    # signed offsets, bounded in magnitude by jitter_max
    offsets = rng.uniform(-cfg.jitter_max, cfg.jitter_max, cloud.points.shape)
    return cloud.with_points(cloud.points + offsets)


def dropout_count(n: int, ratio: float, min_surviving: int) -> int:
    return max(0, min(int(round(ratio * n)), n - min_surviving))


def random_dropout(cloud: PointCloud, rng: RngStream, cfg: AugmentationConfig) -> PointCloud:
    n = len(cloud)
    ratio = rng.uniform(*cfg.dropout_ratio_range)
    k = dropout_count(n, ratio, cfg.min_surviving_points)
    if k == 0:
        return cloud
    keep = np.ones(n, dtype=bool)
    keep[rng.choice(n, k, replace=False)] = False
    return cloud.with_points(cloud.points[keep])


def downsample(cloud: PointCloud, n: int, rng: RngStream) -> PointCloud:
    """Exactly ``n`` points: a uniform subset, or every point plus uniform repeats.

    A cloud that already has ``n`` points is returned as is.
    """
    if n < 1:
        raise ValueError(f"downsample target must be positive, got {n}")
    m = len(cloud)
    if m == n:
        return cloud
    if m > n:
        idx = rng.choice(m, n, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, n - m, replace=True)])
    return cloud.with_points(cloud.points[idx])


def apply_pipeline(cloud: PointCloud, rng: RngStream, cfg: AugmentationConfig) -> PointCloud:
    """crop? -> cutout? -> jitter -> dropout -> downsample -> normalize?

    Each stage draws from its own child stream, so switching a stage off
    leaves the randomness of the others untouched.
    """
    coins = rng.child("coins").random(2)
    if coins[0] < cfg.crop_prob:
        cloud = random_crop(cloud, rng.child("crop"), cfg)
    if coins[1] < cfg.cutout_prob:
        cloud = random_cutout(cloud, rng.child("cutout"), cfg)
    cloud = random_jitter(cloud, rng.child("jitter"), cfg)
    cloud = random_dropout(cloud, rng.child("dropout"), cfg)
    cloud = downsample(cloud, cfg.target_points, rng.child("downsample"))
    if cfg.normalize:
        cloud = normalize_unit_sphere(cloud)
    return cloud
