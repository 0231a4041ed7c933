"""Temporal pair construction from depth sequences and static shapes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    PointCloud,
    TemporalConfig,
    apply_transform,
    backproject,
    sample_temporal_transform,
)
from .rng import RngStream


@dataclass
class DepthSequence:
    """Row-major depth frames (meters, 0 = invalid) with camera-to-world poses."""

    frames: list[np.ndarray]
    poses: list[CameraPose]
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if len(self.frames) != len(self.poses):
            raise ValueError(f"{len(self.frames)} frames but {len(self.poses)} poses")
        if len(self.frames) < 2:
            raise ValueError("a depth sequence needs at least 2 frames")
        shape = (self.intrinsics.height, self.intrinsics.width)
        for i, f in enumerate(self.frames):
            if np.shape(f) != shape:
                raise ValueError(f"frame {i} has shape {np.shape(f)}, expected {shape}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class SamplerConfig:
    keyframe_stride: int = 100
    window_len: int = 3
    synthetic_steps: int = 1
    enhance_natural: bool = True
    temporal: TemporalConfig = field(default_factory=TemporalConfig)

    def __post_init__(self):
        if self.keyframe_stride < 1:
            raise ValueError("keyframe_stride must be >= 1")
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if self.synthetic_steps < 1:
            raise ValueError("synthetic_steps must be >= 1")


def subsample_keyframes(seq: DepthSequence, stride: int) -> DepthSequence:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    idx = range(0, len(seq), stride)
    if len(idx) < 2:
        raise ValueError(f"stride {stride} leaves fewer than 2 of {len(seq)} frames")
    return DepthSequence([seq.frames[i] for i in idx], [seq.poses[i] for i in idx], seq.intrinsics)


def sample_frame_indices(n_frames: int, rng: RngStream, window_len: int) -> tuple[int, int]:
    """Two distinct frame indices from a uniformly placed window."""
    if window_len > n_frames:
        raise ValueError(f"window of {window_len} frames does not fit a {n_frames}-frame sequence")
    start = int(rng.integers(0, n_frames - window_len + 1))
    a, b = rng.choice(window_len, 2, replace=False)
    return start + int(a), start + int(b)


def sample_natural_pair(seq: DepthSequence, rng: RngStream, cfg: SamplerConfig) -> tuple[PointCloud, PointCloud]:
    """Back-project two frames of one window into a shared frame.

    Both clouds are translated so the camera center of the first sampled
    frame sits at the origin. ``seq`` is expected to be keyframed already.
    """
    i, j = sample_frame_indices(len(seq), rng, cfg.window_len)
    origin = seq.poses[i].center
    cu = backproject(seq.frames[i], seq.intrinsics, seq.poses[i])
    cv = backproject(seq.frames[j], seq.intrinsics, seq.poses[j])
    return cu.with_points(cu.points - origin), cv.with_points(cv.points - origin)


def temporal_chain(cloud: PointCloud, rng: RngStream, cfg: TemporalConfig, steps: int) -> PointCloud:
    """Apply ``steps`` consecutively sampled view changes."""
    for k in range(steps):
        t = sample_temporal_transform(rng.child(k), cfg, cloud.extent())
        cloud = apply_transform(cloud, t)
    return cloud


def make_synthetic_pair(cloud: PointCloud, rng: RngStream, cfg: SamplerConfig) -> tuple[PointCloud, PointCloud]:
    """Two independently transformed views of one static cloud."""
    return (
        temporal_chain(cloud, rng.child("u"), cfg.temporal, cfg.synthetic_steps),
        temporal_chain(cloud, rng.child("v"), cfg.temporal, cfg.synthetic_steps),
    )


def enhance_pair(pair: tuple[PointCloud, PointCloud], rng: RngStream, cfg: SamplerConfig) -> tuple[PointCloud, PointCloud]:
    if not cfg.enhance_natural:
        return pair
    u, v = pair
    return (
        temporal_chain(u, rng.child("u"), cfg.temporal, 1),
        temporal_chain(v, rng.child("v"), cfg.temporal, 1),
    )


class SyntheticPairs:
    """Pair source over static clouds (one pair per sampled shape)."""

    def __init__(self, clouds: list[PointCloud], cfg: SamplerConfig):
        if not clouds:
            raise ValueError("empty dataset")
        self.clouds = clouds
        self.cfg = cfg

    def __len__(self) -> int:
        return len(self.clouds)

    def pair(self, index: int, rng: RngStream) -> tuple[PointCloud, PointCloud]:
        return make_synthetic_pair(self.clouds[index], rng, self.cfg)


class NaturalPairs:
    """Pair source over depth sequences, keyframed on construction."""

    def __init__(self, sequences: list[DepthSequence], cfg: SamplerConfig):
        if not sequences:
            raise ValueError("empty dataset")
        self.sequences = [subsample_keyframes(s, cfg.keyframe_stride) for s in sequences]
        for s in self.sequences:
            if len(s) < cfg.window_len:
                raise ValueError(f"window_len {cfg.window_len} exceeds the {len(s)} keyframes of a sequence")
        self.cfg = cfg

    def __len__(self) -> int:
        return len(self.sequences)

    def pair(self, index: int, rng: RngStream) -> tuple[PointCloud, PointCloud]:
        pair = sample_natural_pair(self.sequences[index], rng.child("frames"), self.cfg)
        return enhance_pair(pair, rng.child("enhance"), self.cfg)
