"""
From depth frames to natural pairs
==================================

A procedurally rendered desk scene: a camera drifts past a few primitives
and records depth. Keyframes are kept every 100 frames, and a natural pair
is two nearby keyframes lifted to 3D, expressed around the first camera's
center.
"""

import numpy as np

from stssl.data import SceneConfig, generate_depth_sequence
from stssl.geometry import backproject
from stssl.rng import RngStream
from stssl.sequence import SamplerConfig, sample_natural_pair, subsample_keyframes

rng = RngStream(3)
seq = generate_depth_sequence(rng.child("scene"), SceneConfig(width=64, height=48))
valid = np.mean([np.mean(f > 0) for f in seq.frames])
print(f"{len(seq)} frames of {seq.intrinsics.width}x{seq.intrinsics.height}, {100 * valid:.0f}% pixels hit something")

# camera motion between consecutive frames stays small
steps = [np.linalg.norm(b.center - a.center) for a, b in zip(seq.poses, seq.poses[1:])]
print(f"camera moves {np.mean(steps) * 100:.2f} cm per frame on average")

keys = subsample_keyframes(seq, 100)
print(f"{len(keys)} keyframes kept at stride 100")

# one frame back in 3D
cloud = backproject(seq.frames[0], seq.intrinsics, seq.poses[0])
print(f"frame 0 lifts to {len(cloud)} world points, depth range "
      f"{seq.frames[0][seq.frames[0] > 0].min():.2f}-{seq.frames[0].max():.2f} m")

# a natural pair from the keyframes
u, v = sample_natural_pair(keys, rng.child("pair"), SamplerConfig(window_len=3))
near = np.array([np.sqrt(((v.points[::20] - p) ** 2).sum(1)).min() for p in u.points[::20]])
print(f"pair sizes {len(u)} / {len(v)}; median nearest-neighbour gap {np.median(near):.3f} m")
