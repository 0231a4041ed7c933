"""Point-cloud and depth-sequence file formats.

ASCII XYZ
    one ``x y z`` triple per line; an optional ``# label <int>`` line.
Binary point cloud (``.pcb``)
    ``b"PCB1"`` | u64 count | count x 3 float32, little-endian.
Depth sequence directory
    ``intrinsics.txt`` (``fx fy cx cy width height``), then per frame
    ``frame_%06d.depth`` (``b"DPT1"`` | u32 width | u32 height | float32
    row-major meters) and ``frame_%06d.pose`` (12 numbers: row-major 3x3
    rotation, then translation; camera-to-world).
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, PointCloud
from .sequence import DepthSequence

PCB_MAGIC = b"PCB1"
DEPTH_MAGIC = b"DPT1"
POSE_TOL = 1e-6


class FormatError(ValueError):
    """Malformed file; the message names the file and line or byte offset."""


# ---------------------------------------------------------------- point clouds


def save_xyz(cloud: PointCloud, path) -> None:
    lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    if cloud.label is not None:
        lines.append(f"# label {int(cloud.label)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> PointCloud:
    points, label = [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            m = re.fullmatch(r"#\s*label\s+(-?\d+)", text)
            if m:
                label = int(m.group(1))
            continue
        fields = text.split()
        if len(fields) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(fields)}")
        try:
            points.append([float(v) for v in fields])
        except ValueError as err:
            raise FormatError(f"{path}:{lineno}: {err}") from err
    if not points:
        raise FormatError(f"{path}: no points")
    return PointCloud(np.array(points), label)


def save_pcb(cloud: PointCloud, path) -> None:
    data = np.ascontiguousarray(cloud.points, dtype="<f4")
    Path(path).write_bytes(PCB_MAGIC + struct.pack("<Q", len(data)) + data.tobytes())


def load_pcb(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if raw[:4] != PCB_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {PCB_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header, {12 - len(raw)} bytes missing at offset {len(raw)}")
    (count,) = struct.unpack_from("<Q", raw, 4)
    need = 12 + 12 * count
    if len(raw) < need:
        raise FormatError(f"{path}: truncated, {need - len(raw)} bytes missing at offset {len(raw)}")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} unexpected trailing bytes at offset {need}")
    pts = np.frombuffer(raw, dtype="<f4", count=3 * count, offset=12).reshape(count, 3)
    return PointCloud(pts.astype(np.float64))


def save_cloud(cloud: PointCloud, path) -> None:
    (save_pcb if str(path).endswith(".pcb") else save_xyz)(cloud, path)


def load_cloud(path) -> PointCloud:
    return (load_pcb if str(path).endswith(".pcb") else load_xyz)(path)


def load_cloud_dir(path) -> list[PointCloud]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix in (".xyz", ".pcb"))
    if not files:
        raise FormatError(f"{path}: no .xyz or .pcb files")
    return [load_cloud(f) for f in files]


# ---------------------------------------------------------------- depth sequences


def _numbers(path, count: int) -> list[float]:
    try:
        vals = [float(v) for v in Path(path).read_text().split()]
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err
    if len(vals) != count:
        raise FormatError(f"{path}: expected {count} numbers, got {len(vals)}")
    return vals


def save_depth_frame(depth: np.ndarray, path) -> None:
    h, w = depth.shape
    Path(path).write_bytes(DEPTH_MAGIC + struct.pack("<II", w, h) + np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth_frame(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DEPTH_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {DEPTH_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    w, h = struct.unpack_from("<II", raw, 4)
    need = 12 + 4 * w * h
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes for a {w}x{h} frame, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


def save_depth_sequence(seq: DepthSequence, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    k = seq.intrinsics
    (root / "intrinsics.txt").write_text(
        " ".join(repr(float(v)) for v in (k.fx, k.fy, k.cx, k.cy)) + f" {int(k.width)} {int(k.height)}\n"
    )
    for i, (frame, pose) in enumerate(zip(seq.frames, seq.poses)):
        save_depth_frame(frame, root / f"frame_{i:06d}.depth")
        vals = list(pose.rotation.reshape(-1)) + list(pose.translation)
        (root / f"frame_{i:06d}.pose").write_text(" ".join(repr(float(v)) for v in vals) + "\n")


def load_depth_sequence(path) -> DepthSequence:
    root = Path(path)
    fx, fy, cx, cy, w, h = _numbers(root / "intrinsics.txt", 6)
    if w != int(w) or h != int(h):
        raise FormatError(f"{root / 'intrinsics.txt'}: width and height must be integers")
    intr = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    depth_files = sorted(root.glob("frame_*.depth"))
    frames, poses = [], []
    for f in depth_files:
        pose_file = f.with_suffix(".pose")
        if not pose_file.exists():
            raise FormatError(f"{root}: missing pose file {pose_file.name} for {f.name}")
        vals = np.array(_numbers(pose_file, 12))
        try:
            pose = CameraPose(vals[:9].reshape(3, 3), vals[9:], tol=POSE_TOL)
        except ValueError as err:
            raise FormatError(f"{pose_file}: {err}") from err
        frames.append(load_depth_frame(f))
        poses.append(pose)
    return DepthSequence(frames, poses, intr)


def is_depth_sequence_dir(path) -> bool:
    return (Path(path) / "intrinsics.txt").exists()
