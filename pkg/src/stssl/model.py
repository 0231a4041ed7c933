"""PointNet-style encoder, MLP heads, and the online/target network pair."""

from __future__ import annotations

import copy
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import BnState, Tensor

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class ModelConfig:
    encoder_widths: tuple[int, ...] = (3, 64, 128, 256)
    head_hidden: int = 256
    projection_dim: int = 64
    encoder_bn: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if len(self.encoder_widths) < 2 or self.encoder_widths[0] != 3:
            raise ValueError(f"encoder widths must start at 3 and have >= 2 entries, got {self.encoder_widths}")
        if min(self.encoder_widths) < 1 or self.head_hidden < 1 or self.projection_dim < 1:
            raise ValueError("all widths must be positive")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def feature_dim(self) -> int:
        return self.encoder_widths[-1]


@dataclass
class Linear:
    weight: Tensor  # [fan_in, fan_out]
    bias: Tensor

    @classmethod
    def init(cls, rng: RngStream, fan_in: int, fan_out: int, dtype) -> "Linear":
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def _bn_params(prefix: str, bn: BnState | None):
    if bn is not None:
        yield f"{prefix}.bn.gamma", bn.gamma
        yield f"{prefix}.bn.beta", bn.beta


def _bn_buffers(prefix: str, bn: BnState | None):
    if bn is not None:
        yield f"{prefix}.bn.running_mean", bn, "running_mean"
        yield f"{prefix}.bn.running_var", bn, "running_var"


class Module:
    """Parameter/buffer enumeration shared by the encoder and heads."""

    def parameters(self):
        raise NotImplementedError

    def buffers(self):
        """Yields ``(name, owner, attribute)`` for every running statistic."""
        raise NotImplementedError

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(n, p.data) for n, p in self.parameters()]
        out += [(n, getattr(o, a)) for n, o, a in self.buffers()]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            p.data = _checked(arrays, name, p.data)
        for name, owner, attr in self.buffers():
            setattr(owner, attr, _checked(arrays, name, getattr(owner, attr)))

    def set_requires_grad(self, flag: bool) -> None:
        for _, p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    def clone(self):
        return copy.deepcopy(self)


def _checked(arrays, name, like):
    if name not in arrays:
        raise KeyError(f"missing array {name!r}")
    a = np.asarray(arrays[name])
    if a.shape != like.shape:
        raise ValueError(f"array {name!r} has shape {a.shape}, expected {like.shape}")
    return np.ascontiguousarray(a, dtype=like.dtype)


class Encoder(Module):
    """Shared per-point MLP (linear + BN + relu per layer) then max pooling."""

    def __init__(self, layers: list[tuple[Linear, BnState | None]]):
        self.layers = layers

    @classmethod
    def init(cls, rng: RngStream, cfg: ModelConfig) -> "Encoder":
        layers = []
        widths = cfg.encoder_widths
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            bn = BnState.create(b, dtype=cfg.np_dtype) if cfg.encoder_bn else None
            layers.append((Linear.init(rng.child(i), a, b, cfg.np_dtype), bn))
        return cls(layers)

    @property
    def width(self) -> int:
        return self.layers[-1][0].weight.shape[1]

    def parameters(self):
        for i, (lin, bn) in enumerate(self.layers):
            yield f"encoder.{i}.weight", lin.weight
            yield f"encoder.{i}.bias", lin.bias
            yield from _bn_params(f"encoder.{i}", bn)

    def buffers(self):
        for i, (_, bn) in enumerate(self.layers):
            yield from _bn_buffers(f"encoder.{i}", bn)


class MLPHead(Module):
    """linear -> BN -> relu -> linear. Used for both projector and predictor."""

    def __init__(self, name: str, fc1: Linear, bn: BnState, fc2: Linear):
        self.name = name
        self.fc1, self.bn, self.fc2 = fc1, bn, fc2

    @classmethod
    def init(cls, name: str, rng: RngStream, d_in: int, hidden: int, d_out: int, dtype) -> "MLPHead":
        return cls(
            name,
            Linear.init(rng.child("fc1"), d_in, hidden, dtype),
            BnState.create(hidden, dtype=dtype),
            Linear.init(rng.child("fc2"), hidden, d_out, dtype),
        )

    @property
    def in_width(self) -> int:
        return self.fc1.weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.fc2.weight.shape[1]

    def parameters(self):
        yield f"{self.name}.fc1.weight", self.fc1.weight
        yield f"{self.name}.fc1.bias", self.fc1.bias
        yield from _bn_params(self.name, self.bn)
        yield f"{self.name}.fc2.weight", self.fc2.weight
        yield f"{self.name}.fc2.bias", self.fc2.bias

    def buffers(self):
        yield from _bn_buffers(self.name, self.bn)


def encode(encoder: Encoder, batch: Tensor, mode: str = "train") -> Tensor:
    """``[B, N, 3]`` point batch to ``[B, d]`` global features."""
    if batch.ndim != 3 or batch.shape[2] != 3:
        raise T.ShapeError(f"encode expects [B, N, 3], got {batch.shape}")
    b, n, _ = batch.shape
    if n < 1:
        raise T.ShapeError("encode: clouds must have at least one point")
    h = T.reshape(batch, (b * n, 3))
    for lin, bn in encoder.layers:
        h = lin(h)
        if bn is not None:
            h = T.batch_norm(h, bn, mode)
        h = T.relu(h)
    return T.max_over_points(T.reshape(h, (b, n, encoder.width)))


def project(head: MLPHead, z: Tensor, mode: str = "train") -> Tensor:
    if z.ndim != 2 or z.shape[1] != head.in_width:
        raise T.ShapeError(f"{head.name}: input {z.shape} does not match width {head.in_width}")
    return head.fc2(T.relu(T.batch_norm(head.fc1(z), head.bn, mode)))


predict = project


@dataclass
class DualNetState:
    """Online branch (gradient-trained), target branch (EMA), predictor."""

    online_encoder: Encoder
    online_projector: MLPHead
    predictor: MLPHead
    target_encoder: Encoder
    target_projector: MLPHead
    config: ModelConfig = field(default_factory=ModelConfig)

    def online_modules(self) -> list[Module]:
        return [self.online_encoder, self.online_projector, self.predictor]

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [item for m in self.online_modules() for item in m.parameters()]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, m in (
            ("online", self.online_encoder),
            ("online", self.online_projector),
            ("online", self.predictor),
            ("target", self.target_encoder),
            ("target", self.target_projector),
        ):
            out += [(f"{prefix}.{n}", a) for n, a in m.named_arrays()]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, m in (
            ("online", self.online_encoder),
            ("online", self.online_projector),
            ("online", self.predictor),
            ("target", self.target_encoder),
            ("target", self.target_projector),
        ):
            m.load_arrays({k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + ".")})


def init(rng: RngStream, cfg: ModelConfig) -> DualNetState:
    """Fresh online weights; the target branch is an exact copy of them."""
    d = cfg.feature_dim
    encoder = Encoder.init(rng.child("encoder"), cfg)
    projector = MLPHead.init("projector", rng.child("projector"), d, cfg.head_hidden, cfg.projection_dim, cfg.np_dtype)
    predictor = MLPHead.init(
        "predictor", rng.child("predictor"), cfg.projection_dim, cfg.head_hidden, cfg.projection_dim, cfg.np_dtype
    )
    target_encoder = encoder.clone()
    target_projector = projector.clone()
    target_encoder.set_requires_grad(False)
    target_projector.set_requires_grad(False)
    return DualNetState(encoder, projector, predictor, target_encoder, target_projector, cfg)


# ---------------------------------------------------------------- checkpoints
#
# layout (all little-endian):
#   b"STSLCKPT" | u32 version | u32 n | n bytes UTF-8 config echo ("key = value" lines)
#   u32 array count, then per array:
#     u16 name length | name | u8 ndim | ndim x u64 dims | float64 data
#   32-byte SHA-256 of everything before it

CKPT_MAGIC = b"STSLCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: list[tuple[str, np.ndarray]], config_echo: str = "") -> None:
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    cfg = config_echo.encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", a.ndim)]
        parts += [struct.pack("<Q", d) for d in a.shape]
        parts.append(a.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    """Returns ``(arrays in file order, config echo)``."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CKPT_MAGIC) + 32 or raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    pos = len(CKPT_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise CheckpointError(f"{path}: truncated at offset {pos}")
        vals = struct.unpack_from(fmt, body, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (n,) = take("<I")
    echo = body[pos: pos + n].decode("utf-8")
    pos += n
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = take("<H")
        name = body[pos: pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = take("<B")
        shape = take(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + size > len(body):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes")
    return arrays, echo


def encoder_from_arrays(arrays: dict[str, np.ndarray], cfg: ModelConfig) -> Encoder:
    """Rebuild an encoder from checkpoint arrays (either encoder-only or full state)."""
    enc = Encoder.init(RngStream(0), cfg)
    if any(k.startswith("online.") for k in arrays):
        arrays = {k[len("online."):]: v for k, v in arrays.items() if k.startswith("online.encoder.")}
    enc.load_arrays(arrays)
    return enc
