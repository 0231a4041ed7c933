"""Frozen-feature evaluation: feature extraction, linear probe, label subsets,
embedding export, and an optional fine-tuning protocol."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import downsample
from .geometry import PointCloud, normalize_unit_sphere
from .model import Encoder, encode
from .rng import RngStream
from .tensor import Tape, Tensor


@dataclass
class FeatureSet:
    features: np.ndarray  # [M, d]
    labels: np.ndarray  # [M] ints in [0, class_count)
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if len(self.labels) < self.class_count:
            raise ValueError(f"{len(self.labels)} samples for {self.class_count} classes")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "FeatureSet":
        return FeatureSet(self.features[idx], self.labels[idx], self.class_count)


def _cloud_stream(seed: int, cloud: PointCloud) -> RngStream:
    # keyed by content, so identical clouds always get identical samples
    return RngStream(seed).child(zlib.crc32(cloud.points.tobytes()))


def prepare_inputs(clouds: list[PointCloud], points_per_shape: int, seed: int = 0, normalize: bool = True) -> np.ndarray:
    out = []
    for c in clouds:
        c = downsample(c, points_per_shape, _cloud_stream(seed, c))
        if normalize:
            c = normalize_unit_sphere(c)
        out.append(c.points)
    return np.stack(out)


def encode_eval(encoder: Encoder, batch: np.ndarray, chunk: int = 64) -> np.ndarray:
    dtype = encoder.layers[0][0].weight.dtype
    rows = [encode(encoder, Tensor(batch[i: i + chunk].astype(dtype)), "eval").data for i in range(0, len(batch), chunk)]
    return np.concatenate(rows).astype(np.float64)


def extract_features(
    encoder: Encoder,
    clouds: list[PointCloud],
    points_per_shape: int = 512,
    seed: int = 0,
    normalize: bool = True,
    class_count: int | None = None,
) -> FeatureSet:
    """Global features of every cloud from the encoder in eval mode."""
    if not clouds:
        raise ValueError("empty dataset")
    labels = np.array([-1 if c.label is None else c.label for c in clouds])
    if np.any(labels < 0):
        raise ValueError("every cloud needs a label")
    feats = encode_eval(encoder, prepare_inputs(clouds, points_per_shape, seed, normalize))
    return FeatureSet(feats, labels, class_count or int(labels.max()) + 1)


# ---------------------------------------------------------------- linear probe


@dataclass
class ProbeConfig:
    reg: float = 1e-3
    iterations: int = 2000
    step: float = 0.1
    standardize: bool = True
    seed: int = 0


@dataclass
class LinearModel:
    weight: np.ndarray  # [d, C]
    bias: np.ndarray  # [C]
    mean: np.ndarray  # [d]
    scale: np.ndarray  # [d]

    @property
    def width(self) -> int:
        return self.weight.shape[0]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.width:
            raise ValueError(f"features of width {x.shape[-1]} for a model of width {self.width}")
        return ((x - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmax picks the lowest class id on ties
        return np.argmax(self.decision_function(x), axis=1)


def _step_size(cfg: ProbeConfig, it: int) -> float:
    if it >= 0.75 * cfg.iterations:
        return cfg.step * 0.25
    if it >= 0.5 * cfg.iterations:
        return cfg.step * 0.5
    return cfg.step


def train_linear_probe(train: FeatureSet, cfg: ProbeConfig | None = None) -> LinearModel:
    """One-vs-rest linear SVMs fit by full-batch gradient descent on the
    L2-regularized hinge loss ``mean(max(0, 1 - y f(x))) + reg/2 |w|^2``."""
    cfg = cfg or ProbeConfig()
    counts = np.bincount(train.labels, minlength=train.class_count)
    if np.any(counts == 0):
        raise ValueError(f"classes {np.flatnonzero(counts == 0).tolist()} have no training samples")
    x = train.features
    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
    else:
        mean, scale = np.zeros(train.width), np.ones(train.width)
    xs = (x - mean) / scale
    m, c = len(train), train.class_count
    y = -np.ones((m, c))
    y[np.arange(m), train.labels] = 1.0
    w = np.zeros((train.width, c))
    b = np.zeros(c)
    for it in range(cfg.iterations):
        margin = y * (xs @ w + b)
        coef = np.where(margin < 1.0, y, 0.0) / m
        gw = cfg.reg * w - xs.T @ coef
        gb = -coef.sum(axis=0)
        lr = _step_size(cfg, it)
        w -= lr * gw
        b -= lr * gb
    return LinearModel(w, b, mean, scale)


def evaluate(model: LinearModel, test: FeatureSet) -> float:
    if test.width != model.width:
        raise ValueError(f"test features have width {test.width}, model expects {model.width}")
    if len(test) == 0:
        raise ValueError("empty test set")
    return float(np.mean(model.predict(test.features) == test.labels))


def probe_accuracy(train: FeatureSet, test: FeatureSet, cfg: ProbeConfig | None = None) -> float:
    return evaluate(train_linear_probe(train, cfg), test)


# ---------------------------------------------------------------- label subsets


def semi_supervised_subset(labels, fraction: float, rng: RngStream, class_count: int | None = None) -> np.ndarray:
    """Uniform sample of ``round(fraction * M)`` indices covering every class.

    Missing classes are patched in by swapping one random member of the
    class for a random pick from an over-represented class. If the budget
    is smaller than the class count, exactly one index per class is taken.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    c = class_count or int(labels.max()) + 1
    members = [np.flatnonzero(labels == k) for k in range(c)]
    if any(len(mm) == 0 for mm in members):
        raise ValueError("every class needs at least one sample")
    m = len(labels)
    budget = int(round(fraction * m))
    if budget >= m:
        return np.arange(m)
    if budget < c:
        return np.sort([int(mm[rng.integers(0, len(mm))]) for mm in members])
    chosen = rng.choice(m, budget, replace=False)
    for k in range(c):
        if np.any(labels[chosen] == k):
            continue
        counts = np.bincount(labels[chosen], minlength=c)
        donors = np.flatnonzero(counts[labels[chosen]] > 1)
        slot = donors[rng.integers(0, len(donors))]
        chosen[slot] = members[k][rng.integers(0, len(members[k]))]
    return np.sort(chosen)


# ---------------------------------------------------------------- embedding files


def export_embeddings(fs: FeatureSet, path) -> None:
    """One line per sample: ``label f_1 ... f_d``, space separated."""
    with open(path, "w") as fh:
        for label, row in zip(fs.labels, fs.features):
            fh.write(" ".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def load_embeddings(path, class_count: int | None = None) -> FeatureSet:
    labels, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        try:
            labels.append(int(fields[0]))
            rows.append([float(v) for v in fields[1:]])
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: {err}") from err
        if len(rows[-1]) != len(rows[0]):
            raise ValueError(f"{path}:{lineno}: expected {len(rows[0])} features, got {len(rows[-1])}")
    if not rows:
        raise ValueError(f"{path}: no embeddings")
    labels = np.array(labels)
    return FeatureSet(np.array(rows), labels, class_count or int(labels.max()) + 1)


# ---------------------------------------------------------------- fine-tuning


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.05
    points_per_shape: int = 512
    seed: int = 0


def finetune(encoder: Encoder, clouds: list[PointCloud], class_count: int, cfg: FinetuneConfig | None = None):
    """Supervised training of a copy of ``encoder`` plus a linear head with
    softmax cross-entropy and plain SGD. Returns ``(encoder, head)``."""
    cfg = cfg or FinetuneConfig()
    enc = encoder.clone()
    enc.set_requires_grad(True)
    dtype = enc.layers[0][0].weight.dtype
    rng = RngStream(cfg.seed)
    bound = math.sqrt(1.0 / enc.width)
    w = Tensor(rng.child("head").uniform(-bound, bound, (enc.width, class_count)).astype(dtype), requires_grad=True)
    b = Tensor(np.zeros(class_count, dtype=dtype), requires_grad=True)
    x_all = prepare_inputs(clouds, cfg.points_per_shape, cfg.seed).astype(dtype)
    y_all = np.array([c.label for c in clouds])
    params = [p for _, p in enc.parameters()] + [w, b]
    for epoch in range(cfg.epochs):
        order = rng.child("epoch").child(epoch).permutation(len(clouds))
        for start in range(0, len(order) - 1, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            if len(idx) < 2:
                continue
            for p in params:
                p.grad = None
            with Tape() as tape:
                logits = T.linear(encode(enc, Tensor(x_all[idx]), "train"), w, b)
                loss = T.cross_entropy(logits, y_all[idx])
            tape.backward(loss)
            for p in params:
                if p.grad is not None:
                    p.data = p.data - cfg.lr * p.grad
    for p in params:
        p.grad = None
    head = LinearModel(w.data.astype(np.float64), b.data.astype(np.float64), np.zeros(enc.width), np.ones(enc.width))
    return enc, head
