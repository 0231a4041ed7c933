"""Central finite-difference checks for every differentiable operation.

Each registered case builds random leaves and a closure computing a tensor
from them. The analytic gradient of ``sum(out * w)`` for a random ``w`` is
compared with central differences of the same scalar, perturbing each leaf
entry in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .model import Encoder, MLPHead, ModelConfig, encode, predict, project
from .rng import RngStream
from .tensor import BnState, Tape, Tensor
from .train import byol_loss, total_loss

STEP = 1e-5
TOLERANCE = 1e-4

Case = Callable[[RngStream], tuple[Callable[[], Tensor], list[Tensor]]]
REGISTRY: dict[str, Case] = {}


def register(name: str):
    def deco(fn: Case) -> Case:
        REGISTRY[name] = fn
        return fn

    return deco


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _dims(rng: RngStream, k: int, lo: int = 1, hi: int = 4) -> list[int]:
    return [int(v) for v in rng.integers(lo, hi + 1, k)]


def _away_from_zero(rng: RngStream, shape, margin: float = 1e-2) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|)`` in the 2-norm, with a tiny floor."""
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-10))


def check_case(fn: Callable[[], Tensor], leaves: list[Tensor], rng: RngStream, step: float = STEP) -> float:
    for leaf in leaves:
        leaf.grad = None
    with Tape() as tape:
        out = fn()
        w = rng.normal(size=out.shape)
        loss = T.sum(T.mul(out, Tensor(w)))
    tape.backward(loss)
    analytic = np.concatenate(
        [(lf.grad if lf.grad is not None else np.zeros_like(lf.data)).ravel() for lf in leaves]
    )

    def value() -> float:
        return float((fn().data * w).sum())

    numeric = []
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = value()
            flat[i] = orig - step
            fm = value()
            flat[i] = orig
            numeric.append((fp - fm) / (2 * step))
    return relative_error(analytic, np.array(numeric))


# ---------------------------------------------------------------- primitive ops


@register("matmul")
def _matmul(rng):
    m, k, n = _dims(rng, 3)
    a, b = _leaf(rng.normal(size=(m, k))), _leaf(rng.normal(size=(k, n)))
    return (lambda: T.matmul(a, b)), [a, b]


@register("linear")
def _linear(rng):
    m, k, n = _dims(rng, 3)
    x, w, b = _leaf(rng.normal(size=(m, k))), _leaf(rng.normal(size=(k, n))), _leaf(rng.normal(size=n))
    return (lambda: T.linear(x, w, b)), [x, w, b]


def _binary(op):
    def case(rng):
        shape = tuple(_dims(rng, 2))
        a = _leaf(rng.normal(size=shape))
        if rng.random() < 0.5:
            b = _leaf(rng.normal(size=shape))
        else:
            b = _leaf(rng.normal())  # scalar-vs-tensor broadcasting
        if rng.random() < 0.5:
            return (lambda: op(a, b)), [a, b]
        return (lambda: op(b, a)), [a, b]

    return case


register("add")(_binary(T.add))
register("sub")(_binary(T.sub))
register("mul")(_binary(T.mul))


@register("scale")
def _scale(rng):
    x = _leaf(rng.normal(size=tuple(_dims(rng, 2))))
    c = float(rng.normal())
    return (lambda: T.scale(x, c)), [x]


@register("relu")
def _relu(rng):
    x = _leaf(_away_from_zero(rng, tuple(_dims(rng, 2))))
    return (lambda: T.relu(x)), [x]


@register("reshape")
def _reshape(rng):
    a, b = _dims(rng, 2)
    x = _leaf(rng.normal(size=(a, b)))
    return (lambda: T.reshape(x, (b, a))), [x]


@register("sum")
def _sum(rng):
    x = _leaf(rng.normal(size=tuple(_dims(rng, 2))))
    return (lambda: T.sum(x)), [x]


@register("mean")
def _mean(rng):
    x = _leaf(rng.normal(size=tuple(_dims(rng, 2))))
    return (lambda: T.mean(x)), [x]


def _bn_case(mode):
    def case(rng):
        b, d = int(rng.integers(3, 7)), int(rng.integers(1, 4))
        state = BnState.create(d)
        state.gamma = _leaf(rng.uniform(0.5, 1.5, d))
        state.beta = _leaf(rng.normal(size=d))
        state.running_mean = rng.normal(size=d)
        state.running_var = rng.uniform(0.5, 2.0, d)
        x = _leaf(rng.normal(size=(b, d)) * rng.uniform(0.5, 3.0))
        return (lambda: T.batch_norm(x, state, mode)), [x, state.gamma, state.beta]

    return case


register("batch_norm[train]")(_bn_case("train"))
register("batch_norm[eval]")(_bn_case("eval"))


@register("max_over_points")
def _max(rng):
    b, n, d = _dims(rng, 3)
    # distinct values at least 0.1 apart so no tie is within a step of flipping
    vals = rng.permutation(b * n * d) * 0.1 + rng.uniform(0, 0.01, b * n * d)
    x = _leaf(vals.reshape(b, n, d))
    return (lambda: T.max_over_points(x)), [x]


@register("l2_normalize")
def _l2(rng):
    b, d = _dims(rng, 2)
    x = _leaf(rng.normal(size=(b, d)) + 0.1)
    return (lambda: T.l2_normalize(x)), [x]


@register("cross_entropy")
def _xent(rng):
    b, c = _dims(rng, 2, 1, 5)
    x = _leaf(rng.normal(size=(b, c)))
    y = rng.integers(0, c, b)
    return (lambda: T.cross_entropy(x, y)), [x]


@register("byol_loss")
def _byol(rng):
    b, d = _dims(rng, 2, 2, 4)
    p = _leaf(rng.normal(size=(b, d)))
    t = rng.normal(size=(b, d))
    return (lambda: byol_loss(p, t)), [p]


@register("total_loss")
def _total(rng):
    b, d = _dims(rng, 2, 2, 4)
    pu, pv = _leaf(rng.normal(size=(b, d))), _leaf(rng.normal(size=(b, d)))
    tu, tv = rng.normal(size=(b, d)), rng.normal(size=(b, d))
    return (lambda: total_loss(pu, tv, pv, tu)), [pu, pv]


# ---------------------------------------------------------------- model chain

TOY = ModelConfig(encoder_widths=(3, 2, 2), head_hidden=4, projection_dim=2)
TOY_BATCH, TOY_POINTS = 4, 2


def _toy_modules(rng: RngStream):
    enc = Encoder.init(rng.child("enc"), TOY)
    proj = MLPHead.init("projector", rng.child("proj"), TOY.feature_dim, TOY.head_hidden, TOY.projection_dim, np.float64)
    pred = MLPHead.init("predictor", rng.child("pred"), TOY.projection_dim, TOY.head_hidden, TOY.projection_dim, np.float64)
    for m in (enc, proj, pred):
        for _, p in m.parameters():
            # non-trivial biases/BN affine so every parameter gets a gradient
            p.data = p.data + rng.normal(0.0, 0.3, p.shape)
    x = _leaf(rng.normal(size=(TOY_BATCH, TOY_POINTS, 3)))
    return enc, proj, pred, x


def _params(*mods) -> list[Tensor]:
    return [p for m in mods for _, p in m.parameters()]


@register("encode")
def _encode(rng):
    enc, _, _, x = _toy_modules(rng)
    return (lambda: encode(enc, x, "train")), [x] + _params(enc)


@register("project")
def _project(rng):
    _, proj, _, _ = _toy_modules(rng)
    z = _leaf(rng.normal(size=(TOY_BATCH, TOY.feature_dim)))
    return (lambda: project(proj, z, "train")), [z] + _params(proj)


@register("predict(project(encode))")
def _chain(rng):
    enc, proj, pred, x = _toy_modules(rng)
    return (lambda: predict(pred, project(proj, encode(enc, x, "train"), "train"), "train")), [x] + _params(enc, proj, pred)


# ---------------------------------------------------------------- suite


@dataclass
class CheckResult:
    name: str
    trials: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_suite(trials: int = 100, seed: int = 0, names=None) -> list[CheckResult]:
    root = RngStream(seed).child("gradcheck")
    results = []
    for name in names or REGISTRY:
        worst = 0.0
        for i in range(trials):
            rng = root.child(name).child(i)
            fn, leaves = REGISTRY[name](rng.child("build"))
            worst = max(worst, check_case(fn, leaves, rng.child("check")))
        results.append(CheckResult(name, trials, worst))
    return results
