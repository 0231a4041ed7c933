"""Self-supervised pre-training: symmetric normalized-MSE loss between an
online predictor and an EMA target network, optimized with LARS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import tensor as T
from .augment import AugmentationConfig, apply_pipeline
from .geometry import PointCloud
from .model import DualNetState, Encoder, ModelConfig, encode, init, predict, project, save_checkpoint
from .rng import RngStream
from .tensor import Tape, Tensor


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    base_lr: float = 0.2
    warmup_epochs: float = 10.0
    tau_start: float = 0.996
    trust_coeff: float = 1e-3
    weight_decay: float = 1.5e-6
    lars_momentum: float = 0.0
    seed: int = 0
    steps_per_epoch: int = 0  # 0: ceil(dataset size / batch size)
    target_bn_stats: str = "copy"  # or "ema"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs it)")
        if not 0.0 <= self.tau_start <= 1.0:
            raise ValueError(f"tau_start must lie in [0, 1], got {self.tau_start}")
        if self.target_bn_stats not in ("copy", "ema"):
            raise ValueError(f"target_bn_stats must be 'copy' or 'ema', got {self.target_bn_stats!r}")
        if not 0.0 <= self.lars_momentum < 1.0:
            raise ValueError("lars_momentum must lie in [0, 1)")


# ---------------------------------------------------------------- loss


def byol_loss(pred: Tensor, target) -> Tensor:
    """Mean over rows of ``2 - 2 cos(pred_i, target_i)``.

    ``target`` is treated as a constant; only ``pred`` receives gradients.
    """
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.ndim != 2 or pred.shape != tgt.shape:
        raise T.ShapeError(f"byol_loss: prediction {pred.shape} vs target {tgt.shape}")
    tnorm = np.sqrt((tgt * tgt).sum(axis=1, keepdims=True))
    if np.any(tnorm <= T.NORM_EPS):
        raise FloatingPointError("byol_loss: target has a zero-norm row")
    cos_sum = T.sum(T.mul(T.l2_normalize(pred), Tensor(tgt / tnorm)))
    return T.add(T.scale(cos_sum, -2.0 / pred.shape[0]), 2.0)


def total_loss(u_pred: Tensor, v_target, v_pred: Tensor, u_target) -> Tensor:
    """Symmetrized loss: predict view v's target from u, and u's from v."""
    return T.add(byol_loss(u_pred, v_target), byol_loss(v_pred, u_target))


# ---------------------------------------------------------------- schedules


def tau_schedule(k: int, total: int, tau_start: float = 0.996) -> float:
    """EMA decay ramping from ``tau_start`` at k=0 to 1 at k=total along a cosine."""
    if total <= 0 or not 0 <= k <= total:
        raise ValueError(f"step {k} outside [0, {total}]")
    # written so that k = 0 returns tau_start bit-exactly
    return tau_start + (1.0 - tau_start) * (1.0 - math.cos(math.pi * k / total)) / 2.0


def warmup_steps(cfg: TrainConfig, steps_per_epoch: int) -> int:
    return int(round(cfg.warmup_epochs * steps_per_epoch))


def cosine_lr(k: int, total: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warm-up to ``base_lr``, then cosine decay to 0 at ``total``."""
    if not 0 <= k <= total:
        raise ValueError(f"step {k} outside [0, {total}]")
    kw = warmup_steps(cfg, steps_per_epoch)
    if k < kw:
        return cfg.base_lr * k / kw
    if total == kw:
        return cfg.base_lr
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (k - kw) / (total - kw)))


# ---------------------------------------------------------------- optimizer


def lars_adapted(name: str) -> bool:
    """Weight matrices get trust-ratio scaling and weight decay; biases and
    batch-norm parameters take a plain SGD step."""
    return name.endswith(".weight")


def lars_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    trust_coeff: float,
    weight_decay: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """One LARS update; returns the new arrays (inputs are not modified).

    For an adapted matrix ``w`` with gradient ``g``::

        u = g + weight_decay * w
        rate = lr * trust_coeff * |w| / |u|     (lr if either norm is 0)
        w <- w - rate * u

    With ``momentum > 0`` the scaled update is accumulated in ``velocity``.
    """
    out = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = w
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}; step aborted")
        if lars_adapted(name):
            u = g + weight_decay * w
            wn, un = np.linalg.norm(w), np.linalg.norm(u)
            rate = lr * trust_coeff * wn / un if wn > 0 and un > 0 else lr
        else:
            u, rate = g, lr
        step = rate * u
        if momentum > 0.0 and velocity is not None:
            v = velocity.get(name)
            step = step if v is None else momentum * v + step
            velocity[name] = step
        out[name] = w - step
    return out


# ---------------------------------------------------------------- EMA


def ema_update(state: DualNetState, tau: float, bn_stats: str = "copy") -> None:
    """``target <- tau * target + (1 - tau) * online`` for encoder and projector.

    Running batch-norm statistics are copied from the online branch
    (``bn_stats="copy"``) or averaged with the same rule (``"ema"``).
    """
    for online, target in (
        (state.online_encoder, state.target_encoder),
        (state.online_projector, state.target_projector),
    ):
        for (n_on, p_on), (n_tg, p_tg) in zip(online.parameters(), target.parameters()):
            if n_on != n_tg or p_on.shape != p_tg.shape:
                raise T.ShapeError(f"online/target mismatch: {n_on} {p_on.shape} vs {n_tg} {p_tg.shape}")
            p_tg.data = tau * p_tg.data + (1.0 - tau) * p_on.data
        for (_, o_on, attr), (_, o_tg, _) in zip(online.buffers(), target.buffers()):
            src = getattr(o_on, attr)
            if bn_stats == "copy":
                setattr(o_tg, attr, src.copy())
            else:
                setattr(o_tg, attr, tau * getattr(o_tg, attr) + (1.0 - tau) * src)


# ---------------------------------------------------------------- training


class PairSource(Protocol):
    def __len__(self) -> int: ...

    def pair(self, index: int, rng: RngStream) -> tuple[PointCloud, PointCloud]: ...


def augment_batch(clouds: list[PointCloud], rng: RngStream, cfg: AugmentationConfig, dtype) -> np.ndarray:
    return np.stack([apply_pipeline(c, rng.child(i), cfg).points for i, c in enumerate(clouds)]).astype(dtype)


def forward_losses(state: DualNetState, xu: np.ndarray, xv: np.ndarray) -> tuple[Tape, Tensor]:
    """Online branch on a fresh tape, target branch off-tape (stop-gradient)."""
    with Tape() as tape:
        pu = predict(state.predictor, project(state.online_projector, encode(state.online_encoder, Tensor(xu))))
        pv = predict(state.predictor, project(state.online_projector, encode(state.online_encoder, Tensor(xv))))
    tu = project(state.target_projector, encode(state.target_encoder, Tensor(xu)))
    tv = project(state.target_projector, encode(state.target_encoder, Tensor(xv)))
    with tape:
        loss = total_loss(pu, tv, pv, tu)
    return tape, loss


class Pretrainer:
    """Owns the dual-network state and runs optimization steps."""

    def __init__(
        self,
        source: PairSource,
        cfg: TrainConfig,
        model_cfg: ModelConfig | None = None,
        aug_cfg: AugmentationConfig | None = None,
        state: DualNetState | None = None,
    ):
        if len(source) == 0:
            raise ValueError("empty dataset")
        self.source = source
        self.cfg = cfg
        self.model_cfg = model_cfg or ModelConfig()
        self.aug_cfg = aug_cfg or AugmentationConfig()
        self.root = RngStream(cfg.seed)
        self.state = state if state is not None else init(self.root.child("init"), self.model_cfg)
        self.steps_per_epoch = cfg.steps_per_epoch or math.ceil(len(source) / cfg.batch_size)
        self.velocity: dict[str, np.ndarray] = {}
        self.losses: list[float] = []

    def sample_pairs(self, k: int) -> list[tuple[PointCloud, PointCloud]]:
        rng = self.root.child("step").child(k)
        n = len(self.source)
        idx = rng.child("batch").choice(n, self.cfg.batch_size, replace=n < self.cfg.batch_size)
        pick = rng.child("pair")
        return [self.source.pair(int(i), pick.child(j)) for j, i in enumerate(idx)]

    def step(self, pairs: list[tuple[PointCloud, PointCloud]], k: int) -> tuple[float, float, float]:
        """One optimization step at step index ``k`` (1-based).

        Returns ``(loss, lr, tau)``.
        """
        total = self.cfg.steps
        rng = self.root.child("step").child(k).child("augment")
        dtype = self.model_cfg.np_dtype
        xu = augment_batch([p[0] for p in pairs], rng.child("u"), self.aug_cfg, dtype)
        xv = augment_batch([p[1] for p in pairs], rng.child("v"), self.aug_cfg, dtype)

        named = self.state.trainable_parameters()
        for _, p in named:
            p.grad = None
        tape, loss = forward_losses(self.state, xu, xv)
        tape.backward(loss)

        lr = cosine_lr(k, total, self.cfg, self.steps_per_epoch)
        new = lars_step(
            {n: p.data for n, p in named},
            {n: p.grad for n, p in named if p.grad is not None},
            lr,
            self.cfg.trust_coeff,
            self.cfg.weight_decay,
            self.cfg.lars_momentum,
            self.velocity,
        )
        for n, p in named:
            p.data = new[n].astype(p.data.dtype, copy=False)
            p.grad = None

        tau = tau_schedule(k, total, self.cfg.tau_start)
        ema_update(self.state, tau, self.cfg.target_bn_stats)
        value = loss.item()
        self.losses.append(value)
        return value, lr, tau

    def run(self, metrics_path=None, checkpoint_dir=None, config_echo: str = "") -> Encoder:
        log = open(metrics_path, "w") if metrics_path is not None else None
        try:
            for k in range(1, self.cfg.steps + 1):
                loss, lr, tau = self.step(self.sample_pairs(k), k)
                if log is not None:
                    log.write(f"{k} {loss!r} {lr!r} {tau!r}\n")
                if not math.isfinite(loss):
                    raise FloatingPointError(f"loss became non-finite at step {k}")
                every = self.cfg.checkpoint_every
                if checkpoint_dir is not None and every and k % every == 0:
                    path = Path(checkpoint_dir) / f"state_{k:06d}.ckpt"
                    save_checkpoint(path, self.state.named_arrays(), config_echo)
        finally:
            if log is not None:
                log.close()
        return self.state.online_encoder


def train(
    source: PairSource,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    aug_cfg: AugmentationConfig | None = None,
    metrics_path=None,
    checkpoint_dir=None,
) -> Encoder:
    """Run ``cfg.steps`` steps and keep only the online encoder."""
    return Pretrainer(source, cfg, model_cfg, aug_cfg).run(metrics_path, checkpoint_dir)
