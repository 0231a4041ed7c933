"""Dense tensors with define-by-run reverse-mode differentiation.

Only the handful of operations the point-cloud model needs are provided.
Operations are recorded on the innermost active :class:`Tape` whenever one
of their inputs requires a gradient; outside a tape nothing is recorded,
which is how stop-gradient is expressed::

    with Tape() as tape:
        loss = tensor.sum(tensor.relu(tensor.matmul(x, w)))
    tape.backward(loss)      # fills w.grad
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_local = threading.local()

NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An ndarray plus autodiff bookkeeping.

    ``node_id`` is set when the tensor is the output of an op recorded on a
    tape; leaves (parameters, inputs) have ``node_id is None``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    parents: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order; :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.released = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple, backward) -> None:
        out.requires_grad = True
        out.node_id = len(self.nodes)
        out.tape = self
        self.nodes.append(_Node(parents, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf
        that requires a gradient. Intermediate gradients are discarded.

        The recorded graph is released afterwards (it holds every
        activation), so a tape can be backpropagated only once."""
        if self.released:
            raise RuntimeError("tape already backpropagated; record the computation again")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("loss was not recorded on this tape")
        pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for nid in range(loss.node_id, -1, -1):
            g = pending.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                if parent.tape is self and parent.node_id is not None:
                    acc = pending.get(parent.node_id)
                    pending[parent.node_id] = pg if acc is None else acc + pg
                else:
                    parent.grad = np.array(pg, copy=True) if parent.grad is None else parent.grad + pg
        self.nodes.clear()
        self.released = True


def backward(loss: Tensor) -> None:
    """Backpropagate from ``loss`` through the tape that recorded it."""
    if loss.tape is None:
        raise ValueError("loss is not on a tape")
    loss.tape.backward(loss)


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        tape.record(out, parents, backward)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with the bias broadcast over rows."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    X, W = x.data, weight.data
    out = X @ W
    if bias is not None:
        out += bias.data

    def bw(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ W.T, X.T @ g, gb

    return _result(out, (x, weight, bias), bw)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from err
    return _result(out, (x,), lambda g: (g.reshape(src),))


# ---------------------------------------------------------------- elementwise


def _is_scalar(v) -> bool:
    return not isinstance(v, Tensor) or v.ndim == 0


def _binary_shapes(name: str, a, b) -> None:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
            raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")
    elif not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError(f"{name}: at least one operand must be a Tensor")


def _value(v):
    return v.data if isinstance(v, Tensor) else v


def _reduce_to(g: np.ndarray, operand) -> np.ndarray | None:
    if not isinstance(operand, Tensor):
        return None
    if operand.shape == g.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(operand.shape)


def add(a, b) -> Tensor:
    _binary_shapes("add", a, b)
    return _result(_value(a) + _value(b), (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    _binary_shapes("sub", a, b)
    return _result(_value(a) - _value(b), (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    _binary_shapes("mul", a, b)
    va, vb = _value(a), _value(b)

    def bw(g):
        return _reduce_to(g * vb, a), _reduce_to(g * va, b)

    return _result(va * vb, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bw(g):
        # strict inequality: the gradient at exactly 0 is 0
        return (g * (x.data > 0),)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, src).copy(),))


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.data.size)


def max_over_points(x: Tensor) -> Tensor:
    """``[B, N, d] -> [B, d]`` maximum over the point axis.

    The whole output gradient goes to one input per (cloud, feature): the
    first index attaining the maximum.
    """
    if x.ndim != 3:
        raise ShapeError(f"max_over_points expects [B, N, d], got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("max_over_points: no points to pool")
    out = x.data.max(axis=1)
    src = x.shape

    def bw(g):
        idx = np.argmax(x.data, axis=1)[:, None, :]
        gx = np.zeros(src, dtype=g.dtype)
        np.put_along_axis(gx, idx, g[:, None, :], axis=1)
        return (gx,)

    return _result(out, (x,), bw)


def l2_normalize(x: Tensor) -> Tensor:
    """Divide each row of a ``[B, d]`` tensor by its Euclidean norm."""
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects [B, d], got {x.shape}")
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norm <= NORM_EPS):
        rows = np.flatnonzero(norm[:, 0] <= NORM_EPS).tolist()
        raise FloatingPointError(f"l2_normalize: rows {rows} have near-zero norm")
    y = x.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _result(y, (x,), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``[B, C]`` logits against integer labels."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, C], got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {logits.shape[0]} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(labels.size)
    n = labels.size

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _result(np.asarray(-logp[rows, labels].mean()), (logits,), bw)


# ---------------------------------------------------------------- batch norm


@dataclass
class BnState:
    """Learnable scale/shift plus running statistics for one BN layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int, dtype=np.float64, momentum: float = 0.9, eps: float = 1e-5) -> "BnState":
        return cls(
            gamma=Tensor(np.ones(width, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(width, dtype=dtype),
            running_var=np.ones(width, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def width(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: Tensor, state: BnState, mode: str = "train") -> Tensor:
    """Per-feature normalization of a ``[B, d]`` tensor.

    Train mode uses batch statistics (biased variance for normalization,
    unbiased for the running estimate) and updates the running stats as
    ``running = momentum * running + (1 - momentum) * batch``. Eval mode
    uses the running stats and touches nothing.
    """
    if x.ndim != 2 or x.shape[1] != state.width:
        raise ShapeError(f"batch_norm: input {x.shape} does not match width {state.width}")
    gamma, beta = state.gamma, state.beta
    G = gamma.data
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch_norm in train mode needs at least 2 rows (variance undefined)")
        mu = x.data.mean(axis=0)
        xhat = x.data - mu
        var = np.einsum("ij,ij->j", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat *= inv
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var * (n / (n - 1))

        def bw(g):
            gxhat = g * G
            s1 = gxhat.sum(axis=0) / n
            s2 = np.einsum("ij,ij->j", gxhat, xhat) / n
            gx = gxhat
            gx -= s1
            gx -= xhat * s2
            gx *= inv
            return gx, np.einsum("ij,ij->j", g, xhat), g.sum(axis=0)

    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv

        def bw(g):
            return g * (G * inv), np.einsum("ij,ij->j", g, xhat), g.sum(axis=0)

    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    out = xhat * G
    out += beta.data
    return _result(out, (x, gamma, beta), bw)
