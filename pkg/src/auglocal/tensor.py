"""Dense tensors with reverse-mode automatic differentiation on a recorded tape.

All numeric work in the package goes through this module. Values are numpy
arrays (float64 by default, float32 switchable for speed); gradients are
computed by replaying a per-thread tape in reverse recording order. A
``stop_gradient`` boundary is identity in the forward pass and blocks all
gradient flow in the backward pass.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EmptyTape,
    LabelOutOfRange,
    NonDeterministicFunction,
    NonScalarLoss,
    ShapeMismatch,
    UnsupportedOperator,
)

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the element type of newly created tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported element dtype: {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A dense n-dimensional value, optionally carrying a gradient buffer.

    Activations use the (N, C, H, W) convention; rank is at most 4.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim > 4:
            raise ShapeMismatch(f"rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """A view of the same data that no gradient can flow through."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; recording order is topological order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, inputs, output, backward_fn) -> None:
        self.nodes.append(TapeNode(tuple(inputs), output, backward_fn))


_tls = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def tape():
    """Activate a fresh tape on this thread for the duration of the block."""
    t = Tape()
    stack = _tape_stack()
    stack.append(t)
    try:
        yield t
    finally:
        stack.pop()


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    t = active_tape()
    needs = t is not None and any(x.requires_grad for x in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        t.record(inputs, out, backward_fn)
    return out


def backward(tp: Tape, loss: Tensor) -> None:
    """Populate gradients of everything reachable from ``loss`` on ``tp``.

    Parameters behind a stop_gradient boundary are untouched (their grad
    stays whatever it was, zero if freshly cleared).
    """
    if loss.size != 1:
        raise NonScalarLoss(f"loss has {loss.size} elements, expected a scalar")
    if not tp.nodes:
        raise EmptyTape("backward called on a tape with no recorded operations")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tp.nodes):
        g_out = node.output.grad
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        for x, g in zip(node.inputs, grads):
            if g is None or not x.requires_grad:
                continue
            x.accumulate_grad(g)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; an opaque wall backward."""
    return x.detach()


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return _record((a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _record((a, b), ad * bd, lambda g: (g * bd, g * ad))


def tensor_sum(x: Tensor) -> Tensor:
    data = x.data
    return _record((x,), np.asarray(data.sum(), dtype=data.dtype),
                   lambda g: (np.broadcast_to(g, data.shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient at 0 is 0
    return _record((x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on (N, m) inputs with an (m, n) weight and optional (n,) bias."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: x {x.shape} vs w {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeMismatch(f"dense: bias {b.shape} vs out features {w.shape[1]}")
        out = out + b.data
        xd, wd = x.data, w.data
        return _record((x, w, b), out,
                       lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))
    xd, wd = x.data, w.data
    return _record((x, w), out, lambda g: (g @ wd.T, xd.T @ g))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(gcols: np.ndarray, xp_shape, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp_shape[:2]
    gx = np.zeros(xp_shape, dtype=gcols.dtype)
    gcols = gcols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
    return gx


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-D convolution, kernel 1 or 3, stride 1 or 2, zero padding k//2.

    Stride 1 preserves the spatial size; stride 2 halves it (floor division).
    Weight layout is (C_out, C_in, k, k).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d: x {x.shape}, w {w.shape}")
    n, c, h, wd_ = x.shape
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k not in (1, 3):
        raise UnsupportedOperator(f"conv2d: kernel {k}x{k2} not supported")
    if stride not in (1, 2):
        raise UnsupportedOperator(f"conv2d: stride {stride} not supported")
    if c != c_in:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {c_in}")
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd_ + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: spatial size collapses for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, ho, wo)            # (N, C*k*k, Ho*Wo)
    wmat = w.data.reshape(c_out, c_in * k * k)
    out = np.einsum("oc,ncp->nop", wmat, cols, optimize=True).reshape(n, c_out, ho, wo)
    if b is not None:
        if b.shape != (c_out,):
            raise ShapeMismatch(f"conv2d: bias {b.shape} vs {c_out} output channels")
        out = out + b.data[None, :, None, None]

    xp_shape = xp.shape

    def bwd(g: np.ndarray):
        gm = g.reshape(n, c_out, ho * wo)
        gw = np.einsum("nop,ncp->oc", gm, cols, optimize=True).reshape(w.shape)
        gcols = np.einsum("oc,nop->ncp", wmat, gm, optimize=True)
        gxp = _col2im(gcols, xp_shape, k, stride, ho, wo)
        gx = gxp[:, :, pad:pad + h, pad:pad + wd_] if pad else gxp
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    inputs = (x, w) if b is None else (x, w, b)
    return _record(inputs, out, bwd)


class BatchNormState:
    """Running statistics for one batchnorm layer; mutated only in training."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def copy(self) -> "BatchNormState":
        st = BatchNormState(len(self.running_mean), self.momentum, self.eps)
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        return st


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool) -> Tensor:
    """Per-channel batch normalization over (N, C, H, W).

    Training mode normalizes with batch statistics and updates the running
    buffers; eval mode uses the running buffers as constants. Running
    statistics are treated as constants by the backward pass.
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batchnorm2d: expected rank-4 input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batchnorm2d: affine params {gamma.shape}/{beta.shape} vs {c} channels")
    eps = state.eps
    if training:
        axes = (0, 2, 3)
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        state.running_mean += state.momentum * (mean - state.running_mean)
        unbiased = var * m / max(m - 1, 1)
        state.running_var += state.momentum * (unbiased - state.running_var)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

        def bwd(g: np.ndarray):
            gg = (g * xhat).sum(axis=axes)
            gb = g.sum(axis=axes)
            gmean = g.mean(axis=axes)
            gxhat_mean = (g * xhat).mean(axis=axes)
            gx = (gamma.data * inv_std)[None, :, None, None] * (
                g - gmean[None, :, None, None] - xhat * gxhat_mean[None, :, None, None])
            return gx, gg, gb

        return _record((x, gamma, beta), out, bwd)

    inv_std = 1.0 / np.sqrt(state.running_var + eps)
    scale = gamma.data * inv_std
    shift = beta.data - state.running_mean * scale
    out = x.data * scale[None, :, None, None] + shift[None, :, None, None]

    def bwd_eval(g: np.ndarray):
        xhat = (x.data - state.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        return (g * scale[None, :, None, None],
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    return _record((x, gamma, beta), out, bwd_eval)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading axis: (N, ...) -> (N, prod(...))."""
    shape = x.shape
    n = shape[0]
    out = x.data.reshape(n, -1)
    return _record((x,), out, lambda g: (g.reshape(shape),))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool: expected rank-4 input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return _record((x,), out, bwd)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmaxed logits (N, C) against integer labels."""
    if logits.data.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy: logits {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"softmax_cross_entropy: labels {labels.shape} vs batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = (logsumexp - z[np.arange(n), labels]).mean()
    probs = softmax(logits.data)

    def bwd(g: np.ndarray):
        gl = probs.copy()
        gl[np.arange(n), labels] -= 1.0
        return (gl * (g / n),)

    return _record((logits,), np.asarray(loss, dtype=logits.data.dtype), bwd)


class OperatorKind(Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    RELU = "relu"
    BATCHNORM2D = "batchnorm2d"
    GLOBAL_AVG_POOL = "global-average-pool"
    ADD = "add"
    SOFTMAX_CROSS_ENTROPY = "softmax-cross-entropy"


def op_forward(op: OperatorKind, inputs: Sequence, **kwargs) -> Tensor:
    """Uniform dispatch over the supported operator set."""
    if op is OperatorKind.DENSE:
        return dense(*inputs, **kwargs)
    if op is OperatorKind.CONV2D:
        return conv2d(*inputs, **kwargs)
    if op is OperatorKind.RELU:
        return relu(*inputs, **kwargs)
    if op is OperatorKind.BATCHNORM2D:
        return batchnorm2d(*inputs, **kwargs)
    if op is OperatorKind.GLOBAL_AVG_POOL:
        return global_avg_pool(*inputs, **kwargs)
    if op is OperatorKind.ADD:
        return add(*inputs, **kwargs)
    if op is OperatorKind.SOFTMAX_CROSS_ENTROPY:
        return softmax_cross_entropy(*inputs, **kwargs)
    raise UnsupportedOperator(f"unknown operator: {op!r}")


# ---------------------------------------------------------------------------
# parameter sets and gradient checking
# ---------------------------------------------------------------------------

class ParamSet:
    """Named map of trainable tensors. Names are unique within a set, and
    distinct sets never alias tensors (fresh allocation on add)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            t = self._params[k]
            if t.data.shape != v.shape:
                raise ShapeMismatch(f"parameter {k}: {t.data.shape} vs {v.shape}")
            t.data = np.array(v, dtype=t.data.dtype)

    def disjoint_from(self, other: "ParamSet") -> bool:
        mine = {id(t) for t in self._params.values()}
        return not any(id(t) in mine for t in other._params.values())


def finite_diff_check(f: Callable[[ParamSet], Tensor], params: ParamSet,
                      h: float = 1e-5) -> float:
    """Max relative error between analytic gradients of ``f`` and central
    finite differences over every parameter entry.

    ``f`` must be deterministic: two evaluations at identical parameters
    must agree bit for bit.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    v1 = float(f(params).item())
    v2 = float(f(params).item())
    if v1 != v2:
        raise NonDeterministicFunction(f"f evaluated twice gave {v1} and {v2}")

    params.zero_grad()
    with tape() as tp:
        loss = f(params)
    backward(tp, loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(params).item())
            flat[i] = orig - h
            fm = float(f(params).item())
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            err = abs(a[i] - fd) / max(1.0, abs(a[i]))
            if err > worst:
                worst = err
    return worst
