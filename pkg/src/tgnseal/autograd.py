"""Dense float64 tensors with a reverse-mode tape, plus Adam and the loss.

The tape is a flat list of (output, pull-back) records appended in execution
order; ``backward`` walks it in exact reverse and accumulates (+=) into every
``requires_grad`` leaf, then clears the tape. Ops only record when some input
requires grad, so pure-constant graph preparation stays off the tape. All
reductions run in numpy's fixed order, so forward passes are bit-reproducible.

A tape is single-threaded by design; independent model replicas get their own
process or must serialize through this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

BCE_EPS = 1e-7


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# Tape

_TAPE: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops inside record nothing (inference-mode forwards)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _record(out: Tensor, parents: tuple[Tensor, ...], pull):
    """pull(grad_out) must call p.accumulate(...) for each needy parent."""
    out.requires_grad = True
    _TAPE.append((out, parents, pull))


def tape_size() -> int:
    return len(_TAPE)


def tape_clear():
    _TAPE.clear()


def backward(loss: Tensor, seed: float = 1.0):
    """Populate grads of every requires_grad leaf reachable from `loss`.

    `loss` must be scalar. Grads accumulate across calls; the tape is
    cleared afterwards. `seed` scales the whole pass (handy for averaging
    per-example losses without an extra node).
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.accumulate(np.full_like(loss.data, seed))
    for out, parents, pull in reversed(_TAPE):
        g = out.grad
        if g is None:
            continue
        pull(g)
    tape_clear()


def _needs(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitive ops

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    if _needs(a, b):
        def pull(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.data.shape))
        _record(out, (a, b), pull)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    if _needs(a, b):
        ad, bd = a.data, b.data
        def pull(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * bd, ad.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * ad, bd.shape))
        _record(out, (a, b), pull)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    if _needs(a, b):
        ad, bd = a.data, b.data
        def pull(g):
            if a.requires_grad:
                a.accumulate(g @ bd.T)
            if b.requires_grad:
                b.accumulate(ad.T @ g)
        _record(out, (a, b), pull)
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _needs(*tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def pull(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t.accumulate(g[tuple(idx)])
        _record(out, tuple(tensors), pull)
    return out


def slice_(a: Tensor, key) -> Tensor:
    """Basic (slice/int-tuple) indexing with scatter-back gradient."""
    out = Tensor(a.data[key])
    if _needs(a):
        shape = a.data.shape
        def pull(g):
            full = np.zeros(shape)
            full[key] = g
            a.accumulate(full)
        _record(out, (a,), pull)
    return out


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Row gather; the index is a constant (e.g. a precomputed sort order)."""
    index = np.asarray(index, dtype=np.intp)
    out = Tensor(a.data[index])
    if _needs(a):
        shape = a.data.shape
        def pull(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            a.accumulate(full)
        _record(out, (a,), pull)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    if _needs(a):
        orig = a.data.shape
        def pull(g):
            a.accumulate(g.reshape(orig))
        _record(out, (a,), pull)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable two-branch form keeps exp() off large positives
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    if _needs(a):
        def pull(g):
            a.accumulate(g * y * (1.0 - y))
        _record(out, (a,), pull)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    if _needs(a):
        def pull(g):
            a.accumulate(g * (1.0 - y * y))
        _record(out, (a,), pull)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    if _needs(a):
        def pull(g):
            a.accumulate(g * mask)
        _record(out, (a,), pull)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _needs(a):
        def pull(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate(y * (g - dot))
        _record(out, (a,), pull)
    return out


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))
    if _needs(a):
        shape = a.data.shape
        def pull(g):
            if axis is None:
                a.accumulate(np.full(shape, g))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), shape).copy())
        _record(out, (a,), pull)
    return out


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis))
    if _needs(a):
        shape = a.data.shape
        def pull(g):
            if axis is None:
                a.accumulate(np.full(shape, g / n))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g / n, axis), shape).copy())
        _record(out, (a,), pull)
    return out


def _conv1d_index(c_in: int, length: int, kernel: int, stride: int) -> np.ndarray:
    l_out = (length - kernel) // stride + 1
    if l_out < 1:
        raise ShapeError(f"conv1d: kernel {kernel} longer than input {length}")
    starts = np.arange(l_out) * stride
    window = np.arange(kernel)
    return starts[:, None] + window[None, :]  # [l_out, kernel]


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """1-D cross-correlation: x [C_in, L], w [C_out, C_in, K] -> [C_out, L_out]."""
    if x.data.ndim != 2 or w.data.ndim != 3 or x.data.shape[0] != w.data.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes x{x.shape} w{w.shape}")
    c_in, length = x.data.shape
    c_out, _, kernel = w.data.shape
    cols_idx = _conv1d_index(c_in, length, kernel, stride)  # [L_out, K]
    cols = x.data[:, cols_idx]                 # [C_in, L_out, K]
    cols = cols.transpose(1, 0, 2).reshape(cols_idx.shape[0], c_in * kernel)  # [L_out, C_in*K]
    wmat = w.data.reshape(c_out, c_in * kernel)
    y = cols @ wmat.T                          # [L_out, C_out]
    if b is not None:
        y = y + b.data[None, :]
    out = Tensor(y.T.copy())                   # [C_out, L_out]
    needy = _needs(x, w) or (b is not None and _needs(b))
    if needy:
        def pull(g):
            gt = g.T                            # [L_out, C_out]
            if w.requires_grad:
                w.accumulate((gt.T @ cols).reshape(c_out, c_in, kernel))
            if b is not None and b.requires_grad:
                b.accumulate(gt.sum(axis=0))
            if x.requires_grad:
                gcols = gt @ wmat               # [L_out, C_in*K]
                gcols = gcols.reshape(cols_idx.shape[0], c_in, kernel).transpose(1, 0, 2)
                gx = np.zeros((c_in, length))
                np.add.at(gx, (slice(None), cols_idx), gcols)
                x.accumulate(gx)
        parents = (x, w) if b is None else (x, w, b)
        _record(out, parents, pull)
    return out


def maxpool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping max pooling over the last axis; trailing remainder dropped."""
    if x.data.ndim != 2:
        raise ShapeError(f"maxpool1d: expected 2-D [C, L], got {x.shape}")
    c, length = x.data.shape
    l_out = length // width
    if l_out < 1:
        raise ShapeError(f"maxpool1d: width {width} longer than input {length}")
    windows = x.data[:, : l_out * width].reshape(c, l_out, width)
    arg = windows.argmax(axis=2)
    out = Tensor(np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0])
    if _needs(x):
        def pull(g):
            gx = np.zeros((c, length))
            cols = np.arange(l_out) * width + arg  # [C, L_out]
            rows = np.arange(c)[:, None]
            np.add.at(gx, (rows, cols), g)
            x.accumulate(gx)
        _record(out, (x,), pull)
    return out


def bce_loss(pred: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    out = Tensor(losses.mean() if losses.ndim else losses)
    if _needs(pred):
        n = losses.size
        inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
        def pull(g):
            dp = (p - y) / (p * (1.0 - p)) / n
            pred.accumulate(g * dp * inside)
        _record(out, (pred,), pull)
    return out


# ---------------------------------------------------------------------------
# Optimizer

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Tensor]):
    """Bias-corrected Adam update in place; missing grads count as zero."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1 ** state.t
    correct2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.setdefault(i, np.zeros_like(p.data))
        v = state.v.setdefault(i, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# Finite-difference oracle

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: list[float]
    passed: bool


def finite_diff_check(f, params: list[Tensor], h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic grads of scalar f() against central differences.

    f must be deterministic and rebuild its graph from `params` on every
    call. Relative error uses a unit floor so near-zero gradients are held
    to absolute tolerance.
    """
    tape_clear()
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.zero_grad()

    errs = []
    for p, ga in zip(params, analytic):
        worst = 0.0
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(f().data)
            tape_clear()
            flat[j] = orig - h
            down = float(f().data)
            tape_clear()
            flat[j] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[j]), 1.0)
            worst = max(worst, abs(fd - gflat[j]) / denom)
        errs.append(worst)
    worst_all = max(errs) if errs else 0.0
    return GradCheckReport(max_rel_err=worst_all, per_param=errs, passed=worst_all < tol)


def glorot(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Xavier-uniform init used for all weight matrices."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    if len(shape) == 3:  # conv kernels [C_out, C_in, K]
        fan_out, fan_in = shape[0], shape[1] * shape[2]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
