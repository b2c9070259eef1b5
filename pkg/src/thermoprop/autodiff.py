"""Reverse-mode automatic differentiation on numpy arrays.

Ops executed inside a ``with Tape():`` block record nodes in execution order
(a topological order); ``backward`` walks them once in reverse, accumulating
gradients additively.  Outside a tape, ops run forward-only.  Training uses
float32 tensors; gradient checking builds float64 tensors on a checking tape
that also validates finiteness of every forward output.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteDetected(FloatingPointError):
    pass


class NotOnTape(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "needs_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad  # or any ancestor requires grad
        self.tape: "Tape | None" = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def grad_or_zero(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class Tape:
    """Recorded operations in execution (topological) order."""

    __slots__ = ("nodes", "check")

    def __init__(self, check: bool = False):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self.check = check

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False


_TAPES: list[Tape] = []


def _active() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce one non-Tensor operand using the other's dtype."""
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    b = _as_tensor(b)
    return _as_tensor(a, like=b), b


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active()
    if tape is None:
        return out
    if tape.check and not np.all(np.isfinite(out.data)):
        raise NonFiniteDetected("non-finite value in forward output")
    out.needs_grad = any(t.needs_grad for t in inputs)
    if out.needs_grad:
        out.tape = tape
        tape.nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into .grad of every requires-grad ancestor."""
    if loss.data.size != 1:
        raise ShapeMismatch("loss must be scalar")
    if loss.tape is not tape:
        raise NotOnTape("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t.needs_grad:
                continue
            if t.requires_grad:
                t.accumulate(gi)
            if t.tape is tape:  # intermediate produced on this tape
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def grads_of(tape: Tape, loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
    """backward() then read gradients; unreached parameters give zeros."""
    backward(tape, loss)
    return [p.grad_or_zero() for p in params]


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = Tensor(a.data / b.data)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def _flat_gemm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # ND @ 2D as one GEMM; numpy would otherwise loop tiny per-batch GEMMs
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(lead + (w.shape[-1],))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul expects >=2-d tensors")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims {a.shape} x {b.shape}")
    nd_by_2d = b.ndim == 2 and a.ndim > 2
    out = Tensor(_flat_gemm(a.data, b.data) if nd_by_2d else a.data @ b.data)

    def bw(g):
        if nd_by_2d:
            ga = _flat_gemm(g, b.data.T)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    e = float(exponent)
    y = a.data**e
    out = Tensor(y)

    def bw(g):
        return (g * e * a.data ** (e - 1.0),)

    return _record(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0).astype(a.data.dtype))
    return _record(out, (a,), lambda g: (g * mask,))


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """tanh-approximation GELU."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + _GELU_A * x2))
    out = Tensor(0.5 * x * (1.0 + t))

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _record(out, (a,), bw)


def silu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = 1.0 / (1.0 + np.exp(-x))
    out = Tensor(x * s)
    return _record(out, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned scale/shift."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(gamma.data * xhat + beta.data)

    def bw(g):
        d = x.shape[-1]
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=reduce_axes) if g.ndim > 1 else g * xhat
        gbeta = g.sum(axis=reduce_axes) if g.ndim > 1 else g
        return gx, _unbroadcast(np.atleast_1d(ggamma), gamma.shape), _unbroadcast(np.atleast_1d(gbeta), beta.shape)

    return _record(out, (a, gamma, beta), bw)


class BatchNormState:
    """Running statistics owned by one batch-norm layer (not on any tape)."""

    __slots__ = ("running_mean", "running_var", "momentum")

    def __init__(self, dim: int, momentum: float = 0.1, dtype=np.float32):
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum


def batch_norm(a, gamma, beta, state: BatchNormState, train: bool, eps: float = 1e-5) -> Tensor:
    """Normalization over axis 0; train mode updates running statistics."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    x = a.data
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(state.running_var.dtype)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(gamma.data * xhat + beta.data)

    def bw(g):
        gxhat = g * gamma.data
        if train:
            gx = inv * (
                gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0)
            )
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(out, (a, gamma, beta), bw)


def graph_norm(a, gamma, beta, graph_ids: np.ndarray, n_graphs: int, eps: float = 1e-5) -> Tensor:
    """Per-graph standardization over nodes with learned scale/shift.

    a is (N, D) node features; graph_ids maps each node to its graph.
    """
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    x = a.data
    ids = np.asarray(graph_ids)
    counts = np.bincount(ids, minlength=n_graphs).astype(x.dtype)[:, None]
    sums = np.zeros((n_graphs, x.shape[1]), dtype=x.dtype)
    np.add.at(sums, ids, x)
    mu = sums / counts
    centered = x - mu[ids]
    sq = np.zeros_like(sums)
    np.add.at(sq, ids, centered**2)
    var = sq / counts
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[ids]
    out = Tensor(gamma.data * xhat + beta.data)

    def bw(g):
        gxhat = g * gamma.data
        gsum = np.zeros_like(sums)
        np.add.at(gsum, ids, gxhat)
        gmean = gsum / counts
        gxsum = np.zeros_like(sums)
        np.add.at(gxsum, ids, gxhat * xhat)
        gxmean = gxsum / counts
        gx = inv[ids] * (gxhat - gmean[ids] - xhat * gxmean[ids])
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(out, (a, gamma, beta), bw)


def dropout(a, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    a = _as_tensor(a)
    if not train or p <= 0.0:
        out = Tensor(a.data)
        return _record(out, (a,), lambda g: (g,))
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out = Tensor(a.data * keep)
    return _record(out, (a,), lambda g: (g * keep,))


def embedding(weight, ids: np.ndarray) -> Tensor:
    """Row lookup into a (V, D) table; gradient scatter-adds into the table."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    out = Tensor(weight.data[ids])

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _record(out, (weight,), bw)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(idx)
    out = Tensor(a.data[idx])

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record(out, (a,), bw)


def segment_sum(a, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows grouped by id; accumulation follows ascending row order."""
    a = _as_tensor(a)
    ids = np.asarray(segment_ids)
    y = np.zeros((n_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(y, ids, a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g[ids],))


def concat(tensors: list, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(a.data[sl])

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return _record(out, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return _record(out, (a,), lambda g: (g.transpose(inverse),))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.data.dtype),))


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = Tensor(a.data.mean())
    return _record(
        out, (a,), lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.data.dtype),)
    )


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, params: list[Tensor], eps: float = 1e-4,
               max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error of tape gradients vs central finite differences.

    fn() must return a scalar Tensor and be deterministic; params must be
    float64 for the differences to resolve.  With max_entries set, at most
    that many randomly chosen entries per parameter are probed, which keeps
    the check tractable for large weight matrices.
    """
    for p in params:
        p.zero_grad()
    with Tape(check=True) as tape:
        loss = fn()
    analytic = grads_of(tape, loss, params)

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_flat = np.asarray(g_ad, dtype=np.float64).reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            sampler = rng if rng is not None else np.random.default_rng(0)
            entries = sampler.choice(flat.size, size=max_entries, replace=False)
        else:
            entries = range(flat.size)
        for k in entries:
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = fn().item()
            flat[k] = orig - eps
            f_minus = fn().item()
            flat[k] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-8, abs(g_flat[k]) + abs(g_fd))
            worst = max(worst, abs(g_flat[k] - g_fd) / denom)
    return worst
