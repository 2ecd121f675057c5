"""Reverse-mode automatic differentiation over dense numpy arrays.

A forward pass builds a fresh graph of `Tensor` nodes; `backward` walks it
once in reverse topological order and accumulates gradients into the leaf
`Parameter` objects. Graphs are throwaway: nothing is reused between
forward passes except the parameters themselves.

Dtype discipline: a graph runs entirely in one dtype. float64 is required
for gradient checking (the 1e-4 relative tolerance is unreachable in
float32); float32 is the production training dtype.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import NumericError

# Per-op finite checks are opt-in: they cost a full scan of every result.
# The scalar fed to backward() is always checked.
CHECK_FINITE = os.environ.get("PRISM_CHECK_FINITE", "0") == "1"


class Tensor:
    """A node in the computation graph: a value plus how it was produced."""

    __slots__ = ("data", "grad", "requires", "parents", "vjp", "op")

    def __init__(self, data, requires=False, parents=(), vjp=None, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self.requires = requires
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf. `owner` tags which network owns it: theta (signal
    encoder), omega (confounder encoder) or phi (predictor)."""

    __slots__ = ("name", "owner")

    OWNERS = ("theta", "omega", "phi")

    def __init__(self, name: str, owner: str, data: np.ndarray):
        if owner not in self.OWNERS:
            raise ValueError(f"unknown owner {owner!r}, expected one of {self.OWNERS}")
        super().__init__(np.array(data, copy=True), requires=True, op="param")
        self.name = name
        self.owner = owner
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name}, owner={self.owner}, shape={self.data.shape})"


def _out(data, parents, vjp, op):
    req = any(p.requires for p in parents)
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced", op=op)
    return Tensor(data, requires=req, parents=parents, vjp=vjp if req else None, op=op)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

    The walk order is a deterministic function of the graph, so repeating
    backward on the same graph (after a gradient reset) reproduces the
    gradients bit for bit.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite", op=loss.op)

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is not None:
            parts = node.vjp(g)
            if CHECK_FINITE:
                for part, parent in zip(parts, node.parents):
                    if part is not None and not np.all(np.isfinite(part)):
                        raise NumericError("non-finite gradient", op=node.op)
            for parent, part in zip(node.parents, parts):
                if part is None or not parent.requires:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + part
                else:
                    grads[key] = part
        elif isinstance(node, Parameter):
            node.grad += g
        elif node.grad is not None or node.requires:
            # non-Parameter leaf marked requires (used by tests)
            node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _out(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _out(a.data - b.data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _out(a.data * b.data, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _out(a.data / b.data, (a, b), vjp, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def vjp(g):
        return (g * c,)

    return _out(a.data * c, (a,), vjp, "scale")


def add_const(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g,)

    return _out(a.data + a.data.dtype.type(c), (a,), vjp, "add_const")


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _out(-a.data, (a,), vjp, "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _out(np.maximum(a.data, a.data.dtype.type(0)), (a,), vjp, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # exp(-|x|) keeps the argument non-positive, so neither branch overflows
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _out(y, (a,), vjp, "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def vjp(g):
        return (g * y,)

    return _out(y, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    def vjp(g):
        return (g / a.data,)

    return _out(np.log(a.data), (a,), vjp, "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * y),)

    return _out(y, (a,), vjp, "sqrt")


def square(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * 2.0 * a.data,)

    return _out(a.data * a.data, (a,), vjp, "square")


def huber(pred: Tensor, target: Tensor, delta: float) -> Tensor:
    """Elementwise smooth-L1: 0.5*d^2 inside |d|<=delta, linear outside."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    dt = pred.data.dtype.type
    d = pred.data - target.data
    ad = np.abs(d)
    quad = dt(0.5) * d * d
    lin = dt(delta) * (ad - dt(0.5 * delta))
    out = np.where(ad <= delta, quad, lin)
    dd = np.clip(d, -delta, delta)

    def vjp(g):
        return g * dd, -(g * dd)

    return _out(out, (pred, target), vjp, "huber")


# ---------------------------------------------------------------------------
# reductions / shape ops
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _out(y, (a,), vjp, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    y = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    inv = a.data.dtype.type(1.0 / count)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g * inv, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg * inv, a.data.shape).copy(),)

    return _out(y, (a,), vjp, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _out(a.data.reshape(shape), (a,), vjp, "reshape")


def swap_last2(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _out(np.swapaxes(a.data, -1, -2), (a,), vjp, "swap_last2")


def concat_last(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[-1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=-1))

    return _out(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), vjp, "concat")


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _out(a.data[..., start:stop].copy(), (a,), vjp, "slice_last")


# ---------------------------------------------------------------------------
# linear algebra / network ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., M, K) @ (..., K, N) with numpy broadcasting over batch dims."""

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _out(a.data @ b.data, (a, b), vjp, "matmul")


def conv1d_same(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Same-padded 1D convolution. x (B,L,Cin), w (K,Cin,Cout), b (Cout)."""
    k, cin, cout = w.data.shape
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd for same padding, got {k}")
    bsz, length, cx = x.data.shape
    if cx != cin:
        raise ValueError(f"conv input has {cx} channels, weight expects {cin}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (bsz, length, k, cin), (s0, s1, s1, s2)
    ).reshape(bsz * length, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    out = windows @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(bsz, length, cout)

    def vjp(g):
        gflat = g.reshape(bsz * length, cout)
        gw = (windows.T @ gflat).reshape(k, cin, cout) if w.requires else None
        gb = g.sum(axis=(0, 1)) if (b is not None and b.requires) else None
        gx = None
        if x.requires:
            gwin = (gflat @ wmat.T).reshape(bsz, length, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + length, :] += gwin[:, :, j, :]
            gx = gxp[:, pad : pad + length, :]
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _out(out, parents, vjp, "conv1d")


def max_pool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping max pool along axis 1; a trailing remainder is dropped."""
    bsz, length, ch = x.data.shape
    lq = length // width
    if lq < 1:
        raise ValueError(f"pool width {width} exceeds length {length}")
    blocks = x.data[:, : lq * width, :].reshape(bsz, lq, width, ch)
    idx = blocks.argmax(axis=2)
    y = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def vjp(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[:, :, None, :], g[:, :, None, :], axis=2)
        gx = np.zeros_like(x.data)
        gx[:, : lq * width, :] = gb.reshape(bsz, lq * width, ch)
        return (gx,)

    return _out(y, (x,), vjp, "max_pool1d")


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch statistics over (batch, position) per channel.

    Returns (out, batch_mean, biased_batch_var); the caller updates running
    statistics from the returned arrays, outside the graph.
    """
    n = x.data.shape[0] * x.data.shape[1]
    mu = x.data.mean(axis=(0, 1))
    var = x.data.var(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    inv_n = x.data.dtype.type(1.0 / n)

    def vjp(g):
        gsum = g.sum(axis=(0, 1))
        gx_hat_sum = (g * xhat).sum(axis=(0, 1))
        gx = gamma.data * inv * (g - inv_n * gsum - xhat * (inv_n * gx_hat_sum))
        return gx, gx_hat_sum, gsum

    return _out(out, (x, gamma, beta), vjp, "batch_norm_train"), mu, var


def batch_norm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var, eps: float = 1e-5
) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        return g * gamma.data * inv, (g * xhat).sum(axis=(0, 1)), g.sum(axis=(0, 1))

    return _out(out, (x, gamma, beta), vjp, "batch_norm_eval")
