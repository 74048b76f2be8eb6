"""Reverse-mode differentiation over dense numpy arrays.

A ``Var`` wraps a float64 ndarray plus the recipe for propagating an output
gradient to its parents. Graphs are built eagerly by the op functions below
and swept once by ``backward``. The op set is deliberately closed: dense
arrays, the handful of primitives the model needs, nothing more. Modules with
heavy hand-written backward passes (the splat rasterizer, marching tets)
plug in through ``custom``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Var", "constant", "leaf", "custom", "backward", "grad",
    "add", "sub", "neg", "mul", "div", "matmul", "power",
    "exp", "log", "sqrt", "absolute", "sin", "cos",
    "tanh", "sigmoid", "silu",
    "vsum", "vmean", "reshape", "transpose", "concat", "getitem",
    "segment_sum", "conv2d", "upsample2x",
]


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "parents", "vjp", "param_ref", "needs_grad", "_sink")

    # keep numpy from consuming Vars elementwise; defer to reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, param_ref=None, needs_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        # (store, name, version at capture) for parameter leaves
        self.param_ref = param_ref
        self._sink = None
        if needs_grad is None:
            needs_grad = param_ref is not None or any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

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

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, needs_grad={self.needs_grad})"


def _wrap(x):
    return x if isinstance(x, Var) else Var(x, needs_grad=False)


def constant(x) -> Var:
    return Var(x, needs_grad=False)


def leaf(x, grad_sink=None, param_ref=None) -> Var:
    """Differentiable input. ``grad_sink`` (if given) receives += grads."""
    v = Var(x, needs_grad=True, param_ref=param_ref)
    v._sink = grad_sink
    return v


def custom(value, parents, vjp) -> Var:
    """Primitive with a hand-written vector-Jacobian product.

    ``vjp(g) -> tuple of grads aligned with parents`` (None entries allowed).
    """
    return Var(value, tuple(_wrap(p) for p in parents), vjp)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return Var(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def neg(a):
    a = _wrap(a)
    return Var(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.value.shape),
                          _unbroadcast(g * a.value, b.value.shape)))


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    inv = 1.0 / b.value
    return Var(a.value * inv, (a, b),
               lambda g: (_unbroadcast(g * inv, a.value.shape),
                          _unbroadcast(-g * a.value * inv * inv, b.value.shape)))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        ga = g @ b.value.swapaxes(-1, -2)
        gb = a.value.swapaxes(-1, -2) @ g
        return (_unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape))

    return Var(a.value @ b.value, (a, b), vjp)


def power(a, k):
    a = _wrap(a)
    k = float(k)
    return Var(a.value ** k, (a,), lambda g: (g * k * a.value ** (k - 1.0),))


def exp(a):
    a = _wrap(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    a = _wrap(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a):
    a = _wrap(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a):
    a = _wrap(a)
    # subgradient sign(x); 0 at x == 0
    return Var(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def sin(a):
    a = _wrap(a)
    return Var(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a):
    a = _wrap(a)
    return Var(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return expit(x)


def sigmoid(a):
    a = _wrap(a)
    out = _sigmoid(a.value)
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    """x * sigmoid(x): the repo's smooth relu-like activation."""
    a = _wrap(a)
    s = _sigmoid(a.value)
    out = a.value * s
    return Var(out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


def vsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(out, (a,), vjp)


def vmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[i] for i in np.atleast_1d(axis)])
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a, shape):
    a = _wrap(a)
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),))


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    inv = np.argsort(axes)
    return Var(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts),
               lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(a, idx):
    a = _wrap(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], (a,), vjp)


def segment_sum(a, seg_ids, n_segments):
    """Row-wise scatter-add: out[s] = sum of a[i] with seg_ids[i] == s."""
    a = _wrap(a)
    out = np.zeros((n_segments,) + a.value.shape[1:], dtype=np.float64)
    np.add.at(out, seg_ids, a.value)
    return Var(out, (a,), lambda g: (g[seg_ids],))


def _conv2d_raw(x, w, stride, pad):
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C_in, H_out, W_out, kh, kw)
    return np.einsum("ihwkl,oikl->ohw", win, w, optimize=True)


def conv2d(x, w, b, stride=1, pad=1):
    """2D convolution, channel-first: x (C,H,W), w (O,C,kh,kw), b (O,)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    c_out, c_in, kh, kw = w.value.shape
    if x.value.shape[0] != c_in:
        raise ValueError(
            f"conv2d: input has {x.value.shape[0]} channels, kernel expects {c_in}")
    out = _conv2d_raw(x.value, w.value, stride, pad) + b.value[:, None, None]

    def vjp(g):
        gb = g.sum(axis=(1, 2))
        xp = np.pad(x.value, ((0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride]
        gw = np.einsum("ihwkl,ohw->oikl", win, g, optimize=True)
        # input grad: scatter each output tap back through its window
        gxp = np.zeros_like(xp)
        h_out, w_out = g.shape[1], g.shape[2]
        for dy in range(kh):
            for dx in range(kw):
                contrib = np.einsum("ohw,oi->ihw", g, w.value[:, :, dy, dx],
                                    optimize=True)
                gxp[:, dy:dy + h_out * stride:stride,
                    dx:dx + w_out * stride:stride] += contrib
        gx = gxp[:, pad:xp.shape[1] - pad, pad:xp.shape[2] - pad]
        return (gx, gw, gb)

    return Var(out, (x, w, b), vjp)


def upsample2x(x):
    """Nearest-neighbor 2x upsample of a (C,H,W) image."""
    x = _wrap(x)
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def vjp(g):
        c, h2, w2 = g.shape
        return (g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)),)

    return Var(out, (x,), vjp)


def backward(root: Var, seed=1.0):
    """Sweep the graph below ``root`` once.

    Parameter-leaf grads are accumulated (+=) into their stores; leaves made
    with ``leaf(x, grad_sink=...)`` get += into their sink arrays. Repeated
    calls on the same graph accumulate again (tests rely on additivity).
    Accumulation builds fresh arrays, so vjps may alias their inputs.
    """
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {
        id(root): np.broadcast_to(np.asarray(seed, dtype=np.float64),
                                  root.value.shape).copy()
    }
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param_ref is not None:
            store, name, version = node.param_ref
            store._accumulate(name, g, version)
        if node._sink is not None:
            node._sink += g
        if node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.needs_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            cur = grads.get(id(p))
            # new array on merge, so aliased vjp outputs are never mutated
            grads[id(p)] = pg if cur is None else cur + pg


def grad(root: Var, inputs, seed=1.0):
    """Backward pass returning grads for ``inputs`` (list of leaf Vars)."""
    sinks = []
    for v in inputs:
        v._sink = np.zeros_like(v.value)
        sinks.append(v._sink)
    backward(root, seed=seed)
    for v in inputs:
        v._sink = None
    return sinks
