"""Minimal tape-free reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to one gradient per parent. Calling
:func:`backward` on a result walks the graph in reverse topological order.

Feature maps use a channel-major ``(C, N, H, W)`` layout so a 3x3
convolution is one ``(Cout, 9*Cin) @ (9*Cin, N*H*W)`` matrix product.
Convolutions pad circularly.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}, name={self.name})"


def leaf(value, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=requires_grad, name=name)


def _make(value, parents, backward_fn):
    if any(p.requires_grad for p in parents):
        return Tensor(value, parents, backward_fn, requires_grad=True)
    return Tensor(value)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    ``grad`` seeds the output gradient (defaults to ones), so for a
    non-scalar root this computes the gradient of ``<root, grad>``.
    """
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.value) if grad is None else np.asarray(grad, root.value.dtype)
    for node in reversed(_topo_order(root)):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        if node.parents:
            node.grad = None


# --- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.value * c, (a,), lambda g: (g * c,))


def mul_const(a: Tensor, m) -> Tensor:
    m = np.asarray(m, dtype=a.value.dtype)
    return _make(a.value * m, (a,), lambda g: (g * m,))


def leaky_relu(x: Tensor, alpha=0.0) -> Tensor:
    pos = x.value > 0
    slope = np.where(pos, 1.0, alpha).astype(x.value.dtype)
    return _make(x.value * slope, (x,), lambda g: (g * slope,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def softplus_np(z):
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid_np(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def softplus_inverse_np(x):
    return x + np.log(-np.expm1(-x))


def softplus(x: Tensor) -> Tensor:
    return _make(softplus_np(x.value), (x,), lambda g: (g * sigmoid_np(x.value),))


def residual_softplus(image: Tensor, delta: Tensor, floor=1e-12) -> Tensor:
    """``softplus(softplus^-1(image) + delta)``, evaluated so that ``delta == 0`` is exact.

    The value is computed as ``image + softplus(L + delta) - softplus(L)``
    with ``L = softplus^-1(max(image, floor))`` and clamped at 0, which
    returns the input bit for bit (zeros included) when ``delta`` is zero.
    """
    x = image.value
    xc = np.maximum(x, floor)
    logit = softplus_inverse_np(xc)
    z = logit + delta.value
    raw = x + (softplus_np(z) - softplus_np(logit))
    live = (raw > 0).astype(x.dtype)
    out = raw * live

    def bw(g):
        g_delta = g * live * sigmoid_np(z)
        # d/dx of softplus(L(x) + delta) - softplus(L(x)) is (sig(z) - sig(L)) L'(x),
        # and sig(L(x)) L'(x) = 1, so the image gradient is sig(z) L'(x) above the floor
        g_image = np.where(x > floor, g_delta / (-np.expm1(-xc)), g * live).astype(x.dtype)
        return g_image, g_delta

    return _make(out, (image, delta), bw)


def residual_relu(image: Tensor, delta: Tensor) -> Tensor:
    """``max(image + delta, 0)``."""
    s = image.value + delta.value
    pos = (s > 0).astype(s.dtype)
    return _make(s * pos, (image, delta), lambda g: (g * pos, g * pos))


# --- reductions -------------------------------------------------------------

def mean_square(x: Tensor) -> Tensor:
    """Mean of squares, accumulated in float64; returns a 0-d float64 tensor."""
    v = x.value
    n = v.size
    val = np.asarray(np.mean(np.square(v, dtype=np.float64)))
    return _make(val, (x,), lambda g: ((2.0 * float(g) / n) * v,))


def weighted_sum(terms, weights) -> Tensor:
    terms = list(terms)
    weights = [float(w) for w in weights]
    val = np.asarray(sum(w * float(t.value) for t, w in zip(terms, weights)))
    return _make(val, tuple(terms), lambda g: tuple(np.asarray(w * float(g)) for w in weights))


# --- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.value.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x: Tensor, index: int, axis=0) -> Tensor:
    """Slice ``index`` out of ``axis`` (the axis is dropped)."""
    v = x.value

    def back(g):
        out = np.zeros_like(v)
        sl = [slice(None)] * v.ndim
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _make(np.take(v, index, axis=axis), (x,), back)


def concat(xs, axis=0) -> Tensor:
    xs = list(xs)
    sizes = np.cumsum([t.value.shape[axis] for t in xs])[:-1]
    return _make(np.concatenate([t.value for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def avgpool2(x: Tensor) -> Tensor:
    c, n, h, w = x.value.shape
    y = x.value.reshape(c, n, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(y, (x,), bw)


def upsample2(x: Tensor) -> Tensor:
    y = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)

    def bw(g):
        c, n, h, w = g.shape
        return (g.reshape(c, n, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return _make(y, (x,), bw)


# --- convolution ------------------------------------------------------------

_OFFSETS = [(i, j) for i in range(3) for j in range(3)]


def _im2col(x):
    c, n, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="wrap")
    cols = np.empty((9, c, n, h, w), dtype=x.dtype)
    for k, (i, j) in enumerate(_OFFSETS):
        cols[k] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(9 * c, n * h * w)


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 stride-1 cross-correlation with circular padding.

    ``x`` is ``(Cin, N, H, W)``, ``weight`` is ``(Cout, Cin, 3, 3)``,
    ``bias`` is ``(Cout,)``.
    """
    cin, n, h, w = x.value.shape
    cout = weight.value.shape[0]
    w2 = weight.value.transpose(0, 2, 3, 1).reshape(cout, 9 * cin)
    y = (w2 @ _im2col(x.value)).reshape(cout, n, h, w)
    y += bias.value[:, None, None, None]

    def bw(g):
        g2 = g.reshape(cout, n * h * w)
        cols = _im2col(x.value)
        gw = (g2 @ cols.T).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=1)
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(9, cin, n, h, w)
            gx = np.zeros_like(x.value)
            for k, (i, j) in enumerate(_OFFSETS):
                gx += np.roll(gcols[k], (i - 1, j - 1), axis=(2, 3))
        return gx, np.ascontiguousarray(gw), gb

    return _make(y, (x, weight, bias), bw)


# --- imaging-side linear operators on (N, H, W) stacks --------------------------

def roll_stack(x: Tensor, shifts) -> Tensor:
    """Stack ``T_g x`` for every shift along a new leading block of the batch axis."""
    shifts = list(shifts)
    y = np.concatenate([t.apply(x.value) for t in shifts], axis=0)
    n = x.value.shape[0]

    def bw(g):
        out = np.zeros_like(x.value)
        for k, t in enumerate(shifts):
            out += t.apply(g[k * n:(k + 1) * n], inverse=True)
        return (out,)

    return _make(y, (x,), bw)


def tile(x: Tensor, reps: int) -> Tensor:
    """Repeat an ``(N, ...)`` stack ``reps`` times along axis 0."""
    n = x.value.shape[0]

    def bw(g):
        return (g.reshape((reps, n) + g.shape[1:]).sum(axis=0),)

    return _make(np.concatenate([x.value] * reps, axis=0), (x,), bw)


def axial_blur(x: Tensor, psf) -> Tensor:
    """Apply the circular PSF along axis -2; the backward pass uses its adjoint."""
    from ..simulate import convolve_axial

    y = convolve_axial(x.value, psf, axis=-2)
    return _make(y, (x,), lambda g: (convolve_axial(g, psf, axis=-2, adjoint=True),))
