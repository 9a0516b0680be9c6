"""Reverse-mode autodiff over dense float64 arrays.

The engine is a dynamic Wengert list: every operation allocates a `Tensor`
node holding the forward value, references to its parent nodes and a closure
that maps the upstream gradient to per-parent gradient contributions.  Node
ids strictly increase in creation order, so walking the reachable nodes in
decreasing id order is a valid reverse topological order and `backward` is
fully deterministic: identical graphs produce bit-identical gradients.

Everything is computed in float64.  There is no broadcasting beyond
tensor-scalar ops and no batch dimension; callers loop over images.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ids = itertools.count()


class Tensor:
    """A float64 array plus its position in the autodiff graph.

    Leaves are built directly from data; interior nodes are built by the op
    functions below.  `_vjp` maps the upstream gradient array to a tuple of
    gradient arrays aligned with `_parents`.
    """

    __slots__ = ("data", "_parents", "_vjp", "_id")

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = _parents
        self._vjp = _vjp
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, id={self._id})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")
        return Tensor(a.data + b.data, (a, b), lambda g: (g, g))
    return Tensor(a.data + float(b), (a,), lambda g: (g,))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "sub")
        return Tensor(a.data - b.data, (a, b), lambda g: (g, -g))
    return Tensor(a.data - float(b), (a,), lambda g: (g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s) -> Tensor:
    """Multiply by a python scalar.  scale(x, 1.0) is a bitwise identity."""
    s = float(s)
    return Tensor(a.data * s, (a,), lambda g: (g * s,))


def reduce_sum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    return Tensor(a.data.sum(), (a,), lambda g: (np.full(a.data.shape, float(g)),))


def spread(a: Tensor, shape) -> Tensor:
    """Broadcast a scalar tensor to `shape`; the adjoint sums the gradient."""
    if a.data.shape != ():
        raise ValueError(f"spread needs a scalar tensor, got shape {a.data.shape}")
    shape = tuple(shape)
    return Tensor(np.full(shape, float(a.data)), (a,), lambda g: (np.asarray(g).sum(),))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; inputs must be strictly positive."""
    if np.any(a.data <= 0):
        raise ValueError("sqrt: inputs must be > 0")
    root = np.sqrt(a.data)
    return Tensor(root, (a,), lambda g: (g * (0.5 / root),))


def recip(a: Tensor) -> Tensor:
    """Elementwise reciprocal; inputs must be nonzero."""
    if np.any(a.data == 0):
        raise ValueError("recip: inputs must be nonzero")
    inv = 1.0 / a.data
    return Tensor(inv, (a,), lambda g: (-g * inv * inv,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at exactly 0 is 0
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.data.size,))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a 1-D input."""
    xd, wd = x.data, weight.data
    if xd.ndim != 1 or wd.ndim != 2:
        raise ValueError(f"dense: need 1-D input and 2-D weight, got {xd.shape} and {wd.shape}")
    if wd.shape[1] != xd.shape[0] or bias.data.shape != (wd.shape[0],):
        raise ValueError(
            f"dense: dimension mismatch weight {wd.shape}, input {xd.shape}, bias {bias.data.shape}"
        )

    def vjp(g):
        return (wd.T @ g, np.outer(g, xd), g)

    return Tensor(wd @ xd + bias.data, (x, weight, bias), vjp)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of a CHW input with an OCKK kernel stack."""
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 4:
        raise ValueError(f"conv2d: need CHW input and OCKK weight, got {xd.shape} and {wd.shape}")
    c, h, w = xd.shape
    o, wc, kh, kw = wd.shape
    if wc != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {wc}")
    if bias.data.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} does not match {o} filters")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be >= 0, got {pad}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} does not fit padded input {h + 2 * pad}x{w + 2 * pad}")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ValueError("conv2d: kernel/stride do not tile the padded input exactly")

    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad))) if pad else xd
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("chwij,ocij->ohw", windows, wd, optimize=True) + bias.data[:, None, None]
    oh, ow = out.shape[1], out.shape[2]

    def vjp(g):
        gb = g.sum(axis=(1, 2))
        gw = np.einsum("chwij,ohw->ocij", windows, g, optimize=True)
        # input gradient: dilate by stride, pad by kernel-1, correlate with
        # the spatially flipped kernels, then crop the original padding
        hd, wdil = (oh - 1) * stride + 1, (ow - 1) * stride + 1
        gd = np.zeros((o, hd, wdil))
        gd[:, ::stride, ::stride] = g
        gdp = np.pad(gd, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = sliding_window_view(gdp, (kh, kw), axis=(1, 2))
        gx_pad = np.einsum("ohwij,ocij->chw", gwin, wd[:, :, ::-1, ::-1], optimize=True)
        gx = gx_pad[:, pad:pad + h, pad:pad + w] if pad else gx_pad
        return (gx, gw, gb)

    return Tensor(out, (x, weight, bias), vjp)


def _pool_windows(xd: np.ndarray, op: str):
    if xd.ndim != 3:
        raise ValueError(f"{op}: need CHW input, got shape {xd.shape}")
    c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ValueError(f"{op}: spatial dims must be even, got {h}x{w}")
    return xd.reshape(c, h // 2, 2, w // 2, 2)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2."""
    xd = x.data
    r = _pool_windows(xd, "avgpool2")
    out = r.mean(axis=(2, 4))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return Tensor(out, (x,), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    xd = x.data
    c, h, w = xd.shape if xd.ndim == 3 else (None, 0, 0)
    r = _pool_windows(xd, "maxpool2")
    flat = r.transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def vjp(g):
        z = np.zeros_like(flat)
        np.put_along_axis(z, idx[..., None], g[..., None], axis=3)
        return (z.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return Tensor(out, (x,), vjp)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of softmax(logits) against an integer label, as a scalar."""
    ld = logits.data
    if ld.ndim != 1:
        raise ValueError(f"softmax_cross_entropy: logits must be 1-D, got shape {ld.shape}")
    label = int(label)
    if not 0 <= label < ld.shape[0]:
        raise ValueError(f"softmax_cross_entropy: label {label} out of range for {ld.shape[0]} classes")
    z = ld - ld.max()
    ez = np.exp(z)
    p = ez / ez.sum()
    loss = np.log(ez.sum()) - z[label]

    def vjp(g):
        gl = p.copy()
        gl[label] -= 1.0
        return (gl * float(g),)

    return Tensor(loss, (logits,), vjp)


def resize_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour resize of a CHW image; source index is floor(dst*in/out)."""
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"resize_nearest: need CHW input, got shape {xd.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_nearest: output dims must be >= 1, got {out_h}x{out_w}")
    c, h, w = xd.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    out = xd[:, rows[:, None], cols[None, :]]
    ch = np.arange(c)[:, None, None]

    def vjp(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, (ch, rows[None, :, None], cols[None, None, :]), g)
        return (gx,)

    return Tensor(out, (x,), vjp)


def pad_image(x: Tensor, top: int, bottom: int, left: int, right: int, value: float = 0.0) -> Tensor:
    """Constant-pad a CHW image on its spatial dims."""
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"pad_image: need CHW input, got shape {xd.shape}")
    if min(top, bottom, left, right) < 0:
        raise ValueError("pad_image: pad amounts must be >= 0")
    c, h, w = xd.shape
    out = np.pad(xd, ((0, 0), (top, bottom), (left, right)), constant_values=float(value))

    def vjp(g):
        return (g[:, top:top + h, left:left + w],)

    return Tensor(out, (x,), vjp)


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(node) for every node reachable from `loss`.

    Returns a dict keyed by Tensor identity; nodes not in the dict have zero
    gradient.  `loss` must hold exactly one element.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    nodes = [loss]
    seen = {id(loss)}
    stack = [loss]
    while stack:
        for p in stack.pop()._parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
                nodes.append(p)
    nodes.sort(key=lambda t: t._id, reverse=True)

    grads = {loss: np.ones_like(loss.data)}
    for node in nodes:
        g = grads.get(node)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads
