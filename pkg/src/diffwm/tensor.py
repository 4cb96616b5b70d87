"""Minimal reverse-mode autodiff over numpy arrays.

Just enough surface for this package: elementwise arithmetic with
broadcasting, matmul, stride-1 convolutions (im2col + BLAS), 2x2 max pooling,
the usual nonlinearities, axis reductions, shape ops, embedding lookups, and a
fused stable log-softmax. Gradients are plain numpy arrays accumulated into
``Tensor.grad``.

Everything is deterministic: no threading inside the tape, and the kernel
backend (numba or numpy) only affects speed, not values.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    # -- introspection ------------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- autograd -----------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other ** -1.0)
        return mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return mul(self ** -1.0, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def astensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = astensor(a)
    out_data = a.data ** p

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = astensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = astensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = astensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = astensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = astensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def silu(a) -> Tensor:
    a = astensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def backward(g):
        _accum(a, g * (s + a.data * s * (1.0 - s)))

    return _make(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    out_data = a.data * mask

    def backward(g):
        _accum(a, g * mask)

    return _make(out_data, (a,), backward)


# -- reductions / shape ------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            shape = list(a.shape)
            for i in sorted(ax):
                shape[i % a.ndim] = 1
            g = g.reshape(shape)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[i % a.ndim] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(reduce_sum(a, axis, keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    out_data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(out_data, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    ts = [astensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(out_data, tuple(ts), backward)


def getitem(a, key) -> Tensor:
    a = astensor(a)
    out_data = a.data[key]

    def backward(g):
        dx = np.zeros_like(a.data)
        np.add.at(dx, key, g)
        _accum(a, dx)

    return _make(out_data, (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """a: (..., m, k) @ b: (k, n). Leading dims of ``a`` are batch dims."""
    a, b = astensor(a), astensor(b)
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        if b.requires_grad:
            if a.ndim == 2:
                _accum(b, a.data.T @ g)
            else:
                ad = a.data.reshape(-1, a.shape[-1])
                gd = g.reshape(-1, g.shape[-1])
                _accum(b, ad.T @ gd)

    return _make(out_data, (a, b), backward)


def conv2d(x, w, b=None, padding: int = 0) -> Tensor:
    """NCHW stride-1 convolution. w: (Cout, Cin, kh, kw), b: (Cout,)."""
    x, w = astensor(x), astensor(w)
    bt = astensor(b) if b is not None else None
    bs, cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    if cin != cin2:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin2}")
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    if kh == 1 and kw == 1:
        flat = xp.reshape(bs, cin, -1)
        out_data = (w.data.reshape(cout, cin) @ flat).reshape(bs, cout, *xp.shape[2:])
    else:
        out_data = kernels.conv_fwd(xp, w.data)
    if bt is not None:
        out_data = out_data + bt.data.reshape(1, cout, 1, 1)

    def backward(g):
        if bt is not None:
            _accum(bt, g.sum(axis=(0, 2, 3)))
        if kh == 1 and kw == 1:
            g2 = g.reshape(bs, cout, -1)
            if w.requires_grad:
                gw = (g2.transpose(1, 0, 2).reshape(cout, -1)
                      @ xp.reshape(bs, cin, -1).transpose(1, 0, 2).reshape(cin, -1).T)
                _accum(w, gw.reshape(w.shape))
            if x.requires_grad:
                dxp = (w.data.reshape(cout, cin).T @ g2).reshape(xp.shape)
            else:
                dxp = None
        else:
            dxp, dw = kernels.conv_bwd(xp, w.data, g, need_dx=x.requires_grad,
                                       need_dw=w.requires_grad)
            if dw is not None:
                _accum(w, dw)
        if x.requires_grad and dxp is not None:
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accum(x, dxp)

    parents = (x, w) if bt is None else (x, w, bt)
    return _make(out_data, parents, backward)


def maxpool2x2(x) -> Tensor:
    x = astensor(x)
    bsz, c, h, w = x.shape
    out_data, idx = kernels.maxpool2x2(x.data)

    def backward(g):
        _accum(x, kernels.maxpool2x2_backward(g, idx, h, w))

    return _make(out_data, (x,), backward)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of (B, C, H, W)."""
    x = astensor(x)
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        b, c, h2, w2 = g.shape
        _accum(x, g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _make(out_data, (x,), backward)


def embedding(table, ids) -> Tensor:
    """Row lookup: table (V, D), ids int array of any shape -> (*ids.shape, D)."""
    table = astensor(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, gt)

    return _make(out_data, (table,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = astensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        soft = np.exp(out_data)
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), backward)


def gather_last(x, idx) -> Tensor:
    """Pick x[..., idx] per leading position. idx shape == x.shape[:-1]."""
    x = astensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx[..., None], g[..., None], axis=-1)
        _accum(x, dx)

    return _make(out_data, (x,), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean over leading dims of -log softmax(logits)[target]."""
    ls = log_softmax(logits, axis=-1)
    picked = gather_last(ls, targets)
    return -reduce_mean(picked)


def stack(tensors, axis=0) -> Tensor:
    """Stack along a new axis (via reshape + concat, so it stays on-tape)."""
    ts = [astensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)
