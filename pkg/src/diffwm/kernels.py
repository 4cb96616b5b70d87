"""Hot numeric kernels, in numba and pure-numpy flavors.

Stride-1 NCHW convolutions are computed as a loop over kernel offsets, one
BLAS matmul per offset, which avoids materializing im2col patch matrices.
On the numba backend, small feature maps (where BLAS dispatch overhead
dominates) use direct njit convolution loops instead, and the 2x2 max-pool
pair is always njit. The pure-numpy backend implements identical semantics;
``benchmarks/benchmark_backends.py`` times the two side by side.

All njit kernels run single-threaded (BLAS supplies the multicore
parallelism; thread launches are expensive under sandboxed kernels), so
results are deterministic.
"""

from __future__ import annotations

import numpy as np

from .backend import ACTIVE

# direct njit convolution below this many multiply-accumulates (numba backend
# only); larger convolutions go through one fat GEMM on a gathered patch matrix
_SMALL_CONV_MACS = 300_000

_scratch: dict = {}


def _scratch_buffer(tag: str, shape: tuple, dtype) -> np.ndarray:
    """Reusable uninitialized scratch array for kernel-internal temporaries.

    Keyed by (tag, shape, dtype); the training loop hits a handful of stable
    shapes, so this avoids re-faulting fresh pages every step. Callers must
    fully overwrite the buffer and must not let it escape.
    """
    key = (tag, shape, np.dtype(dtype).str)
    buf = _scratch.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _scratch[key] = buf
        if len(_scratch) > 64:
            _scratch.pop(next(iter(_scratch)))
    return buf

# ---------------------------------------------------------------------------
# shared offset-loop convolution (BLAS matmuls, used by both backends)


def _conv_fwd_blas(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """xp: padded input (B, Cin, Hp, Wp); w: (Cout, Cin, kh, kw) ->
    (B, Cout, oh, ow)."""
    b, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    out = np.zeros((b, cout, oh * ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            piece = np.ascontiguousarray(xp[:, :, i : i + oh, j : j + ow]
                                         ).reshape(b, cin, oh * ow)
            out += w[:, :, i, j] @ piece
    return out.reshape(b, cout, oh, ow)


def _conv_bwd_blas(xp: np.ndarray, w: np.ndarray, dout: np.ndarray,
                   need_dx: bool, need_dw: bool):
    b, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    g = dout.reshape(b, cout, oh * ow)
    dxp = np.zeros_like(xp) if need_dx else None
    dw = np.zeros_like(w) if need_dw else None
    g_flat = None
    if need_dw:
        g_flat = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(cout, b * oh * ow)
    for i in range(kh):
        for j in range(kw):
            if need_dw:
                piece = np.ascontiguousarray(xp[:, :, i : i + oh, j : j + ow]
                                             ).reshape(b, cin, oh * ow)
                pf = piece.transpose(1, 0, 2).reshape(cin, b * oh * ow)
                dw[:, :, i, j] = g_flat @ pf.T
            if need_dx:
                contrib = w[:, :, i, j].T @ g  # (B, Cin, oh*ow)
                dxp[:, :, i : i + oh, j : j + ow] += contrib.reshape(b, cin, oh, ow)
    return dxp, dw


# ---------------------------------------------------------------------------
# pure numpy


def conv_fwd_np(xp, w):
    return _conv_fwd_blas(xp, w)


def conv_bwd_np(xp, w, dout, need_dx=True, need_dw=True):
    return _conv_bwd_blas(xp, w, dout, need_dx, need_dw)


def maxpool2x2_np(x: np.ndarray):
    """2x2/stride-2 max pool. Returns (out, argmax indices in 0..3)."""
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xr = x.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    idx = xr.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(xr, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward_np(dout: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c, h2, w2 = dout.shape
    dxr = np.zeros((b, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dxr, idx[..., None].astype(np.int64), dout[..., None], axis=-1)
    return dxr.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


# ---------------------------------------------------------------------------
# numba

if ACTIVE == "numba":
    from numba import njit

    @njit(cache=True)
    def _gather_cols(xp, kh, kw, cols):
        """cols[(ci*kh+i)*kw+j, bi*P + oi*ow+oj] = xp[bi, ci, oi+i, oj+j];
        one fat (Cin*kh*kw, B*P) patch matrix for a single large GEMM."""
        b, c, hp, wp = xp.shape
        oh = hp - kh + 1
        ow = wp - kw + 1
        p = oh * ow
        for bi in range(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        k = (ci * kh + i) * kw + j
                        base = bi * p
                        for oi in range(oh):
                            row = oi * ow
                            for oj in range(ow):
                                cols[k, base + row + oj] = xp[bi, ci, oi + i, oj + j]

    @njit(cache=True)
    def _scatter_cols(dcols, kh, kw, dxp):
        """Adjoint of _gather_cols: scatter-add patch gradients back."""
        b, c, hp, wp = dxp.shape
        oh = hp - kh + 1
        ow = wp - kw + 1
        p = oh * ow
        for bi in range(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        k = (ci * kh + i) * kw + j
                        base = bi * p
                        for oi in range(oh):
                            row = oi * ow
                            for oj in range(ow):
                                dxp[bi, ci, oi + i, oj + j] += dcols[k, base + row + oj]

    @njit(cache=True)
    def _conv_fwd_direct(xp, w, out):
        b, cin, hp, wp = xp.shape
        cout, _, kh, kw = w.shape
        oh = hp - kh + 1
        ow = wp - kw + 1
        for bi in range(b):
            for o in range(cout):
                for oi in range(oh):
                    for oj in range(ow):
                        acc = 0.0
                        for ci in range(cin):
                            for i in range(kh):
                                for j in range(kw):
                                    acc += w[o, ci, i, j] * xp[bi, ci, oi + i, oj + j]
                        out[bi, o, oi, oj] = acc

    @njit(cache=True)
    def _conv_bwd_dx_direct(w, dout, dxp):
        b, cout, oh, ow = dout.shape
        _, cin, kh, kw = w.shape
        for bi in range(b):
            for o in range(cout):
                for oi in range(oh):
                    for oj in range(ow):
                        g = dout[bi, o, oi, oj]
                        for ci in range(cin):
                            for i in range(kh):
                                for j in range(kw):
                                    dxp[bi, ci, oi + i, oj + j] += g * w[o, ci, i, j]

    @njit(cache=True)
    def _conv_bwd_dw_direct(xp, dout, dw):
        b, cout, oh, ow = dout.shape
        _, cin, kh, kw = dw.shape
        for o in range(cout):
            for bi in range(b):
                for oi in range(oh):
                    for oj in range(ow):
                        g = dout[bi, o, oi, oj]
                        for ci in range(cin):
                            for i in range(kh):
                                for j in range(kw):
                                    dw[o, ci, i, j] += g * xp[bi, ci, oi + i, oj + j]

    @njit(cache=True)
    def _maxpool_nb(x, out, idx):
        b, c, h2, w2 = out.shape
        for bi in range(b):
            for ci in range(c):
                for oi in range(h2):
                    for oj in range(w2):
                        best = x[bi, ci, 2 * oi, 2 * oj]
                        arg = 0
                        k = 1
                        for di in range(2):
                            for dj in range(2):
                                if di == 0 and dj == 0:
                                    continue
                                v = x[bi, ci, 2 * oi + di, 2 * oj + dj]
                                if v > best:
                                    best = v
                                    arg = k
                                k += 1
                        out[bi, ci, oi, oj] = best
                        idx[bi, ci, oi, oj] = arg

    @njit(cache=True)
    def _maxpool_bwd_nb(dout, idx, dx):
        b, c, h2, w2 = dout.shape
        for bi in range(b):
            for ci in range(c):
                for oi in range(h2):
                    for oj in range(w2):
                        k = idx[bi, ci, oi, oj]
                        di = k // 2
                        dj = k % 2
                        dx[bi, ci, 2 * oi + di, 2 * oj + dj] = dout[bi, ci, oi, oj]

    def conv_fwd_nb(xp, w):
        b, cin, hp, wp = xp.shape
        cout, _, kh, kw = w.shape
        oh, ow = hp - kh + 1, wp - kw + 1
        if b * cout * cin * kh * kw * oh * ow <= _SMALL_CONV_MACS:
            out = np.empty((b, cout, oh, ow), dtype=xp.dtype)
            _conv_fwd_direct(np.ascontiguousarray(xp), np.ascontiguousarray(w), out)
            return out
        # large maps: one fat GEMM over a (Cin*kh*kw, B*P) patch matrix
        cols = _scratch_buffer("fwd_cols", (cin * kh * kw, b * oh * ow), xp.dtype)
        _gather_cols(np.ascontiguousarray(xp), kh, kw, cols)
        out = _scratch_buffer("fwd_out", (cout, b * oh * ow), xp.dtype)
        np.matmul(w.reshape(cout, -1), cols, out=out)
        return np.ascontiguousarray(
            out.reshape(cout, b, oh, ow).transpose(1, 0, 2, 3))

    def conv_bwd_nb(xp, w, dout, need_dx=True, need_dw=True):
        b, cin, hp, wp = xp.shape
        cout, _, kh, kw = w.shape
        oh, ow = hp - kh + 1, wp - kw + 1
        if b * cout * cin * kh * kw * oh * ow <= _SMALL_CONV_MACS:
            xp = np.ascontiguousarray(xp)
            dout = np.ascontiguousarray(dout)
            dxp = dw = None
            if need_dx:
                dxp = np.zeros_like(xp)
                _conv_bwd_dx_direct(np.ascontiguousarray(w), dout, dxp)
            if need_dw:
                dw = np.zeros_like(w)
                _conv_bwd_dw_direct(xp, dout, dw)
            return dxp, dw
        g = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(cout, -1)
        dxp = dw = None
        if need_dw:
            cols = _scratch_buffer("bwd_cols", (cin * kh * kw, b * oh * ow), xp.dtype)
            _gather_cols(np.ascontiguousarray(xp), kh, kw, cols)
            dw = (g @ cols.T).reshape(w.shape)
        if need_dx:
            dcols = _scratch_buffer("bwd_dcols", (cin * kh * kw, b * oh * ow), xp.dtype)
            np.matmul(np.ascontiguousarray(w.reshape(cout, -1).T), g, out=dcols)
            dxp = np.zeros_like(xp)
            _scatter_cols(dcols, kh, kw, dxp)
        return dxp, dw

    def maxpool2x2_nb(x):
        b, c, h, w = x.shape
        out = np.empty((b, c, h // 2, w // 2), dtype=x.dtype)
        idx = np.empty((b, c, h // 2, w // 2), dtype=np.int8)
        _maxpool_nb(np.ascontiguousarray(x), out, idx)
        return out, idx

    def maxpool2x2_backward_nb(dout, idx, h, w):
        dx = np.zeros((dout.shape[0], dout.shape[1], h, w), dtype=dout.dtype)
        _maxpool_bwd_nb(np.ascontiguousarray(dout), idx, dx)
        return dx

    conv_fwd = conv_fwd_nb
    conv_bwd = conv_bwd_nb
    maxpool2x2 = maxpool2x2_nb
    maxpool2x2_backward = maxpool2x2_backward_nb
else:
    conv_fwd = conv_fwd_np
    conv_bwd = conv_bwd_np
    maxpool2x2 = maxpool2x2_np
    maxpool2x2_backward = maxpool2x2_backward_np
