"""Strided 2-D convolution kernels (forward + both backward passes).

These are the only loops hot enough to matter: every speaker-encoder call
runs a stack of 3x3 stride-2 "same" convolutions, and training re-enters
them thousands of times. Two interchangeable backends are provided:

* a numba ``@njit`` backend (default), and
* a pure-numpy backend built from shifted-slice matmuls.

Set ``BASISTTS_BACKEND=numpy`` in the environment to force the fallback.
Both backends are deterministic; they may differ in the last bits because
they accumulate in different orders, but each one is bit-stable run to run.
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("BASISTTS_BACKEND", "numba").lower() != "numpy"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def _same_pad(size: int, stride: int, kernel: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for 'same' padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


def conv2d_out_shape(h: int, w: int, stride: int = 2) -> tuple[int, int]:
    return -(-h // stride), -(-w // stride)


# ---------------------------------------------------------------------------
# numpy backend: one shifted-slice matmul per kernel tap, fixed order.


def _conv2d_forward_np(x, w, stride):
    kh, kw, cin, cout = w.shape
    h, ww = x.shape[0], x.shape[1]
    ho, ph, ph2 = _same_pad(h, stride, kh)
    wo, pw, pw2 = _same_pad(ww, stride, kw)
    xp = np.pad(x, ((ph, ph2), (pw, pw2), (0, 0)))
    y = np.zeros((ho, wo, cout), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[di : di + (ho - 1) * stride + 1 : stride,
                       dj : dj + (wo - 1) * stride + 1 : stride]
            y += (patch.reshape(-1, cin) @ w[di, dj]).reshape(ho, wo, cout)
    return y


def _conv2d_backward_x_np(g, w, x_shape, stride):
    kh, kw, cin, cout = w.shape
    h, ww = x_shape[0], x_shape[1]
    ho, ph, ph2 = _same_pad(h, stride, kh)
    wo, pw, pw2 = _same_pad(ww, stride, kw)
    gxp = np.zeros((h + ph + ph2, ww + pw + pw2, cin), dtype=g.dtype)
    gflat = g.reshape(-1, cout)
    for di in range(kh):
        for dj in range(kw):
            gxp[di : di + (ho - 1) * stride + 1 : stride,
                dj : dj + (wo - 1) * stride + 1 : stride] += (
                gflat @ w[di, dj].T).reshape(ho, wo, cin)
    return gxp[ph : ph + h, pw : pw + ww]


def _conv2d_backward_w_np(g, x, w_shape, stride):
    kh, kw, cin, cout = w_shape
    h, ww = x.shape[0], x.shape[1]
    ho, ph, ph2 = _same_pad(h, stride, kh)
    wo, pw, pw2 = _same_pad(ww, stride, kw)
    xp = np.pad(x, ((ph, ph2), (pw, pw2), (0, 0)))
    gw = np.zeros(w_shape, dtype=g.dtype)
    gflat = g.reshape(-1, cout)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[di : di + (ho - 1) * stride + 1 : stride,
                       dj : dj + (wo - 1) * stride + 1 : stride]
            gw[di, dj] = patch.reshape(-1, cin).T @ gflat
    return gw


# ---------------------------------------------------------------------------
# numba backend: plain loops, nopython.

if USE_NUMBA:

    @njit(cache=True)
    def _conv2d_forward_nb(x, w, stride, ho, wo, ph, pw):  # pragma: no cover
        kh, kw, cin, cout = w.shape
        h, ww = x.shape[0], x.shape[1]
        y = np.zeros((ho, wo, cout), dtype=x.dtype)
        for i in range(ho):
            for j in range(wo):
                for di in range(kh):
                    p = i * stride + di - ph
                    if p < 0 or p >= h:
                        continue
                    for dj in range(kw):
                        q = j * stride + dj - pw
                        if q < 0 or q >= ww:
                            continue
                        for ci in range(cin):
                            xv = x[p, q, ci]
                            for co in range(cout):
                                y[i, j, co] += xv * w[di, dj, ci, co]
        return y

    @njit(cache=True)
    def _conv2d_backward_x_nb(g, w, h, ww, stride, ph, pw):  # pragma: no cover
        kh, kw, cin, cout = w.shape
        ho, wo = g.shape[0], g.shape[1]
        gx = np.zeros((h, ww, cin), dtype=g.dtype)
        for i in range(ho):
            for j in range(wo):
                for di in range(kh):
                    p = i * stride + di - ph
                    if p < 0 or p >= h:
                        continue
                    for dj in range(kw):
                        q = j * stride + dj - pw
                        if q < 0 or q >= ww:
                            continue
                        for ci in range(cin):
                            acc = 0.0
                            for co in range(cout):
                                acc += g[i, j, co] * w[di, dj, ci, co]
                            gx[p, q, ci] += acc
        return gx

    @njit(cache=True)
    def _conv2d_backward_w_nb(g, x, kh, kw, stride, ph, pw):  # pragma: no cover
        ho, wo, cout = g.shape
        h, ww, cin = x.shape
        gw = np.zeros((kh, kw, cin, cout), dtype=g.dtype)
        for i in range(ho):
            for j in range(wo):
                for di in range(kh):
                    p = i * stride + di - ph
                    if p < 0 or p >= h:
                        continue
                    for dj in range(kw):
                        q = j * stride + dj - pw
                        if q < 0 or q >= ww:
                            continue
                        for ci in range(cin):
                            xv = x[p, q, ci]
                            for co in range(cout):
                                gw[di, dj, ci, co] += xv * g[i, j, co]
        return gw


# ---------------------------------------------------------------------------
# public dispatchers


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 2) -> np.ndarray:
    """Same-padded strided conv; x is (H, W, Cin), w is (kh, kw, Cin, Cout)."""
    if USE_NUMBA:
        kh, kw = w.shape[0], w.shape[1]
        ho, ph, _ = _same_pad(x.shape[0], stride, kh)
        wo, pw, _ = _same_pad(x.shape[1], stride, kw)
        return _conv2d_forward_nb(np.ascontiguousarray(x),
                                  np.ascontiguousarray(w), stride, ho, wo, ph, pw)
    return _conv2d_forward_np(x, w, stride)


def conv2d_backward_x(g: np.ndarray, w: np.ndarray, x_shape, stride: int = 2) -> np.ndarray:
    if USE_NUMBA:
        kh, kw = w.shape[0], w.shape[1]
        _, ph, _ = _same_pad(x_shape[0], stride, kh)
        _, pw, _ = _same_pad(x_shape[1], stride, kw)
        return _conv2d_backward_x_nb(np.ascontiguousarray(g),
                                     np.ascontiguousarray(w),
                                     x_shape[0], x_shape[1], stride, ph, pw)
    return _conv2d_backward_x_np(g, w, x_shape, stride)


def conv2d_backward_w(g: np.ndarray, x: np.ndarray, w_shape, stride: int = 2) -> np.ndarray:
    if USE_NUMBA:
        kh, kw = w_shape[0], w_shape[1]
        _, ph, _ = _same_pad(x.shape[0], stride, kh)
        _, pw, _ = _same_pad(x.shape[1], stride, kw)
        return _conv2d_backward_w_nb(np.ascontiguousarray(g),
                                     np.ascontiguousarray(x),
                                     kh, kw, stride, ph, pw)
    return _conv2d_backward_w_np(g, x, w_shape, stride)
