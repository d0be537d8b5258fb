"""Numba-jitted kernel lane.

Same signatures as ``_kernels_numpy``; direct loops instead of im2col so
the 3x3 convolutions avoid materializing patch matrices. No fastmath:
results must be stable run-to-run, and the two lanes are compared to
~1e-12 in the tests. First call per process pays JIT compilation
(cached on disk afterwards).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def gelu_fwd(x):
    xc = np.ascontiguousarray(x)
    out = np.empty_like(xc)
    xf = xc.ravel()
    of = out.ravel()
    for i in range(xf.shape[0]):
        v = xf[i]
        of[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
    return out


@njit(cache=True)
def gelu_bwd(x, dy):
    xc = np.ascontiguousarray(x)
    dc = np.ascontiguousarray(dy)
    out = np.empty_like(xc)
    xf = xc.ravel()
    df = dc.ravel()
    of = out.ravel()
    for i in range(xf.shape[0]):
        v = xf[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = math.exp(-0.5 * v * v) * _INV_SQRT_2PI
        of[i] = df[i] * (cdf + v * pdf)
    return out


_BLAS_CHANNEL_CUTOFF = 256  # c*o at or above this: im2col + dot beats direct loops


@njit(cache=True)
def _im2col(x):
    b, c, h, wd = x.shape
    cols = np.zeros((b * h * wd, c * 9))
    for bi in range(b):
        for ci in range(c):
            for ki in range(3):
                dh = ki - 1
                h0 = -dh if dh < 0 else 0
                h1 = h - dh if dh > 0 else h
                for kj in range(3):
                    dwj = kj - 1
                    w0 = -dwj if dwj < 0 else 0
                    w1 = wd - dwj if dwj > 0 else wd
                    col = ci * 9 + ki * 3 + kj
                    for hi in range(h0, h1):
                        base = (bi * h + hi) * wd
                        xrow = x[bi, ci, hi + dh]
                        for wi in range(w0, w1):
                            cols[base + wi, col] = xrow[wi + dwj]
    return cols


@njit(cache=True)
def _conv_fwd_blas(x, w, bias):
    b, c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    wmat = np.ascontiguousarray(w.reshape(o, c * 9).T)
    flat = np.dot(cols, wmat)  # (b*h*wd, o)
    y = np.empty((b, o, h, wd))
    for bi in range(b):
        for oi in range(o):
            for hi in range(h):
                base = (bi * h + hi) * wd
                for wi in range(wd):
                    y[bi, oi, hi, wi] = flat[base + wi, oi] + bias[oi]
    return y


@njit(cache=True)
def _conv_fwd_direct(x, w, bias):
    # nine shifted accumulation passes; inner loops are stride-1 so LLVM
    # can vectorize them
    b, c, h, wd = x.shape
    o = w.shape[0]
    y = np.empty((b, o, h, wd))
    for bi in range(b):
        for oi in range(o):
            yplane = y[bi, oi]
            for hi in range(h):
                for wi in range(wd):
                    yplane[hi, wi] = bias[oi]
            for ci in range(c):
                xplane = x[bi, ci]
                for ki in range(3):
                    dh = ki - 1
                    h0 = -dh if dh < 0 else 0
                    h1 = h - dh if dh > 0 else h
                    for kj in range(3):
                        dwj = kj - 1
                        w0 = -dwj if dwj < 0 else 0
                        w1 = wd - dwj if dwj > 0 else wd
                        wgt = w[oi, ci, ki, kj]
                        for hi in range(h0, h1):
                            xrow = xplane[hi + dh]
                            yrow = yplane[hi]
                            for wi in range(w0, w1):
                                yrow[wi] += wgt * xrow[wi + dwj]
    return y


@njit(cache=True)
def conv2d3x3_fwd(x, w, bias):
    if x.shape[1] * w.shape[0] >= _BLAS_CHANNEL_CUTOFF:
        return _conv_fwd_blas(x, w, bias)
    return _conv_fwd_direct(x, w, bias)


@njit(cache=True)
def _conv_bwd_direct(x, w, dy):
    b, c, h, wd = x.shape
    o = w.shape[0]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(o)
    for bi in range(b):
        for oi in range(o):
            dyplane = dy[bi, oi]
            for hi in range(h):
                s = 0.0
                for wi in range(wd):
                    s += dyplane[hi, wi]
                db[oi] += s
            for ci in range(c):
                xplane = x[bi, ci]
                dxplane = dx[bi, ci]
                for ki in range(3):
                    dh = ki - 1
                    h0 = -dh if dh < 0 else 0
                    h1 = h - dh if dh > 0 else h
                    for kj in range(3):
                        dwj = kj - 1
                        w0 = -dwj if dwj < 0 else 0
                        w1 = wd - dwj if dwj > 0 else wd
                        wgt = w[oi, ci, ki, kj]
                        acc = 0.0
                        for hi in range(h0, h1):
                            dyrow = dyplane[hi]
                            xrow = xplane[hi + dh]
                            dxrow = dxplane[hi + dh]
                            s = 0.0
                            for wi in range(w0, w1):
                                g = dyrow[wi]
                                s += g * xrow[wi + dwj]
                                dxrow[wi + dwj] += wgt * g
                            acc += s
                        dw[oi, ci, ki, kj] += acc
    return dx, dw, db


@njit(cache=True)
def _conv_bwd_blas(x, w, dy):
    b, c, h, wd = x.shape
    o = w.shape[0]
    dyf = np.empty((b * h * wd, o))
    for bi in range(b):
        for oi in range(o):
            for hi in range(h):
                base = (bi * h + hi) * wd
                for wi in range(wd):
                    dyf[base + wi, oi] = dy[bi, oi, hi, wi]
    cols = _im2col(x)
    dw = np.dot(np.ascontiguousarray(dyf.T), cols).reshape(o, c, 3, 3)
    db = np.zeros(o)
    for r in range(dyf.shape[0]):
        for oi in range(o):
            db[oi] += dyf[r, oi]
    # dx: one GEMM into patch-gradient columns, then scatter-add (col2im)
    dcols = np.dot(dyf, np.ascontiguousarray(w.reshape(o, c * 9)))
    dx = np.zeros_like(x)
    for bi in range(b):
        for ci in range(c):
            for ki in range(3):
                dh = ki - 1
                h0 = -dh if dh < 0 else 0
                h1 = h - dh if dh > 0 else h
                for kj in range(3):
                    dwj = kj - 1
                    w0 = -dwj if dwj < 0 else 0
                    w1 = wd - dwj if dwj > 0 else wd
                    col = ci * 9 + ki * 3 + kj
                    for hi in range(h0, h1):
                        base = (bi * h + hi) * wd
                        dxrow = dx[bi, ci, hi + dh]
                        for wi in range(w0, w1):
                            dxrow[wi + dwj] += dcols[base + wi, col]
    return dx, dw, db


@njit(cache=True)
def conv2d3x3_bwd(x, w, dy):
    if x.shape[1] * w.shape[0] >= _BLAS_CHANNEL_CUTOFF:
        return _conv_bwd_blas(x, w, dy)
    return _conv_bwd_direct(x, w, dy)


@njit(cache=True)
def lstm_seq_fwd(xs, wx, wh, bias):
    n, b, _ = xs.shape
    hdim = wh.shape[0]
    hs = np.zeros((n, b, hdim))
    cs = np.zeros((n, b, hdim))
    gates = np.zeros((n, b, 4 * hdim))
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    for t in range(n):
        a = np.dot(np.ascontiguousarray(xs[t]), wx) + np.dot(h, wh) + bias
        for bi in range(b):
            for j in range(hdim):
                i_g = 1.0 / (1.0 + math.exp(-a[bi, j]))
                f_g = 1.0 / (1.0 + math.exp(-a[bi, hdim + j]))
                g_g = math.tanh(a[bi, 2 * hdim + j])
                o_g = 1.0 / (1.0 + math.exp(-a[bi, 3 * hdim + j]))
                cv = f_g * c[bi, j] + i_g * g_g
                c[bi, j] = cv
                h[bi, j] = o_g * math.tanh(cv)
                gates[t, bi, j] = i_g
                gates[t, bi, hdim + j] = f_g
                gates[t, bi, 2 * hdim + j] = g_g
                gates[t, bi, 3 * hdim + j] = o_g
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


@njit(cache=True)
def lstm_seq_bwd(xs, wx, wh, hs, cs, gates, dhs):
    n, b, _ = xs.shape
    hdim = wh.shape[0]
    dxs = np.zeros_like(xs)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hdim)
    dh_next = np.zeros((b, hdim))
    dc_next = np.zeros((b, hdim))
    da = np.zeros((b, 4 * hdim))
    wxt = np.ascontiguousarray(wx.T)
    wht = np.ascontiguousarray(wh.T)
    for t in range(n - 1, -1, -1):
        for bi in range(b):
            for j in range(hdim):
                i_g = gates[t, bi, j]
                f_g = gates[t, bi, hdim + j]
                g_g = gates[t, bi, 2 * hdim + j]
                o_g = gates[t, bi, 3 * hdim + j]
                c_prev = cs[t - 1, bi, j] if t > 0 else 0.0
                tanh_c = math.tanh(cs[t, bi, j])
                dh = dhs[t, bi, j] + dh_next[bi, j]
                dc = dc_next[bi, j] + dh * o_g * (1.0 - tanh_c * tanh_c)
                da[bi, j] = dc * g_g * i_g * (1.0 - i_g)
                da[bi, hdim + j] = dc * c_prev * f_g * (1.0 - f_g)
                da[bi, 2 * hdim + j] = dc * i_g * (1.0 - g_g * g_g)
                da[bi, 3 * hdim + j] = dh * tanh_c * o_g * (1.0 - o_g)
                dc_next[bi, j] = dc * f_g
        dxs[t] = np.dot(da, wxt)
        dwx += np.dot(np.ascontiguousarray(xs[t].T), da)
        if t > 0:
            dwh += np.dot(np.ascontiguousarray(hs[t - 1].T), da)
        for j in range(4 * hdim):
            s = 0.0
            for bi in range(b):
                s += da[bi, j]
            db[j] += s
        dh_next = np.dot(da, wht)
    return dxs, dwx, dwh, db


@njit(cache=True)
def mlp_denoiser_fwd(z, temb, cond, w1, b1, wt1, wc1, w2, b2, wc2, w3, b3, w4, b4):
    h1 = gelu_fwd(np.dot(z, w1) + b1 + np.dot(temb, wt1) + np.dot(cond, wc1))
    h2 = gelu_fwd(np.dot(h1, w2) + b2 + np.dot(cond, wc2))
    h3 = gelu_fwd(np.dot(h2, w3) + b3)
    return np.dot(h3, w4) + b4
