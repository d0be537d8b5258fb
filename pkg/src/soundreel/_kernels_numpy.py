"""Pure-numpy kernel lane.

Reference implementations of the hot kernels; the numba lane in
``_kernels_numba`` mirrors these signatures exactly. Convolutions are
3x3, stride 1, zero padding 1 throughout (the only shape the models use).
All kernels take and return float64 C-contiguous arrays.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def _shift_slices(dh: int, dw: int, h: int, wd: int):
    """Output and input slices so out[os] aligns with in[is_] shifted by (dh, dw)."""
    out_h = slice(max(0, -dh), h - max(0, dh))
    in_h = slice(max(0, dh), h - max(0, -dh))
    out_w = slice(max(0, -dw), wd - max(0, dw))
    in_w = slice(max(0, dw), wd - max(0, -dw))
    return out_h, out_w, in_h, in_w


def _im2col(x):
    """(B,C,H,W) -> column matrix (B*H*W, C*9) of 3x3 zero-padded patches."""
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    s0, s1, s2, s3 = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, h, w, 3, 3), strides=(s0, s1, s2, s3, s2, s3)
    )
    return np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * 9)


def conv2d3x3_fwd(x, w, bias):
    """x (B,C,H,W), w (O,C,3,3), bias (O,) -> (B,O,H,W). One im2col GEMM."""
    b, c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    y = cols @ w.reshape(o, c * 9).T + bias
    return np.ascontiguousarray(y.reshape(b, h, wd, o).transpose(0, 3, 1, 2))


def conv2d3x3_bwd(x, w, dy):
    """Gradients of conv2d3x3_fwd: returns (dx, dw, db).

    Backward runs as nine shifted GEMMs per gradient so nothing the size
    of the patch matrix is materialized.
    """
    b, c, h, wd = x.shape
    o = w.shape[0]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for ki in range(3):
        for kj in range(3):
            oh, ow, ih, iw = _shift_slices(ki - 1, kj - 1, h, wd)
            dy_s = dy[:, :, oh, ow]
            x_s = x[:, :, ih, iw]
            dx[:, :, ih, iw] += np.tensordot(dy_s, w[:, :, ki, kj], axes=([1], [0])).transpose(
                0, 3, 1, 2
            )
            dw[:, :, ki, kj] = np.tensordot(dy_s, x_s, axes=([0, 2, 3], [0, 2, 3]))
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_fwd(xs, wx, wh, bias):
    """Run an LSTM over a whole sequence from zero initial state.

    xs (N,B,I), wx (I,4H), wh (H,4H), bias (4H,) with gate layout [i,f,g,o].
    Returns (hs (N,B,H), cs (N,B,H), gates (N,B,4H) post-activation).
    """
    n, b, _ = xs.shape
    hdim = wh.shape[0]
    hs = np.zeros((n, b, hdim))
    cs = np.zeros((n, b, hdim))
    gates = np.zeros((n, b, 4 * hdim))
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    for t in range(n):
        a = xs[t] @ wx + h @ wh + bias
        i = _sigmoid(a[:, :hdim])
        f = _sigmoid(a[:, hdim : 2 * hdim])
        g = np.tanh(a[:, 2 * hdim : 3 * hdim])
        o = _sigmoid(a[:, 3 * hdim :])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
        gates[t] = np.concatenate([i, f, g, o], axis=1)
    return hs, cs, gates


def lstm_seq_bwd(xs, wx, wh, hs, cs, gates, dhs):
    """Backprop through lstm_seq_fwd. dhs (N,B,H) is dL/dh_t per step."""
    n, b, idim = xs.shape
    hdim = wh.shape[0]
    dxs = np.zeros_like(xs)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hdim)
    dh_next = np.zeros((b, hdim))
    dc_next = np.zeros((b, hdim))
    for t in range(n - 1, -1, -1):
        i = gates[t][:, :hdim]
        f = gates[t][:, hdim : 2 * hdim]
        g = gates[t][:, 2 * hdim : 3 * hdim]
        o = gates[t][:, 3 * hdim :]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros((b, hdim))
        h_prev = hs[t - 1] if t > 0 else np.zeros((b, hdim))
        tanh_c = np.tanh(c)
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tanh_c * o * (1.0 - o),
            ],
            axis=1,
        )
        dxs[t] = da @ wx.T
        dwx += xs[t].T @ da
        dwh += h_prev.T @ da
        db += da.sum(axis=0)
        dh_next = da @ wh.T
        dc_next = dc * f
    return dxs, dwx, dwh, db


def mlp_denoiser_fwd(z, temb, cond, w1, b1, wt1, wc1, w2, b2, wc2, w3, b3, w4, b4):
    """Fused forward of the point-cloud noise predictor (no caches)."""
    h1 = gelu_fwd(z @ w1 + b1 + temb @ wt1 + cond @ wc1)
    h2 = gelu_fwd(h1 @ w2 + b2 + cond @ wc2)
    h3 = gelu_fwd(h2 @ w3 + b3)
    return h3 @ w4 + b4
