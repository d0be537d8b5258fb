"""Forward/backward pairs for the small networks in this package.

Every *_fwd returns (output, cache); the matching *_bwd consumes the
cache and upstream gradient. Gradients are exact (checked against
central finite differences in the test suite). Hot kernels (conv, LSTM,
GELU) dispatch through :func:`soundreel.backend.kernels`.
"""

from __future__ import annotations

import numpy as np

from soundreel.backend import kernels


def gelu_fwd(x):
    return kernels().gelu_fwd(x), x


def gelu_bwd(dy, cache):
    return kernels().gelu_bwd(cache, dy)


def tanh_fwd(x):
    y = np.tanh(x)
    return y, y


def tanh_bwd(dy, cache):
    return dy * (1.0 - cache * cache)


def linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    # fold any leading batch axes into one for the weight gradient
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def conv3x3_fwd(x, w, b):
    return kernels().conv2d3x3_fwd(x, w, b), (x, w)


def conv3x3_bwd(dy, cache):
    x, w = cache
    return kernels().conv2d3x3_bwd(x, w, np.ascontiguousarray(dy))


def instance_norm_fwd(x, gamma, beta, eps=1e-5):
    """Normalize each (sample, channel) plane over its spatial extent."""
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv_std, gamma)


def instance_norm_bwd(dy, cache):
    xhat, inv_std, gamma = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    m = xhat.shape[2] * xhat.shape[3]
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=(2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(2, 3), keepdims=True) / m
    )
    return dx, dgamma, dbeta


def avgpool2_fwd(x):
    """2x2 mean pooling, trailing odd row/column dropped."""
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xt = x[:, :, : h2 * 2, : w2 * 2].reshape(b, c, h2, 2, w2, 2)
    return xt.mean(axis=(3, 5)), (x.shape,)


def avgpool2_bwd(dy, cache):
    (shape,) = cache
    b, c, h, w = shape
    h2, w2 = h // 2, w // 2
    dx = np.zeros(shape)
    spread = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
    dx[:, :, : h2 * 2, : w2 * 2] = spread
    return dx


def global_avgpool_fwd(x):
    return x.mean(axis=(2, 3)), (x.shape,)


def global_avgpool_bwd(dy, cache):
    (shape,) = cache
    m = shape[2] * shape[3]
    return np.broadcast_to(dy[:, :, None, None], shape) / m


def dropout_fwd(x, rate, rng=None):
    """Inverted dropout; rng=None (or rate 0) means inference: identity."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_bwd(dy, mask):
    if mask is None:
        return dy
    return dy * mask


def softmax_lastaxis(x):
    """Max-subtracted softmax over the last axis."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(dy, p):
    """Backward of softmax_lastaxis given its output p."""
    inner = (dy * p).sum(axis=-1, keepdims=True)
    return p * (dy - inner)


def normalize_rows_fwd(x, eps_error=True):
    """Scale each row to unit L2 norm; zero rows are an error."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot cosine-normalize a zero-norm row")
    xhat = x / norms
    return xhat, (xhat, norms)


def normalize_rows_bwd(dy, cache):
    xhat, norms = cache
    return (dy - xhat * (dy * xhat).sum(axis=-1, keepdims=True)) / norms


def he_conv_init(rng, c_out, c_in):
    w = rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (c_in * 9))
    return w


def uniform_init(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)
