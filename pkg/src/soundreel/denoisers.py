"""Trainable noise predictors for the two toy substrates.

"points2d": an MLP over 2-D points with additive time/condition
injection. "image16": a small conv net over 16x16 grayscale with one
cross-attention block reading the condition vector as a short token
sequence. Both predict the noise added by the forward process;
condition dropout during training learns the unconditioned behaviour
(the null condition is the zero vector).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soundreel import layers
from soundreel.backend import kernels
from soundreel.diffusion import NoiseSchedule
from soundreel.optim import Adam

CHECKPOINT_VERSION = 1

SUBSTRATE_POINTS = "points2d"
SUBSTRATE_IMAGE = "image16"


@dataclass
class DenoiserParams:
    substrate: str
    dims: dict[str, int]
    tensors: dict[str, np.ndarray]
    text_seed: int
    version: int = CHECKPOINT_VERSION

    @property
    def d_cond(self) -> int:
        return self.dims["d_cond"]

    def null_condition(self) -> np.ndarray:
        """The fixed unconditioned embedding."""
        return np.zeros(self.d_cond)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            substrate=self.substrate,
            dims=dict(self.dims),
            tensors={k: v.copy() for k, v in self.tensors.items()},
            text_seed=self.text_seed,
            version=self.version,
        )


@dataclass
class DiffusionTrainConfig:
    steps: int = 3000
    batch_size: int = 256
    lr: float = 1e-3
    cond_dropout: float = 0.15
    seed: int = 0


def time_embedding(t, d_time: int) -> np.ndarray:
    """Sinusoidal features of integer steps; t scalar or (B,)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = d_time // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


# --- 2-D point denoiser -------------------------------------------------------


def init_denoiser_points(
    seed: int, d_cond: int = 64, hidden: int = 128, d_time: int = 32, text_seed: int = 0
) -> DenoiserParams:
    rng = np.random.default_rng(seed)
    u = layers.uniform_init
    t = {
        "w1": u(rng, (2, hidden), 1.0 / np.sqrt(2)),
        "b1": np.zeros(hidden),
        "wt1": u(rng, (d_time, hidden), 1.0 / np.sqrt(d_time)),
        "wc1": u(rng, (d_cond, hidden), 1.0 / np.sqrt(d_cond)),
        "w2": u(rng, (hidden, hidden), 1.0 / np.sqrt(hidden)),
        "b2": np.zeros(hidden),
        "wc2": u(rng, (d_cond, hidden), 1.0 / np.sqrt(d_cond)),
        "w3": u(rng, (hidden, hidden), 1.0 / np.sqrt(hidden)),
        "b3": np.zeros(hidden),
        # small head so the untrained predictor outputs near-zero noise
        "w4": 1e-3 * rng.standard_normal((hidden, 2)),
        "b4": np.zeros(2),
    }
    dims = {"d_cond": d_cond, "hidden": hidden, "d_time": d_time}
    return DenoiserParams(SUBSTRATE_POINTS, dims, t, text_seed)


def _points_fwd_cached(params: DenoiserParams, z, temb, cond):
    t = params.tensors
    pre1 = z @ t["w1"] + t["b1"] + temb @ t["wt1"] + cond @ t["wc1"]
    h1, c1 = layers.gelu_fwd(pre1)
    pre2 = h1 @ t["w2"] + t["b2"] + cond @ t["wc2"]
    h2, c2 = layers.gelu_fwd(pre2)
    pre3 = h2 @ t["w3"] + t["b3"]
    h3, c3 = layers.gelu_fwd(pre3)
    eps = h3 @ t["w4"] + t["b4"]
    return eps, (z, temb, cond, c1, h1, c2, h2, c3, h3)


def _points_bwd(params: DenoiserParams, cache, deps):
    t = params.tensors
    z, temb, cond, c1, h1, c2, h2, c3, h3 = cache
    g = {}
    g["w4"] = h3.T @ deps
    g["b4"] = deps.sum(axis=0)
    dh3 = deps @ t["w4"].T
    dpre3 = layers.gelu_bwd(dh3, c3)
    g["w3"] = h2.T @ dpre3
    g["b3"] = dpre3.sum(axis=0)
    dh2 = dpre3 @ t["w3"].T
    dpre2 = layers.gelu_bwd(dh2, c2)
    g["w2"] = h1.T @ dpre2
    g["b2"] = dpre2.sum(axis=0)
    g["wc2"] = cond.T @ dpre2
    dh1 = dpre2 @ t["w2"].T
    dpre1 = layers.gelu_bwd(dh1, c1)
    g["w1"] = z.T @ dpre1
    g["b1"] = dpre1.sum(axis=0)
    g["wt1"] = temb.T @ dpre1
    g["wc1"] = cond.T @ dpre1
    return g


# --- 16x16 image denoiser -----------------------------------------------------


def init_denoiser_image(
    seed: int,
    d_cond: int = 64,
    channels: int = 16,
    n_tokens: int = 4,
    d_time: int = 32,
    size: int = 16,
    text_seed: int = 0,
) -> DenoiserParams:
    if d_cond % n_tokens != 0:
        raise ValueError("d_cond must split evenly into condition tokens")
    token_dim = d_cond // n_tokens
    d_att = channels
    rng = np.random.default_rng(seed)
    u = layers.uniform_init
    t = {
        "conv1_w": layers.he_conv_init(rng, channels, 1),
        "conv1_b": np.zeros(channels),
        "temb_w": u(rng, (d_time, channels), 1.0 / np.sqrt(d_time)),
        "temb_b": np.zeros(channels),
        "conv2_w": layers.he_conv_init(rng, channels, channels),
        "conv2_b": np.zeros(channels),
        "attn_wq": u(rng, (channels, d_att), 1.0 / np.sqrt(channels)),
        "attn_wk": u(rng, (token_dim, d_att), 1.0 / np.sqrt(token_dim)),
        "attn_wv": u(rng, (token_dim, d_att), 1.0 / np.sqrt(token_dim)),
        "attn_wo": u(rng, (d_att, channels), 1.0 / np.sqrt(d_att)),
        "conv3_w": 1e-3 * rng.standard_normal((1, channels, 3, 3)),
        "conv3_b": np.zeros(1),
    }
    dims = {
        "d_cond": d_cond,
        "channels": channels,
        "n_tokens": n_tokens,
        "token_dim": token_dim,
        "d_att": d_att,
        "d_time": d_time,
        "size": size,
    }
    return DenoiserParams(SUBSTRATE_IMAGE, dims, t, text_seed)


def _image_fwd_cached(params: DenoiserParams, z, temb, cond):
    t = params.tensors
    d = params.dims
    bsz, _, s, _ = z.shape
    ch, da = d["channels"], d["d_att"]
    a0 = kernels().conv2d3x3_fwd(z, t["conv1_w"], t["conv1_b"])
    temb_p = temb @ t["temb_w"] + t["temb_b"]
    a1 = a0 + temb_p[:, :, None, None]
    h1, c1 = layers.gelu_fwd(a1)
    a2 = kernels().conv2d3x3_fwd(h1, t["conv2_w"], t["conv2_b"])
    h2, c2 = layers.gelu_fwd(a2)
    feats = np.ascontiguousarray(h2.transpose(0, 2, 3, 1)).reshape(bsz, s * s, ch)
    tok = cond.reshape(bsz, d["n_tokens"], d["token_dim"])
    q = feats @ t["attn_wq"]
    k = tok @ t["attn_wk"]
    v = tok @ t["attn_wv"]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(da)
    attn = layers.softmax_lastaxis(scores)
    o = attn @ v
    attn_out = o @ t["attn_wo"]
    h3 = h2 + np.ascontiguousarray(attn_out.reshape(bsz, s, s, ch).transpose(0, 3, 1, 2))
    eps = kernels().conv2d3x3_fwd(h3, t["conv3_w"], t["conv3_b"])
    cache = (z, temb, cond, c1, h1, c2, h2, feats, tok, q, k, v, attn, o, h3)
    return eps, cache


def _image_bwd(params: DenoiserParams, cache, deps):
    t = params.tensors
    d = params.dims
    z, temb, cond, c1, h1, c2, h2, feats, tok, q, k, v, attn, o, h3 = cache
    bsz, _, s, _ = z.shape
    ch, da = d["channels"], d["d_att"]
    g = {}
    dh3, g["conv3_w"], g["conv3_b"] = kernels().conv2d3x3_bwd(
        h3, t["conv3_w"], np.ascontiguousarray(deps)
    )
    dh2 = dh3.copy()
    d_attn_out = np.ascontiguousarray(dh3.transpose(0, 2, 3, 1)).reshape(bsz, s * s, ch)
    g["attn_wo"] = np.einsum("bpd,bpc->dc", o, d_attn_out)
    do = d_attn_out @ t["attn_wo"].T
    dattn = do @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ do
    dscores = layers.softmax_bwd(dattn, attn) / np.sqrt(da)
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    g["attn_wq"] = np.einsum("bpc,bpd->cd", feats, dq)
    g["attn_wk"] = np.einsum("bnt,bnd->td", tok, dk)
    g["attn_wv"] = np.einsum("bnt,bnd->td", tok, dv)
    dfeats = dq @ t["attn_wq"].T
    dh2 += np.ascontiguousarray(dfeats.reshape(bsz, s, s, ch).transpose(0, 3, 1, 2))
    dpre2 = layers.gelu_bwd(dh2, c2)
    dh1, g["conv2_w"], g["conv2_b"] = kernels().conv2d3x3_bwd(h1, t["conv2_w"], dpre2)
    dpre1 = layers.gelu_bwd(dh1, c1)
    dtemb_p = dpre1.sum(axis=(2, 3))
    g["temb_w"] = temb.T @ dtemb_p
    g["temb_b"] = dtemb_p.sum(axis=0)
    _, g["conv1_w"], g["conv1_b"] = kernels().conv2d3x3_bwd(z, t["conv1_w"], dpre1)
    return g


# --- shared surface -----------------------------------------------------------


def _prepare_cond(params: DenoiserParams, cond, bsz: int) -> np.ndarray:
    if cond is None:
        cond = params.null_condition()
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (bsz, cond.shape[0]))
    if cond.shape != (bsz, params.d_cond):
        raise ValueError(f"condition shape {cond.shape} incompatible with (B={bsz}, {params.d_cond})")
    return np.ascontiguousarray(cond)


def predict_eps(z_t: np.ndarray, t: int, condition, params: DenoiserParams) -> np.ndarray:
    """Noise estimate for state z_t at step t under a condition vector.

    Accepts a single state or a batch; the condition may be a single
    vector (broadcast), a batch of vectors, or None for the null
    condition.
    """
    z = np.asarray(z_t, dtype=np.float64)
    if params.substrate == SUBSTRATE_POINTS:
        single = z.ndim == 1
        zb = z[None] if single else z
        if zb.ndim != 2 or zb.shape[1] != 2:
            raise ValueError(f"points2d state must be (B, 2), got {z.shape}")
        cond = _prepare_cond(params, condition, zb.shape[0])
        temb = np.broadcast_to(
            time_embedding(t, params.dims["d_time"]), (zb.shape[0], params.dims["d_time"])
        )
        t_ = params.tensors
        eps = kernels().mlp_denoiser_fwd(
            np.ascontiguousarray(zb),
            np.ascontiguousarray(temb),
            cond,
            t_["w1"], t_["b1"], t_["wt1"], t_["wc1"],
            t_["w2"], t_["b2"], t_["wc2"],
            t_["w3"], t_["b3"], t_["w4"], t_["b4"],
        )
        return eps[0] if single else eps
    if params.substrate == SUBSTRATE_IMAGE:
        single = z.ndim == 3
        zb = z[None] if single else z
        s = params.dims["size"]
        if zb.ndim != 4 or zb.shape[1:] != (1, s, s):
            raise ValueError(f"image16 state must be (B, 1, {s}, {s}), got {z.shape}")
        cond = _prepare_cond(params, condition, zb.shape[0])
        temb = np.broadcast_to(
            time_embedding(t, params.dims["d_time"]), (zb.shape[0], params.dims["d_time"])
        )
        eps, _ = _image_fwd_cached(params, np.ascontiguousarray(zb), temb, cond)
        return eps[0] if single else eps
    raise ValueError(f"unknown substrate {params.substrate!r}")


def make_predictor(params: DenoiserParams):
    """Bind params into the (z, t, cond) -> eps callable used by guidance."""

    def predictor(z, t, cond):
        return predict_eps(z, t, cond, params)

    return predictor


def training_forward(params: DenoiserParams, z, temb, cond):
    if params.substrate == SUBSTRATE_POINTS:
        return _points_fwd_cached(params, z, temb, cond)
    return _image_fwd_cached(params, z, temb, cond)


def training_backward(params: DenoiserParams, cache, deps):
    if params.substrate == SUBSTRATE_POINTS:
        return _points_bwd(params, cache, deps)
    return _image_bwd(params, cache, deps)


def train_denoiser(
    x0: np.ndarray,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    params: DenoiserParams,
    config: DiffusionTrainConfig,
    log=None,
) -> tuple[DenoiserParams, list[dict]]:
    """Minimize E||eps - eps_hat||^2 with condition dropout (learns the null path).

    x0 (M, ...) clean data, cond (M, d_cond) per-sample conditions.
    Mutates and returns ``params``; history records the running loss.
    """
    if len(x0) == 0:
        raise ValueError("dataset is empty")
    if not 0.0 <= config.cond_dropout <= 0.5:
        raise ValueError("cond_dropout should be in [0, 0.5]")
    rng = np.random.default_rng([config.seed, 23])
    adam = Adam(list(params.tensors.keys()), config.lr)
    history = []
    running = None
    for step in range(config.steps):
        idx = rng.integers(0, x0.shape[0], size=config.batch_size)
        xb = x0[idx]
        cb = cond[idx].copy()
        drop = rng.random(config.batch_size) < config.cond_dropout
        cb[drop] = 0.0
        t = rng.integers(1, schedule.T + 1, size=config.batch_size)
        eps = rng.standard_normal(xb.shape)
        ab = schedule.alpha_bars[t]
        bshape = (-1,) + (1,) * (xb.ndim - 1)
        z = np.sqrt(ab).reshape(bshape) * xb + np.sqrt(1.0 - ab).reshape(bshape) * eps
        temb = time_embedding(t, params.dims["d_time"])
        eps_hat, cache = training_forward(params, z, temb, cb)
        resid = eps_hat - eps
        # per-sample squared norm, averaged over the batch
        loss = float((resid**2).sum() / config.batch_size)
        grads = training_backward(params, cache, (2.0 / config.batch_size) * resid)
        adam.step(params.tensors, grads)
        running = loss if running is None else 0.98 * running + 0.02 * loss
        if (step + 1) % 100 == 0 or step == config.steps - 1:
            history.append({"step": step + 1, "loss": loss, "running_loss": running})
            if log is not None:
                log(f"step {step + 1:5d}  loss {loss:.4f}  running {running:.4f}")
    return params, history


# --- checkpointing -------------------------------------------------------------


def save_denoiser(params: DenoiserParams, schedule: NoiseSchedule, path: str | Path) -> None:
    meta = {
        "substrate": params.substrate,
        "T": schedule.T,
        "dims": params.dims,
        "text_seed": params.text_seed,
        "version": params.version,
    }
    np.savez(
        path,
        __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        __betas__=schedule.betas,
        **params.tensors,
    )


def load_denoiser(path: str | Path) -> tuple[DenoiserParams, NoiseSchedule]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        tensors = {k: data[k].copy() for k in data.files if not k.startswith("__")}
        params = DenoiserParams(
            substrate=meta["substrate"],
            dims=meta["dims"],
            tensors=tensors,
            text_seed=meta["text_seed"],
            version=meta["version"],
        )
        return params, NoiseSchedule(data["__betas__"].copy())
