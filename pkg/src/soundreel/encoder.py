"""Temporally-aware audio encoder.

Pipeline per clip: mel segments -> shared conv feature extractor ->
LSTM over segments -> softmax temporal attention (weights alpha, pooled
vector o_a) -> mapping head that lifts the pooled embedding into a
token-sequence shape compatible with the text-side conditioner.

Per-frame conditions are c_n = (N * alpha_n)^k * s_n: the LSTM state of
segment n scaled by its (normalized) attention weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soundreel import layers
from soundreel.audio import MelSpectrogram, Waveform, compute_mel_spectrogram, segment_spectrogram
from soundreel.backend import kernels

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderDims:
    """Architecture hyperparameters; defaults are the desk-scale config."""

    n_mels: int = 64
    channels: tuple[int, ...] = (8, 16, 128)
    d_emb: int = 64
    h_proj: int = 32
    l_tokens: int = 8
    d_tok: int = 64
    h_map: int = 128
    dropout: float = 0.2

    @property
    def d_feat(self) -> int:
        return self.channels[-1]


@dataclass
class EncoderParams:
    dims: EncoderDims
    tensors: dict[str, np.ndarray]
    sos_token: np.ndarray
    text_seed: int
    version: int = CHECKPOINT_VERSION

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            dims=self.dims,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            sos_token=self.sos_token.copy(),
            text_seed=self.text_seed,
            version=self.version,
        )

    def map_keys(self) -> list[str]:
        """Parameter names of the mapping head (trained with Adam)."""
        return [k for k in self.tensors if k.startswith("map_")]

    def backbone_keys(self) -> list[str]:
        """Everything except the mapping head (trained with SGD)."""
        return [k for k in self.tensors if not k.startswith("map_")]


# --- small result records ----------------------------------------------------


@dataclass
class TemporalState:
    s: np.ndarray  # LSTM output for segment n, dimension d_emb
    cell: np.ndarray  # cell state alongside it


@dataclass
class AttentionResult:
    alpha: np.ndarray  # (N,), nonnegative, sums to 1
    o_a: np.ndarray  # (d_emb,), sum_n alpha_n * s_n


@dataclass
class MappedCondition:
    tokens: np.ndarray  # (L-1, d_tok), mapping-head output
    sos_token: np.ndarray  # shared start token; concatenating gives length L

    def full_sequence(self) -> np.ndarray:
        return np.concatenate([self.sos_token[None, :], self.tokens], axis=0)


@dataclass
class FrameCondition:
    c: np.ndarray  # (d_emb,)
    n: int
    k: float


def init_encoder_params(
    dims: EncoderDims, seed: int, sos_token: np.ndarray | None = None, text_seed: int = 0
) -> EncoderParams:
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    c_in = 1
    for i, c_out in enumerate(dims.channels):
        # no conv bias: the following instance norm cancels it exactly
        t[f"conv{i}_w"] = layers.he_conv_init(rng, c_out, c_in)
        t[f"in{i}_g"] = np.ones(c_out)
        t[f"in{i}_b"] = np.zeros(c_out)
        c_in = c_out
    h = dims.d_emb
    bound = 1.0 / np.sqrt(h)
    t["lstm_wx"] = layers.uniform_init(rng, (dims.d_feat, 4 * h), bound)
    t["lstm_wh"] = layers.uniform_init(rng, (h, 4 * h), bound)
    b = np.zeros(4 * h)
    b[h : 2 * h] = 1.0  # forget-gate bias
    t["lstm_b"] = b
    t["proj_w1"] = layers.uniform_init(rng, (h, dims.h_proj), 1.0 / np.sqrt(h))
    t["proj_b1"] = np.zeros(dims.h_proj)
    t["proj_w2"] = layers.uniform_init(rng, (dims.h_proj, 1), 1.0 / np.sqrt(dims.h_proj))
    t["proj_b2"] = np.zeros(1)
    n_out = (dims.l_tokens - 1) * dims.d_tok
    t["map_w1"] = layers.uniform_init(rng, (h, dims.h_map), 1.0 / np.sqrt(h))
    t["map_b1"] = np.zeros(dims.h_map)
    t["map_w2"] = layers.uniform_init(rng, (dims.h_map, n_out), 1.0 / np.sqrt(dims.h_map))
    t["map_b2"] = np.zeros(n_out)
    if sos_token is None:
        sos_token = np.zeros(dims.d_tok)
    return EncoderParams(dims=dims, tensors=t, sos_token=np.asarray(sos_token, float), text_seed=text_seed)


# --- forward/backward --------------------------------------------------------


def conv_stack_fwd(params: EncoderParams, x: np.ndarray):
    """Shared per-segment feature extractor. x (B,1,H,W) -> (B, d_feat)."""
    t = params.tensors
    blocks = []
    h = x
    for i, c_out in enumerate(params.dims.channels):
        hc, c_conv = layers.conv3x3_fwd(h, t[f"conv{i}_w"], np.zeros(c_out))
        hn, c_norm = layers.instance_norm_fwd(hc, t[f"in{i}_g"], t[f"in{i}_b"])
        hg, c_gelu = layers.gelu_fwd(hn)
        if hg.shape[2] >= 2 and hg.shape[3] >= 2:
            hp, c_pool = layers.avgpool2_fwd(hg)
        else:
            hp, c_pool = hg, None
        blocks.append((c_conv, c_norm, c_gelu, c_pool))
        h = hp
    feats, c_gap = layers.global_avgpool_fwd(h)
    return feats, (blocks, c_gap)


def conv_stack_bwd(params: EncoderParams, cache, dfeats, grads: dict):
    blocks, c_gap = cache
    dh = layers.global_avgpool_bwd(dfeats, c_gap)
    for i in range(len(blocks) - 1, -1, -1):
        c_conv, c_norm, c_gelu, c_pool = blocks[i]
        if c_pool is not None:
            dh = layers.avgpool2_bwd(dh, c_pool)
        dh = layers.gelu_bwd(dh, c_gelu)
        dh, dgamma, dbeta = layers.instance_norm_bwd(dh, c_norm)
        dh, dw, _ = layers.conv3x3_bwd(dh, c_conv)
        grads[f"in{i}_g"] += dgamma
        grads[f"in{i}_b"] += dbeta
        grads[f"conv{i}_w"] += dw
    return dh


def attention_fwd(params: EncoderParams, s_seq: np.ndarray):
    """Softmax attention over segment states. s_seq (B,N,H) -> alpha (B,N), o (B,H)."""
    t = params.tensors
    pre1, c_l1 = layers.linear_fwd(s_seq, t["proj_w1"], t["proj_b1"])
    th, c_tanh = layers.tanh_fwd(pre1)
    logits3, c_l2 = layers.linear_fwd(th, t["proj_w2"], t["proj_b2"])
    logits = logits3[..., 0]
    alpha = layers.softmax_lastaxis(logits)
    o_a = np.einsum("bn,bnh->bh", alpha, s_seq)
    return alpha, o_a, (s_seq, alpha, c_l1, c_tanh, c_l2)


def attention_bwd(params: EncoderParams, cache, d_oa, grads: dict):
    """Returns d(s_seq); accumulates projection-head grads."""
    s_seq, alpha, c_l1, c_tanh, c_l2 = cache
    d_alpha = np.einsum("bh,bnh->bn", d_oa, s_seq)
    ds = alpha[..., None] * d_oa[:, None, :]
    dlogits = layers.softmax_bwd(d_alpha, alpha)
    dth, dw2, db2 = layers.linear_bwd(dlogits[..., None], c_l2)
    dpre1 = layers.tanh_bwd(dth, c_tanh)
    ds2, dw1, db1 = layers.linear_bwd(dpre1, c_l1)
    grads["proj_w1"] += dw1
    grads["proj_b1"] += db1
    grads["proj_w2"] += dw2
    grads["proj_b2"] += db2
    return ds + ds2


def map_fwd(params: EncoderParams, o_a: np.ndarray, train: bool = False, rng=None):
    """Mapping head: Linear -> Linear -> Dropout -> GELU, reshaped to tokens."""
    t = params.tensors
    d = params.dims
    a1, c_l1 = layers.linear_fwd(o_a, t["map_w1"], t["map_b1"])
    a2, c_l2 = layers.linear_fwd(a1, t["map_w2"], t["map_b2"])
    dz, mask = layers.dropout_fwd(a2, d.dropout if train else 0.0, rng if train else None)
    y, c_gelu = layers.gelu_fwd(dz)
    tokens = y.reshape(*o_a.shape[:-1], d.l_tokens - 1, d.d_tok)
    return tokens, (c_l1, c_l2, mask, c_gelu, y.shape)


def map_bwd(params: EncoderParams, cache, d_tokens, grads: dict):
    c_l1, c_l2, mask, c_gelu, flat_shape = cache
    dy = d_tokens.reshape(flat_shape)
    dz = layers.gelu_bwd(dy, c_gelu)
    dz = layers.dropout_bwd(dz, mask)
    da1, dw2, db2 = layers.linear_bwd(dz, c_l2)
    d_oa, dw1, db1 = layers.linear_bwd(da1, c_l1)
    grads["map_w1"] += dw1
    grads["map_b1"] += db1
    grads["map_w2"] += dw2
    grads["map_b2"] += db2
    return d_oa


@dataclass
class EncoderOutputs:
    s_seq: np.ndarray  # (B, N, d_emb)
    alpha: np.ndarray | None  # (B, N)
    o_a: np.ndarray | None  # (B, d_emb)
    mapped: np.ndarray | None  # (B, L-1, d_tok)


def encoder_forward(
    params: EncoderParams,
    segments: np.ndarray,
    with_heads: bool = True,
    train: bool = False,
    dropout_rng=None,
):
    """Full forward over a batch of segment stacks. segments (B,N,d,w)."""
    bsz, n_seg, d, w = segments.shape
    x = np.ascontiguousarray(segments.reshape(bsz * n_seg, 1, d, w))
    feats, c_conv = conv_stack_fwd(params, x)
    xs = np.ascontiguousarray(feats.reshape(bsz, n_seg, -1).transpose(1, 0, 2))
    t = params.tensors
    hs, cs, gates = kernels().lstm_seq_fwd(xs, t["lstm_wx"], t["lstm_wh"], t["lstm_b"])
    s_seq = np.ascontiguousarray(hs.transpose(1, 0, 2))
    alpha = o_a = mapped = None
    c_attn = c_map = None
    if with_heads:
        alpha, o_a, c_attn = attention_fwd(params, s_seq)
        mapped, c_map = map_fwd(params, o_a, train=train, rng=dropout_rng)
    outs = EncoderOutputs(s_seq=s_seq, alpha=alpha, o_a=o_a, mapped=mapped)
    cache = (x, c_conv, xs, hs, cs, gates, c_attn, c_map, segments.shape)
    return outs, cache


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def encoder_backward(
    params: EncoderParams,
    cache,
    d_s_seq: np.ndarray | None = None,
    d_oa: np.ndarray | None = None,
    d_mapped: np.ndarray | None = None,
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients for any mix of head gradients."""
    x, c_conv, xs, hs, cs, gates, c_attn, c_map, seg_shape = cache
    bsz, n_seg = seg_shape[0], seg_shape[1]
    if grads is None:
        grads = zero_grads(params)
    ds_total = np.zeros_like(np.ascontiguousarray(hs.transpose(1, 0, 2)))
    if d_s_seq is not None:
        ds_total += d_s_seq
    doa_total = np.zeros((bsz, params.dims.d_emb))
    if d_oa is not None:
        doa_total += d_oa
    if d_mapped is not None:
        doa_total += map_bwd(params, c_map, d_mapped, grads)
    if np.any(doa_total):
        ds_total += attention_bwd(params, c_attn, doa_total, grads)
    dhs = np.ascontiguousarray(ds_total.transpose(1, 0, 2))
    t = params.tensors
    dxs, dwx, dwh, dlb = kernels().lstm_seq_bwd(
        xs, t["lstm_wx"], t["lstm_wh"], hs, cs, gates, dhs
    )
    grads["lstm_wx"] += dwx
    grads["lstm_wh"] += dwh
    grads["lstm_b"] += dlb
    dfeats = np.ascontiguousarray(dxs.transpose(1, 0, 2)).reshape(bsz * n_seg, -1)
    conv_stack_bwd(params, c_conv, dfeats, grads)
    return grads


# --- public single-clip operations -------------------------------------------


def extract_segment_features(segment: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Shared feature extractor applied to one segment (d, w) -> (d_feat,)."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 2:
        raise ValueError(f"segment must be 2-D, got shape {seg.shape}")
    feats, _ = conv_stack_fwd(params, seg[None, None])
    return feats[0]


def encode_temporal(features: list[np.ndarray], params: EncoderParams) -> list[TemporalState]:
    """LSTM over per-segment features from a zero initial state."""
    if len(features) == 0:
        raise ValueError("need at least one segment feature")
    xs = np.ascontiguousarray(np.stack(features, axis=0)[:, None, :])
    t = params.tensors
    hs, cs, _ = kernels().lstm_seq_fwd(xs, t["lstm_wx"], t["lstm_wh"], t["lstm_b"])
    return [TemporalState(s=hs[n, 0].copy(), cell=cs[n, 0].copy()) for n in range(len(features))]


def temporal_attention(states: list[TemporalState], params: EncoderParams) -> AttentionResult:
    if len(states) == 0:
        raise ValueError("need at least one state")
    s_seq = np.stack([st.s for st in states], axis=0)[None]
    alpha, o_a, _ = attention_fwd(params, s_seq)
    return AttentionResult(alpha=alpha[0], o_a=o_a[0])


def map_to_condition_space(o_a: np.ndarray, params: EncoderParams) -> MappedCondition:
    tokens, _ = map_fwd(params, np.asarray(o_a, float)[None], train=False)
    return MappedCondition(tokens=tokens[0], sos_token=params.sos_token.copy())


def build_frame_conditions(
    states: list[TemporalState], alpha: np.ndarray, k: float
) -> list[FrameCondition]:
    """c_n = (N * alpha_n)^k * s_n. k=0 reduces to the raw states."""
    n_seg = len(states)
    if len(alpha) != n_seg:
        raise ValueError("states and alpha must have the same length")
    out = []
    for n, st in enumerate(states):
        scale = (n_seg * alpha[n]) ** k
        out.append(FrameCondition(c=scale * st.s, n=n, k=k))
    return out


def encode_audio(
    wave: Waveform,
    n_segments: int,
    params: EncoderParams,
    n_fft: int = 512,
    hop: int = 256,
    k: float = 1.0,
) -> tuple[AttentionResult, list[FrameCondition], MappedCondition]:
    """Waveform to everything the frame generator needs."""
    mel = compute_mel_spectrogram(wave, n_mels=params.dims.n_mels, n_fft=n_fft, hop=hop)
    return encode_segments(segment_spectrogram(mel, n_segments).stacked(), params, k=k)


def encode_segments(
    segments: np.ndarray, params: EncoderParams, k: float = 1.0
) -> tuple[AttentionResult, list[FrameCondition], MappedCondition]:
    outs, cache = encoder_forward(params, segments[None], with_heads=True, train=False)
    cs = cache[4]  # (N, 1, d_emb) cell states
    states = [
        TemporalState(s=outs.s_seq[0, n].copy(), cell=cs[n, 0].copy())
        for n in range(segments.shape[0])
    ]
    attn = AttentionResult(alpha=outs.alpha[0], o_a=outs.o_a[0])
    conditions = build_frame_conditions(states, attn.alpha, k)
    mapped = MappedCondition(tokens=outs.mapped[0], sos_token=params.sos_token.copy())
    return attn, conditions, mapped


# --- checkpointing ------------------------------------------------------------


def save_encoder(
    params: EncoderParams, path: str | Path, n_segments: int | None = None, k: float | None = None
) -> None:
    """Named-tensor container with JSON metadata.

    n_segments and k are generation-time settings recorded for
    provenance when the caller knows them.
    """
    meta = {
        "D_feat": params.dims.d_feat,
        "D_emb": params.dims.d_emb,
        "N": n_segments,
        "L": params.dims.l_tokens,
        "k": k,
        "version": params.version,
        "text_seed": params.text_seed,
        "dims": {
            "n_mels": params.dims.n_mels,
            "channels": list(params.dims.channels),
            "d_emb": params.dims.d_emb,
            "h_proj": params.dims.h_proj,
            "l_tokens": params.dims.l_tokens,
            "d_tok": params.dims.d_tok,
            "h_map": params.dims.h_map,
            "dropout": params.dims.dropout,
        },
    }
    np.savez(
        path,
        __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        sos_token=params.sos_token,
        **params.tensors,
    )


def load_encoder(path: str | Path) -> EncoderParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        d = meta["dims"]
        dims = EncoderDims(
            n_mels=d["n_mels"],
            channels=tuple(d["channels"]),
            d_emb=d["d_emb"],
            h_proj=d["h_proj"],
            l_tokens=d["l_tokens"],
            d_tok=d["d_tok"],
            h_map=d["h_map"],
            dropout=d["dropout"],
        )
        tensors = {
            k: data[k].copy() for k in data.files if k not in ("__meta__", "sos_token")
        }
        return EncoderParams(
            dims=dims,
            tensors=tensors,
            sos_token=data["sos_token"].copy(),
            text_seed=meta["text_seed"],
            version=meta["version"],
        )
