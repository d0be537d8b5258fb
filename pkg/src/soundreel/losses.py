"""Contrastive and regression losses for encoder training.

The InfoNCE term is computed as log sum_j exp((S_ij - S_ii)) per row,
where S is the cosine-similarity matrix scaled by 1/tau. Subtracting
the diagonal first keeps the exponent bounded by 2/tau (cosines live in
[-1, 1]), so no separate max-shift is needed, and the identical-rows
case yields log(B) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from soundreel.layers import normalize_rows_bwd, normalize_rows_fwd


@dataclass
class LossBreakdown:
    l_at: float
    l_aa: float
    l_semantic: float
    l_temporal: float
    l_cond: float
    total: float

    @staticmethod
    def combine(l_at, l_aa, lambda_s, l_temporal, l_cond) -> "LossBreakdown":
        l_semantic = l_at + lambda_s * l_aa
        return LossBreakdown(
            l_at=l_at,
            l_aa=l_aa,
            l_semantic=l_semantic,
            l_temporal=l_temporal,
            l_cond=l_cond,
            total=l_semantic + l_temporal + l_cond,
        )


def info_nce_fwd(a: np.ndarray, b: np.ndarray, tau: float):
    """Mean over rows of -log softmax(cos(a_i, b_j)/tau) at the matched pair."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"expected matching (B, D) batches, got {a.shape} and {b.shape}")
    ahat, ca = normalize_rows_fwd(a)
    bhat, cb = normalize_rows_fwd(b)
    s = (ahat @ bhat.T) / tau
    delta = s - np.diag(s)[:, None]
    ex = np.exp(delta)
    z = ex.sum(axis=1)
    loss = float(np.mean(np.log(z)))
    return loss, (ahat, bhat, ca, cb, ex, z, tau)


def info_nce_bwd(cache, dloss: float = 1.0):
    ahat, bhat, ca, cb, ex, z, tau = cache
    bsz = ahat.shape[0]
    p = ex / z[:, None]
    ds = (p - np.eye(bsz)) * (dloss / bsz)
    dahat = (ds @ bhat) / tau
    dbhat = (ds.T @ ahat) / tau
    return normalize_rows_bwd(dahat, ca), normalize_rows_bwd(dbhat, cb)


def info_nce(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    loss, _ = info_nce_fwd(a, b, tau)
    return loss


def symmetric_nce_fwd(a: np.ndarray, b: np.ndarray, tau: float):
    """l_sim(a, b) + l_sim(b, a) with gradients for both arguments."""
    l_ab, c_ab = info_nce_fwd(a, b, tau)
    l_ba, c_ba = info_nce_fwd(b, a, tau)
    return l_ab + l_ba, (c_ab, c_ba)


def symmetric_nce_bwd(cache, dloss: float = 1.0):
    c_ab, c_ba = cache
    da1, db1 = info_nce_bwd(c_ab, dloss)
    db2, da2 = info_nce_bwd(c_ba, dloss)
    return da1 + da2, db1 + db2


def semantic_loss_fwd(
    audio_final: np.ndarray,
    audio_aug_final: np.ndarray,
    text_pooled: np.ndarray,
    tau: float,
    lambda_s: float,
):
    """Returns ((l_at, l_aa, l_semantic), cache)."""
    l_at, c_at = symmetric_nce_fwd(audio_final, text_pooled, tau)
    l_aa, c_aa = symmetric_nce_fwd(audio_final, audio_aug_final, tau)
    return (l_at, l_aa, l_at + lambda_s * l_aa), (c_at, c_aa, lambda_s)


def semantic_loss_bwd(cache, dloss: float = 1.0):
    """Gradients w.r.t. (audio_final, audio_aug_final); text is frozen."""
    c_at, c_aa, lambda_s = cache
    d_a_at, _ = symmetric_nce_bwd(c_at, dloss)
    d_a_aa, d_aug = symmetric_nce_bwd(c_aa, dloss * lambda_s)
    return d_a_at + d_a_aa, d_aug


def temporal_loss_fwd(o_a: np.ndarray, text_pooled: np.ndarray, tau: float):
    return symmetric_nce_fwd(o_a, text_pooled, tau)


def temporal_loss_bwd(cache, dloss: float = 1.0):
    d_oa, _ = symmetric_nce_bwd(cache, dloss)
    return d_oa


def cond_loss_fwd(mapped: np.ndarray, text_tokens: np.ndarray):
    """MSE between mapped audio tokens and text tokens, start token excluded.

    mapped (B, L-1, D); text_tokens (B, L, D) with the start token at
    index 0 (ignored here).
    """
    if mapped.shape[1] != text_tokens.shape[1] - 1:
        raise ValueError(
            f"token length mismatch: mapped has {mapped.shape[1]}, "
            f"text has {text_tokens.shape[1]} (expected mapped + 1)"
        )
    target = text_tokens[:, 1:, :]
    diff = mapped - target
    loss = float(np.mean(diff * diff))
    return loss, (diff,)


def cond_loss_bwd(cache, dloss: float = 1.0):
    (diff,) = cache
    return (2.0 * dloss / diff.size) * diff
