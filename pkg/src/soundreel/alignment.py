"""Encoder training: contrastive alignment to the text-side embedding space.

The mapping head is updated with Adam, everything else with momentum
SGD (weight decay on the SGD group only) — the two optimizers run on
disjoint key sets of the same parameter dict.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soundreel import losses, text
from soundreel.audio import AugmentPolicy, Waveform, compute_mel_spectrogram, segment_spectrogram, spec_augment
from soundreel.encoder import (
    EncoderDims,
    EncoderParams,
    encoder_backward,
    encoder_forward,
    init_encoder_params,
)
from soundreel.optim import SGD, Adam

# paper-scale values kept for reference: batch 160, 24 epochs (4-GPU run).
# Desk-scale defaults below train in minutes on CPU.


@dataclass
class TrainConfig:
    tau: float = 0.07
    lambda_s: float = 0.6
    lr_sgd: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    epochs: int = 30
    lr_adam: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for the contrastive losses")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class EpochStats:
    epoch: int
    losses: losses.LossBreakdown
    top1: float


def precompute_segments(
    clips: list[Waveform], n_mels: int, n_segments: int, n_fft: int, hop: int
):
    """Mels, stacked segment tensors (M, N, d, w'), and labels for a corpus."""
    mels = [compute_mel_spectrogram(w, n_mels=n_mels, n_fft=n_fft, hop=hop) for w in clips]
    segs = np.stack([segment_spectrogram(m, n_segments).stacked() for m in mels])
    labels = np.array([w.class_label for w in clips], dtype=int)
    return mels, segs, labels


def batch_loss_and_grads(
    params: EncoderParams,
    seg_batch: np.ndarray,
    seg_aug_batch: np.ndarray,
    text_pooled: np.ndarray,
    text_tokens: np.ndarray,
    tau: float,
    lambda_s: float,
    dropout_rng=None,
    want_grads: bool = True,
):
    """Total loss (all five terms) and its parameter gradients for one batch."""
    train = dropout_rng is not None
    outs, cache = encoder_forward(
        params, seg_batch, with_heads=True, train=train, dropout_rng=dropout_rng
    )
    outs_aug, cache_aug = encoder_forward(params, seg_aug_batch, with_heads=False)
    s_n = outs.s_seq[:, -1, :]
    s_n_aug = outs_aug.s_seq[:, -1, :]
    (l_at, l_aa, l_sem), c_sem = losses.semantic_loss_fwd(
        s_n, s_n_aug, text_pooled, tau, lambda_s
    )
    l_temp, c_temp = losses.temporal_loss_fwd(outs.o_a, text_pooled, tau)
    l_cond, c_cond = losses.cond_loss_fwd(outs.mapped, text_tokens)
    breakdown = losses.LossBreakdown.combine(l_at, l_aa, lambda_s, l_temp, l_cond)
    if not want_grads:
        return breakdown, None
    d_sn, d_sn_aug = losses.semantic_loss_bwd(c_sem)
    d_oa = losses.temporal_loss_bwd(c_temp)
    d_mapped = losses.cond_loss_bwd(c_cond)
    d_s_seq = np.zeros_like(outs.s_seq)
    d_s_seq[:, -1, :] = d_sn
    grads = encoder_backward(params, cache, d_s_seq=d_s_seq, d_oa=d_oa, d_mapped=d_mapped)
    d_s_seq_aug = np.zeros_like(outs_aug.s_seq)
    d_s_seq_aug[:, -1, :] = d_sn_aug
    encoder_backward(params, cache_aug, d_s_seq=d_s_seq_aug, grads=grads)
    return breakdown, grads


def embed_clips(
    params: EncoderParams,
    segs: np.ndarray,
    batch_size: int = 64,
):
    """Inference embeddings for stacked segments (M,N,d,w'). Returns (o_a, alpha, s_seq)."""
    o_list, a_list, s_list = [], [], []
    for start in range(0, segs.shape[0], batch_size):
        outs, _ = encoder_forward(params, segs[start : start + batch_size], with_heads=True)
        o_list.append(outs.o_a)
        a_list.append(outs.alpha)
        s_list.append(outs.s_seq)
    return np.concatenate(o_list), np.concatenate(a_list), np.concatenate(s_list)


def retrieval_metrics(
    params: EncoderParams, segs: np.ndarray, labels: np.ndarray
) -> dict[str, float]:
    """Audio->text retrieval over the class embeddings of the joint space."""
    n_classes = int(labels.max()) + 1
    pooled = np.stack(
        [
            text.encode_text_label(c, params.text_seed, d_emb=params.dims.d_emb).pooled
            for c in range(n_classes)
        ]
    )
    o_a, _, _ = embed_clips(params, segs)
    o_hat = o_a / np.linalg.norm(o_a, axis=1, keepdims=True)
    cos = o_hat @ pooled.T  # (M, n_classes)
    pred = cos.argmax(axis=1)
    matched = cos[np.arange(len(labels)), labels]
    if n_classes > 1:
        mism = float(((cos.sum(axis=1) - matched) / (n_classes - 1)).mean())
    else:
        mism = 0.0
    return {
        "top1": float(np.mean(pred == labels)),
        "mean_cosine_matched": float(matched.mean()),
        "mean_cosine_mismatched": mism,
    }


def evaluate_retrieval(
    params: EncoderParams,
    clips: list[Waveform],
    n_segments: int = 5,
    n_fft: int = 512,
    hop: int = 256,
) -> dict[str, float]:
    _, segs, labels = precompute_segments(clips, params.dims.n_mels, n_segments, n_fft, hop)
    return retrieval_metrics(params, segs, labels)


def train_encoder(
    clips: list[Waveform],
    config: TrainConfig,
    dims: EncoderDims = EncoderDims(),
    n_segments: int = 5,
    n_fft: int = 512,
    hop: int = 256,
    augment: AugmentPolicy = AugmentPolicy(),
    text_seed: int = 0,
    log=None,
) -> tuple[EncoderParams, list[EpochStats]]:
    """Train the audio encoder on a labeled corpus. Deterministic per seed."""
    config.validate()
    labels_present = {w.class_label for w in clips}
    if len(clips) == 0 or None in labels_present:
        raise ValueError("corpus must be nonempty and fully labeled")
    if len(labels_present) < 2:
        raise ValueError("corpus must contain at least 2 classes")

    mels, segs, labels = precompute_segments(clips, dims.n_mels, n_segments, n_fft, hop)
    sos = text.sos_token(text_seed, dims.d_tok)
    params = init_encoder_params(dims, config.seed, sos_token=sos, text_seed=text_seed)
    n_classes = int(labels.max()) + 1
    pooled_all, tokens_all = text.text_batch(
        range(n_classes), text_seed, d_emb=dims.d_emb, l_tokens=dims.l_tokens, d_tok=dims.d_tok
    )

    sgd = SGD(params.backbone_keys(), config.lr_sgd, config.momentum, config.weight_decay)
    adam = Adam(params.map_keys(), config.lr_adam)
    shuffle_rng = np.random.default_rng([config.seed, 11])
    dropout_rng = np.random.default_rng([config.seed, 13])

    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(len(clips))
        sums = np.zeros(6)
        n_batches = 0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            seg_batch = segs[idx]
            aug_stack = []
            for i in idx:
                aug_mel = spec_augment(mels[i], augment, rng_seed=[config.seed, 17, epoch, int(i)])
                aug_stack.append(segment_spectrogram(aug_mel, n_segments).stacked())
            seg_aug_batch = np.stack(aug_stack)
            breakdown, grads = batch_loss_and_grads(
                params,
                seg_batch,
                seg_aug_batch,
                pooled_all[labels[idx]],
                tokens_all[labels[idx]],
                config.tau,
                config.lambda_s,
                dropout_rng=dropout_rng,
            )
            sgd.step(params.tensors, grads)
            adam.step(params.tensors, grads)
            sums += np.array(
                [
                    breakdown.l_at,
                    breakdown.l_aa,
                    breakdown.l_semantic,
                    breakdown.l_temporal,
                    breakdown.l_cond,
                    breakdown.total,
                ]
            )
            n_batches += 1
        means = sums / max(1, n_batches)
        top1 = retrieval_metrics(params, segs, labels)["top1"]
        stats = EpochStats(
            epoch=epoch,
            losses=losses.LossBreakdown(*means),
            top1=top1,
        )
        history.append(stats)
        if log is not None:
            log(
                f"epoch {epoch:3d}  total {means[5]:.4f}  semantic {means[2]:.4f}  "
                f"temporal {means[3]:.4f}  cond {means[4]:.4f}  top1 {top1:.3f}"
            )
    return params, history


def write_history(history: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_at", "l_aa", "l_semantic", "l_temporal", "l_cond", "total", "top1"])
        for st in history:
            lb = st.losses
            writer.writerow(
                [st.epoch, lb.l_at, lb.l_aa, lb.l_semantic, lb.l_temporal, lb.l_cond, lb.total, st.top1]
            )


def export_embeddings(
    params: EncoderParams,
    clips: list[Waveform],
    path: str | Path,
    n_segments: int = 5,
    n_fft: int = 512,
    hop: int = 256,
) -> None:
    """JSON-lines dump: one record per clip with alpha, o_a, and all s_n."""
    _, segs, _ = precompute_segments(clips, params.dims.n_mels, n_segments, n_fft, hop)
    o_a, alpha, s_seq = embed_clips(params, segs)
    with open(path, "w") as fh:
        for i in range(len(clips)):
            rec = {
                "clip_id": i,
                "alpha": alpha[i].tolist(),
                "o_a": o_a[i].tolist(),
                "s_n": s_seq[i].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")
