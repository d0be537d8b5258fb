"""Deterministic stand-in for a frozen text encoder.

Class labels map to fixed embeddings: pooled vectors are rows of a
seeded random orthogonal matrix (exactly unit-norm, mutually
orthogonal), token sequences are seeded Gaussian draws passed through
GELU so they live in the range the mapping head can actually produce.
Position 0 is a start token shared by every class; the last position
plays the end-of-sequence role.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_POOLED_STREAM = 1
_SOS_STREAM = 2
_EOS_STREAM = 3
_CONTENT_STREAM = 4


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


@dataclass
class TextEmbedding:
    pooled: np.ndarray  # (d_emb,), unit norm
    tokens: np.ndarray  # (L, d_tok); tokens[0] is the shared start token


def _orthogonal_basis(seed: int, d_emb: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _POOLED_STREAM])
    q, r = np.linalg.qr(rng.standard_normal((d_emb, d_emb)))
    # fix signs so the basis is unique given the seed
    return q * np.sign(np.diag(r))


def sos_token(seed: int, d_tok: int = 64) -> np.ndarray:
    rng = np.random.default_rng([seed, _SOS_STREAM])
    return _gelu(rng.standard_normal(d_tok))


def encode_text_label(
    class_label: int, seed: int, d_emb: int = 64, l_tokens: int = 8, d_tok: int = 64
) -> TextEmbedding:
    """Fixed embedding for a class label; identical on every call."""
    if class_label < 0 or class_label >= d_emb:
        raise ValueError(f"class_label {class_label} out of range for d_emb={d_emb}")
    pooled = _orthogonal_basis(seed, d_emb)[class_label].copy()
    tokens = np.empty((l_tokens, d_tok))
    tokens[0] = sos_token(seed, d_tok)
    eos_rng = np.random.default_rng([seed, _EOS_STREAM])
    tokens[-1] = _gelu(eos_rng.standard_normal(d_tok))
    content_rng = np.random.default_rng([seed, _CONTENT_STREAM, class_label])
    tokens[1:-1] = _gelu(content_rng.standard_normal((l_tokens - 2, d_tok)))
    return TextEmbedding(pooled=pooled, tokens=tokens)


def text_batch(
    labels, seed: int, d_emb: int = 64, l_tokens: int = 8, d_tok: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (pooled, tokens) for a sequence of labels."""
    embs = [encode_text_label(int(l), seed, d_emb, l_tokens, d_tok) for l in labels]
    return np.stack([e.pooled for e in embs]), np.stack([e.tokens for e in embs])
