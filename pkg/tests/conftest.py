import numpy as np
import pytest

from soundreel.alignment import TrainConfig, train_encoder
from soundreel.corpus import synthesize_corpus
from soundreel.denoisers import DiffusionTrainConfig, init_denoiser_points, train_denoiser
from soundreel.diffusion import NoiseSchedule
from soundreel.encoder import EncoderDims
from soundreel.text import encode_text_label
from soundreel.toy_data import sample_mixture

TEXT_SEED = 0
N_CLASSES = 8
CLIPS_PER_CLASS = 16


# tiny encoder geometry used anywhere the full-size model would be waste
TINY_DIMS = EncoderDims(
    n_mels=8, channels=(2, 3, 4), d_emb=8, h_proj=4, l_tokens=3, d_tok=8, h_map=6, dropout=0.0
)


@pytest.fixture(scope="session")
def ref_corpus():
    return synthesize_corpus(
        N_CLASSES, CLIPS_PER_CLASS, duration_s=2.0, sample_rate=16000, rng_seed=0
    )


@pytest.fixture(scope="session")
def trained_encoder(ref_corpus):
    """Reference encoder run: default desk-scale config, seed 0."""
    import time

    t0 = time.time()
    params, history = train_encoder(ref_corpus, TrainConfig(seed=0), text_seed=TEXT_SEED)
    return params, history, time.time() - t0


@pytest.fixture(scope="session")
def class_embeddings():
    return np.stack(
        [encode_text_label(c, TEXT_SEED).pooled for c in range(N_CLASSES)]
    )


@pytest.fixture(scope="session")
def trained_denoiser(class_embeddings):
    """Reference 2-D denoiser: 8-mode mixture, T=100, conditioned on class embeddings."""
    import time

    t0 = time.time()
    schedule = NoiseSchedule.linear(100)
    rng = np.random.default_rng(42)
    x0, labels = sample_mixture(20000, rng, n_modes=N_CLASSES)
    params = init_denoiser_points(seed=5, text_seed=TEXT_SEED)
    params, _ = train_denoiser(
        x0, class_embeddings[labels], schedule, params, DiffusionTrainConfig(seed=0)
    )
    return params, schedule, time.time() - t0


def report(criterion: int, message: str) -> None:
    print(f"[PASS] criterion {criterion:2d}: {message}")
