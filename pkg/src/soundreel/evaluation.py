"""Metrics for a trained run: retrieval, mode steering, and the
fixed-vs-random initial-noise consistency ablation. Writes metrics.json
(validated against the shipped schema) plus plot images.
"""

from __future__ import annotations

import importlib.resources
import json
from pathlib import Path

import numpy as np

from soundreel import alignment, text
from soundreel.config import RunConfig
from soundreel.denoisers import SUBSTRATE_POINTS, make_predictor
from soundreel.diffusion import make_step_noises, sample
from soundreel.encoder import init_encoder_params
from soundreel.guidance import GuidanceConfig, make_guided_fn
from soundreel.toy_data import nearest_mode
from soundreel.video import draw_video_noise, frame_consistency_report

STEERING_SIGMAS = (0.0, 2.5, 8.0)


def load_metrics_schema() -> dict:
    ref = importlib.resources.files("soundreel") / "schemas" / "eval_metrics.schema.json"
    return json.loads(ref.read_text())


def steering_curve(
    denoiser_params,
    schedule,
    guidance: GuidanceConfig,
    prompt_c: np.ndarray,
    audio_c: np.ndarray,
    audio_label: int,
    n_samples: int = 1000,
    seed: int = 0,
    sigmas=STEERING_SIGMAS,
) -> list[float]:
    """Fraction of samples landing in the audio-conditioned mode per sigma_c."""
    pred = make_predictor(denoiser_params)
    null = denoiser_params.null_condition()
    rng = np.random.default_rng([seed, 71])
    z_T = rng.standard_normal((n_samples, 2))
    noises = make_step_noises(rng, schedule.T, (n_samples, 2))
    fractions = []
    for sc in sigmas:
        cfg_s = GuidanceConfig(**{**guidance.to_dict(), "sigma_c": float(sc)})
        fn = make_guided_fn(pred, prompt_c, audio_c, null, cfg_s, batched=True)
        xs = sample(z_T, fn, schedule, noises=noises)
        modes = nearest_mode(xs)
        fractions.append(float((modes == audio_label).mean()))
    return fractions


def consistency_ablation(
    conditions: list[np.ndarray],
    prompt_c: np.ndarray,
    denoiser_params,
    schedule,
    guidance: GuidanceConfig,
    seed: int = 0,
) -> dict:
    """Render the same conditions from one shared z_T and from per-frame z_T."""
    pred = make_predictor(denoiser_params)
    null = denoiser_params.null_condition()
    from soundreel.video import _state_shape

    state_shape = _state_shape(denoiser_params)
    z_T, noises = draw_video_noise(seed, state_shape, schedule.T)
    fixed = [
        sample(z_T, make_guided_fn(pred, prompt_c, c, null, guidance), schedule, noises=noises)
        for c in conditions
    ]
    rng = np.random.default_rng([seed, 77])
    randomized = []
    for c in conditions:
        z_i = rng.standard_normal(state_shape)
        noises_i = make_step_noises(rng, schedule.T, state_shape)
        randomized.append(
            sample(z_i, make_guided_fn(pred, prompt_c, c, null, guidance), schedule, noises=noises_i)
        )
    return {
        "fixed": frame_consistency_report(fixed),
        "random": frame_consistency_report(randomized),
        "n_frames": len(conditions),
    }


def run_eval(cfg: RunConfig, out_dir: str | Path, untrained_encoder: bool = False) -> dict:
    from soundreel.cli import _encoder_dims, _guidance, _load_corpus, _load_denoiser_ckpt, _load_encoder_ckpt
    from soundreel.video import interpolate_conditions

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = _load_corpus(cfg)
    denoiser_params, schedule = _load_denoiser_ckpt(cfg)
    if untrained_encoder:
        dims = _encoder_dims(cfg)
        encoder_params = init_encoder_params(
            dims,
            cfg.encoder_training.seed,
            sos_token=text.sos_token(cfg.text.seed, dims.d_tok),
            text_seed=cfg.text.seed,
        )
    else:
        encoder_params = _load_encoder_ckpt(cfg)

    feats = cfg.features
    retrieval = alignment.evaluate_retrieval(
        encoder_params, clips, n_segments=feats.n_segments, n_fft=feats.n_fft, hop=feats.hop
    )
    retrieval["untrained"] = untrained_encoder
    alignment.export_embeddings(
        encoder_params,
        clips,
        out_dir / "embeddings.jsonl",
        n_segments=feats.n_segments,
        n_fft=feats.n_fft,
        hop=feats.hop,
    )

    guidance = _guidance(cfg)
    n_classes = cfg.corpus.n_classes
    prompt_label = cfg.video.prompt_label
    audio_label = (prompt_label + 1) % n_classes
    prompt_c = text.encode_text_label(
        prompt_label, cfg.text.seed, d_emb=cfg.encoder.d_emb
    ).pooled

    # a real clip of the audio class drives both probes below
    audio_clip = next(w for w in clips if w.class_label == audio_label)
    _, segs, _ = alignment.precompute_segments(
        [audio_clip], feats.n_mels, feats.n_segments, feats.n_fft, feats.hop
    )
    _, alphas_all, s_seq = alignment.embed_clips(encoder_params, segs)

    steering = None
    if denoiser_params.substrate == SUBSTRATE_POINTS:
        # canonical joint-space direction of the audio class: isolates the
        # guidance calculus from the encoder's (unconstrained) output norms
        audio_c = text.encode_text_label(audio_label, cfg.text.seed, d_emb=cfg.encoder.d_emb).pooled
        fractions = steering_curve(
            denoiser_params,
            schedule,
            guidance,
            prompt_c,
            audio_c,
            audio_label,
            n_samples=1000,
            seed=cfg.video.seed,
        )
        steering = {
            "sigma_c": list(STEERING_SIGMAS),
            "audio_mode_fraction": fractions,
            "prompt_label": prompt_label,
            "audio_label": audio_label,
            "n_samples": 1000,
        }
        # dump an unconditional sample cloud alongside the metrics
        from soundreel.diffusion import sample as run_chain
        from soundreel.toy_data import dump_point_samples

        pred = make_predictor(denoiser_params)
        rng = np.random.default_rng([cfg.video.seed, 73])
        z_T = rng.standard_normal((1000, 2))
        noises = make_step_noises(rng, schedule.T, (1000, 2))
        cloud = run_chain(
            z_T, lambda z, t: pred(z, t, denoiser_params.null_condition()), schedule, noises=noises
        )
        dump_point_samples(cloud, out_dir / "samples_unconditional", n_classes)

    from soundreel.encoder import build_frame_conditions, TemporalState

    states = [
        TemporalState(s=s_seq[0, n], cell=np.zeros_like(s_seq[0, n]))
        for n in range(feats.n_segments)
    ]
    conds = [fc.c for fc in build_frame_conditions(states, alphas_all[0], guidance.k)]
    conds = interpolate_conditions(conds, cfg.video.interp_k)
    ablation = consistency_ablation(
        conds, prompt_c, denoiser_params, schedule, guidance, seed=cfg.video.seed
    )

    metrics = {
        "config_hash": cfg.config_hash(),
        "substrate": denoiser_params.substrate,
        "retrieval": retrieval,
        "steering": steering,
        "consistency": {
            "fixed_zT_mean_adjacent": ablation["fixed"]["mean_adjacent_distance"],
            "random_zT_mean_adjacent": ablation["random"]["mean_adjacent_distance"],
            "n_frames": ablation["n_frames"],
        },
    }

    import jsonschema

    jsonschema.validate(metrics, load_metrics_schema())
    (out_dir / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    _write_plots(metrics, out_dir)
    return metrics


def _write_plots(metrics: dict, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if metrics["steering"] is not None:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(metrics["steering"]["sigma_c"], metrics["steering"]["audio_mode_fraction"], marker="o")
        ax.set_xlabel("sigma_c")
        ax.set_ylabel("audio-mode fraction")
        ax.set_title("Mode steering vs guidance intensity")
        ax.set_ylim(-0.05, 1.05)
        fig.tight_layout()
        fig.savefig(out_dir / "steering_curve.png", dpi=120)
        plt.close(fig)

    c = metrics["consistency"]
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.bar(["fixed z_T", "random z_T"], [c["fixed_zT_mean_adjacent"], c["random_zT_mean_adjacent"]])
    ax.set_ylabel("mean adjacent frame RMS")
    ax.set_title("Temporal consistency ablation")
    fig.tight_layout()
    fig.savefig(out_dir / "consistency_ablation.png", dpi=120)
    plt.close(fig)
