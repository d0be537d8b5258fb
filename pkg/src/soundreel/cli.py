"""Command-line surface.

Subcommands: synth-corpus, train, generate, eval. Every command reads
one config file (TOML or JSON, plus --set overrides), and writes its
outputs under <run_root>/<config-hash>/. Exit codes: 0 success,
2 config error, 3 missing artifact, 4 numerical failure (NaN detected).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from soundreel import alignment, corpus as corpus_mod, text, video as video_mod
from soundreel.audio import AugmentPolicy, read_wav
from soundreel.config import ConfigError, RunConfig, load_config
from soundreel.denoisers import (
    SUBSTRATE_IMAGE,
    SUBSTRATE_POINTS,
    DenoiserParams,
    DiffusionTrainConfig,
    init_denoiser_image,
    init_denoiser_points,
    load_denoiser,
    save_denoiser,
    train_denoiser,
)
from soundreel.diffusion import NoiseSchedule
from soundreel.encoder import EncoderDims, init_encoder_params, load_encoder, save_encoder
from soundreel.guidance import GuidanceConfig, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4


class MissingArtifactError(FileNotFoundError):
    pass


class NumericalError(ArithmeticError):
    pass


def check_finite(name: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values detected in {name}")


def _encoder_dims(cfg: RunConfig) -> EncoderDims:
    e = cfg.encoder
    return EncoderDims(
        n_mels=cfg.features.n_mels,
        channels=tuple(e.channels),
        d_emb=e.d_emb,
        h_proj=e.h_proj,
        l_tokens=e.l_tokens,
        d_tok=e.d_tok,
        h_map=e.h_map,
        dropout=e.dropout,
    )


def _guidance(cfg: RunConfig) -> GuidanceConfig:
    g = cfg.guidance
    gc = GuidanceConfig(
        delta=cfg.resolved_delta(),
        g=g.g,
        sigma_c=g.sigma_c,
        lambda_pct=g.lambda_pct,
        sigma_m=g.sigma_m,
        beta_m=g.beta_m,
        k=g.k,
        mask_value_mode=g.mask_value_mode,
    )
    gc.validate(cfg.diffusion.T)
    return gc


def _load_corpus(cfg: RunConfig):
    manifest = cfg.corpus_dir() / "manifest.jsonl"
    if not manifest.exists():
        raise MissingArtifactError(
            f"corpus manifest not found at {manifest}; run 'soundreel synth-corpus' first"
        )
    return corpus_mod.load_corpus(manifest)


def _load_encoder_ckpt(cfg: RunConfig):
    path = cfg.encoder_ckpt()
    if not path.exists():
        raise MissingArtifactError(f"encoder checkpoint not found at {path}")
    return load_encoder(path)


def _load_denoiser_ckpt(cfg: RunConfig):
    path = cfg.denoiser_ckpt()
    if not path.exists():
        raise MissingArtifactError(f"denoiser checkpoint not found at {path}")
    return load_denoiser(path)


def _denoiser_dataset(cfg: RunConfig):
    """Clean data plus per-sample joint-space conditions for the substrate."""
    from soundreel.toy_data import sample_gratings, sample_mixture

    rng = np.random.default_rng([cfg.diffusion.seed, 41])
    n_classes = cfg.corpus.n_classes
    if cfg.diffusion.substrate == SUBSTRATE_POINTS:
        x0, labels = sample_mixture(cfg.diffusion.dataset_size, rng, n_modes=n_classes)
    else:
        x0, labels = sample_gratings(cfg.diffusion.dataset_size, rng, n_classes=n_classes)
    pooled = np.stack(
        [
            text.encode_text_label(c, cfg.text.seed, d_emb=cfg.encoder.d_emb).pooled
            for c in range(n_classes)
        ]
    )
    return x0, pooled[labels]


def cmd_synth_corpus(cfg: RunConfig, args) -> int:
    out = cfg.corpus_dir()
    manifest = corpus_mod.write_corpus(
        out,
        n_classes=cfg.corpus.n_classes,
        clips_per_class=cfg.corpus.clips_per_class,
        duration_s=cfg.features.duration_s,
        sample_rate=cfg.features.sample_rate,
        rng_seed=cfg.corpus.seed,
    )
    digest = hashlib.sha256(manifest.read_bytes()).hexdigest()
    print(f"corpus: {len(corpus_mod.read_manifest(manifest))} clips at {out}")
    print(f"manifest sha256: {digest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    run_dir = cfg.run_dir()
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if not args.denoiser_only:
        clips = _load_corpus(cfg)
        tc = cfg.encoder_training
        train_cfg = alignment.TrainConfig(
            tau=tc.tau,
            lambda_s=tc.lambda_s,
            lr_sgd=tc.lr_sgd,
            momentum=tc.momentum,
            weight_decay=tc.weight_decay,
            batch_size=tc.batch_size,
            epochs=tc.epochs,
            lr_adam=tc.lr_adam,
            seed=tc.seed,
        )
        policy = AugmentPolicy(
            max_freq_mask_bins=tc.max_freq_mask_bins,
            max_time_mask_frames=tc.max_time_mask_frames,
            n_freq_masks=tc.n_freq_masks,
            n_time_masks=tc.n_time_masks,
        )
        params, history = alignment.train_encoder(
            clips,
            train_cfg,
            dims=_encoder_dims(cfg),
            n_segments=cfg.features.n_segments,
            n_fft=cfg.features.n_fft,
            hop=cfg.features.hop,
            augment=policy,
            text_seed=cfg.text.seed,
            log=print,
        )
        for arr in params.tensors.values():
            check_finite("encoder parameters", arr)
        save_encoder(params, cfg.encoder_ckpt(), n_segments=cfg.features.n_segments, k=cfg.guidance.k)
        alignment.write_history(history, run_dir / "encoder_history.csv")
        metrics = alignment.evaluate_retrieval(
            params,
            clips,
            n_segments=cfg.features.n_segments,
            n_fft=cfg.features.n_fft,
            hop=cfg.features.hop,
        )
        print(
            f"encoder: top1 {metrics['top1']:.3f}  matched-cos {metrics['mean_cosine_matched']:.3f}  "
            f"mismatched-cos {metrics['mean_cosine_mismatched']:.3f}"
        )
        print(f"encoder checkpoint: {cfg.encoder_ckpt()}")
    if not args.encoder_only:
        schedule = NoiseSchedule.linear(cfg.diffusion.T)
        if cfg.diffusion.substrate == SUBSTRATE_POINTS:
            params_d = init_denoiser_points(
                seed=cfg.diffusion.seed,
                d_cond=cfg.encoder.d_emb,
                hidden=cfg.diffusion.hidden,
                text_seed=cfg.text.seed,
            )
        else:
            params_d = init_denoiser_image(
                seed=cfg.diffusion.seed,
                d_cond=cfg.encoder.d_emb,
                channels=cfg.diffusion.channels,
                text_seed=cfg.text.seed,
            )
        x0, cond = _denoiser_dataset(cfg)
        dcfg = DiffusionTrainConfig(
            steps=cfg.diffusion.steps,
            batch_size=cfg.diffusion.batch_size,
            lr=cfg.diffusion.lr,
            cond_dropout=cfg.diffusion.cond_dropout,
            seed=cfg.diffusion.seed,
        )
        params_d, hist = train_denoiser(x0, cond, schedule, params_d, dcfg, log=print)
        for arr in params_d.tensors.values():
            check_finite("denoiser parameters", arr)
        save_denoiser(params_d, schedule, cfg.denoiser_ckpt())
        with open(run_dir / "denoiser_history.csv", "w") as fh:
            fh.write("step,loss,running_loss\n")
            for row in hist:
                fh.write(f"{row['step']},{row['loss']},{row['running_loss']}\n")
        print(f"denoiser checkpoint: {cfg.denoiser_ckpt()}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    encoder_params = _load_encoder_ckpt(cfg)
    denoiser_params, schedule = _load_denoiser_ckpt(cfg)
    audio_path = Path(args.audio)
    if not audio_path.exists():
        raise MissingArtifactError(f"audio file not found: {audio_path}")
    wave = read_wav(audio_path)
    gc = _guidance(cfg)
    if args.sigma_c is not None:
        gc.sigma_c = args.sigma_c
    if args.sigma_m is not None:
        gc.sigma_m = args.sigma_m
    gc.validate(schedule.T)
    req = video_mod.VideoRequest(
        prompt_label=args.prompt_label if args.prompt_label is not None else cfg.video.prompt_label,
        audio=wave,
        guidance=gc,
        n_segments=cfg.features.n_segments,
        interp_k=args.interp_k if args.interp_k is not None else cfg.video.interp_k,
        seed=args.seed if args.seed is not None else cfg.video.seed,
    )
    seq = video_mod.generate_video(
        req,
        encoder_params,
        denoiser_params,
        schedule,
        n_fft=cfg.features.n_fft,
        hop=cfg.features.hop,
        jobs=args.jobs,
        want_traces=args.trace,
    )
    check_finite("frames", *seq.frames, seq.initial_frame)
    out_dir = cfg.run_dir() / f"video_p{req.prompt_label}_s{req.seed}"
    video_mod.write_frames(seq, out_dir, denoiser_params.substrate)
    manifest = video_mod.build_manifest(
        seq,
        req,
        denoiser_params.substrate,
        extra={"config_hash": cfg.config_hash(), "audio": str(audio_path)},
    )
    video_mod.write_manifest(manifest, out_dir / "manifest.json")
    if args.trace and seq.traces is not None:
        for i, tr in enumerate(seq.traces):
            write_trace(tr, out_dir / f"trace_{i:04d}.csv")
    print(f"wrote {len(seq.frames)} frames to {out_dir}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from soundreel.evaluation import run_eval

    out_dir = cfg.run_dir() / "eval"
    metrics = run_eval(cfg, out_dir, untrained_encoder=args.untrained_encoder)
    print(json.dumps({k: metrics[k] for k in sorted(metrics) if k != "steering_curve"}, indent=2, default=str))
    print(f"eval outputs in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soundreel", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML or JSON run config")
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable; applied before hashing)",
        )

    sp = sub.add_parser("synth-corpus", help="synthesize the labeled audio corpus")
    common(sp)

    sp = sub.add_parser("train", help="train encoder and denoiser checkpoints")
    common(sp)
    sp.add_argument("--encoder-only", action="store_true")
    sp.add_argument("--denoiser-only", action="store_true")

    sp = sub.add_parser("generate", help="generate a frame sequence from audio")
    common(sp)
    sp.add_argument("--audio", required=True, help="input WAV")
    sp.add_argument("--prompt-label", type=int, default=None)
    sp.add_argument("--interp-k", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--sigma-c", type=float, default=None)
    sp.add_argument("--sigma-m", type=float, default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--trace", action="store_true", help="dump per-step guidance traces")

    sp = sub.add_parser("eval", help="retrieval, steering, and consistency metrics")
    common(sp)
    sp.add_argument(
        "--untrained-encoder",
        action="store_true",
        help="evaluate a freshly initialized encoder instead of the checkpoint",
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.run_dir().mkdir(parents=True, exist_ok=True)
    (cfg.run_dir() / "config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    handlers = {
        "synth-corpus": cmd_synth_corpus,
        "train": cmd_train,
        "generate": cmd_generate,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
