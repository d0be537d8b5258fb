"""Frame-sequence generation.

One video = one prompt condition (the content anchor) and a sequence of
audio conditions c_n. The initial frame is classifier-free-guided from
the prompt alone; every audio frame re-runs the full chain from the
SAME z_T (and the same pre-drawn ancestral noise), so with the audio
term switched off every frame reproduces the initial frame bit for bit.
Spherical interpolation between consecutive c_n inserts extra frames.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soundreel import text
from soundreel.audio import Waveform
from soundreel.denoisers import (
    SUBSTRATE_IMAGE,
    SUBSTRATE_POINTS,
    DenoiserParams,
    make_predictor,
)
from soundreel.diffusion import NoiseSchedule, make_step_noises, sample
from soundreel.encoder import EncoderParams, encode_audio
from soundreel.guidance import GuidanceConfig, make_cfg_fn, make_guided_fn


@dataclass
class VideoRequest:
    prompt_label: int
    audio: Waveform
    guidance: GuidanceConfig
    n_segments: int = 5
    interp_k: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.interp_k < 0:
            raise ValueError("interp_k must be >= 0")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        self.guidance.validate()


@dataclass
class FrameSequence:
    frames: list[np.ndarray]  # m = N + (N-1) * interp_k decoded outputs
    conditions: list[np.ndarray]  # the m condition vectors actually used
    z_T: np.ndarray  # shared initial noise
    initial_frame: np.ndarray  # prompt-only anchor frame
    traces: list | None = None  # optional per-frame guidance traces


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation; falls back to lerp for near-zero angles."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("slerp endpoints must be nonzero")
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    omega = np.arccos(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))
    if omega < 1e-6:
        return (1.0 - t) * a + t * b
    s = np.sin(omega)
    return np.sin((1.0 - t) * omega) / s * a + np.sin(t * omega) / s * b


def interpolate_conditions(conditions: list[np.ndarray], k: int) -> list[np.ndarray]:
    """Insert k slerped vectors between each consecutive pair.

    Originals land at indices 0, k+1, 2(k+1), ...; output length is
    N + (N-1) * k.
    """
    if len(conditions) == 0:
        raise ValueError("need at least one condition")
    if k < 0:
        raise ValueError("k must be >= 0")
    out = [np.asarray(conditions[0], dtype=np.float64).copy()]
    for a, b in zip(conditions, conditions[1:]):
        for j in range(1, k + 1):
            out.append(slerp(a, b, j / (k + 1)))
        out.append(np.asarray(b, dtype=np.float64).copy())
    return out


def _state_shape(params: DenoiserParams) -> tuple:
    if params.substrate == SUBSTRATE_POINTS:
        return (2,)
    if params.substrate == SUBSTRATE_IMAGE:
        s = params.dims["size"]
        return (1, s, s)
    raise ValueError(f"unknown substrate {params.substrate!r}")


def draw_video_noise(seed: int, shape: tuple, T: int) -> tuple[np.ndarray, np.ndarray]:
    """The per-video random state: z_T plus one noise slot per ancestral step."""
    rng = np.random.default_rng([seed, 31])
    z_T = rng.standard_normal(shape)
    return z_T, make_step_noises(rng, T, shape)


def prompt_condition(label: int, denoiser: DenoiserParams) -> np.ndarray:
    return text.encode_text_label(label, denoiser.text_seed, d_emb=denoiser.d_cond).pooled


def generate_initial_frame(
    prompt_c: np.ndarray,
    guidance_cfg: GuidanceConfig,
    seed: int,
    denoiser: DenoiserParams,
    schedule: NoiseSchedule,
) -> tuple[np.ndarray, np.ndarray]:
    """Classifier-free-guided sample from the prompt; returns (frame, z_T)."""
    z_T, noises = draw_video_noise(seed, _state_shape(denoiser), schedule.T)
    fn = make_cfg_fn(make_predictor(denoiser), prompt_c, denoiser.null_condition(), guidance_cfg.g)
    frame = sample(z_T, fn, schedule, noises=noises)
    return frame, z_T


def _render_audio_frame(denoiser, schedule, cfg, c_p, c_n, z_T, noises, want_trace):
    trace = [] if want_trace else None
    fn = make_guided_fn(
        make_predictor(denoiser), c_p, c_n, denoiser.null_condition(), cfg, trace=trace
    )
    frame = sample(z_T, fn, schedule, noises=noises)
    return frame, trace


def generate_video(
    req: VideoRequest,
    encoder_params: EncoderParams,
    denoiser_params: DenoiserParams,
    schedule: NoiseSchedule,
    n_fft: int = 512,
    hop: int = 256,
    jobs: int = 1,
    want_traces: bool = False,
) -> FrameSequence:
    """Encode audio, interpolate conditions, render every frame from one z_T."""
    req.validate()
    req.guidance.validate(schedule.T)
    if encoder_params.text_seed != denoiser_params.text_seed:
        raise ValueError(
            "encoder and denoiser were trained against different text embedding "
            f"seeds ({encoder_params.text_seed} vs {denoiser_params.text_seed})"
        )
    attn, frame_conds, _ = encode_audio(
        req.audio, req.n_segments, encoder_params, n_fft=n_fft, hop=hop, k=req.guidance.k
    )
    conditions = interpolate_conditions([fc.c for fc in frame_conds], req.interp_k)
    c_p = prompt_condition(req.prompt_label, denoiser_params)
    z_T, noises = draw_video_noise(req.seed, _state_shape(denoiser_params), schedule.T)
    initial_fn = make_cfg_fn(
        make_predictor(denoiser_params), c_p, denoiser_params.null_condition(), req.guidance.g
    )
    initial_frame = sample(z_T, initial_fn, schedule, noises=noises)

    args = [
        (denoiser_params, schedule, req.guidance, c_p, c_n, z_T, noises, want_traces)
        for c_n in conditions
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_render_audio_frame_star, args))
    else:
        results = [_render_audio_frame(*a) for a in args]
    frames = [r[0] for r in results]
    traces = [r[1] for r in results] if want_traces else None
    return FrameSequence(
        frames=frames,
        conditions=conditions,
        z_T=z_T,
        initial_frame=initial_frame,
        traces=traces,
    )


def _render_audio_frame_star(args):
    return _render_audio_frame(*args)


def frame_rms(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def frame_consistency_report(seq: FrameSequence | list[np.ndarray]) -> dict[str, float]:
    """Adjacent-frame RMS statistics plus mean distance to the first frame."""
    frames = seq.frames if isinstance(seq, FrameSequence) else seq
    if len(frames) < 2:
        raise ValueError("need at least 2 frames for a consistency report")
    adjacent = [frame_rms(a, b) for a, b in zip(frames, frames[1:])]
    anchors = [frame_rms(f, frames[0]) for f in frames[1:]]
    return {
        "mean_adjacent_distance": float(np.mean(adjacent)),
        "max_adjacent_distance": float(np.max(adjacent)),
        "anchor_distance": float(np.mean(anchors)),
    }


# --- disk output ---------------------------------------------------------------


def _to_grayscale_png(frame: np.ndarray, path: Path) -> None:
    from PIL import Image

    img = np.clip((frame.squeeze() + 1.0) * 0.5, 0.0, 1.0)
    Image.fromarray((img * 255.0).round().astype(np.uint8), mode="L").save(path)


def write_frames(seq: FrameSequence, out_dir: str | Path, substrate: str) -> None:
    """Per-frame binary tensors; additionally 8-bit PNGs for the image substrate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "initial.npy", seq.initial_frame)
    np.save(out_dir / "z_T.npy", seq.z_T)
    if substrate == SUBSTRATE_IMAGE:
        _to_grayscale_png(seq.initial_frame, out_dir / "initial.png")
    for i, frame in enumerate(seq.frames):
        np.save(out_dir / f"frame_{i:04d}.npy", frame)
        if substrate == SUBSTRATE_IMAGE:
            _to_grayscale_png(frame, out_dir / f"frame_{i:04d}.png")


def build_manifest(
    seq: FrameSequence, req: VideoRequest, substrate: str, extra: dict | None = None
) -> dict:
    manifest = {
        "seed": req.seed,
        "n_segments": req.n_segments,
        "interp_k": req.interp_k,
        "prompt_label": req.prompt_label,
        "substrate": substrate,
        "guidance": req.guidance.to_dict(),
        "n_frames": len(seq.frames),
        "condition_norms": [float(np.linalg.norm(c)) for c in seq.conditions],
        "consistency": frame_consistency_report(seq)
        if len(seq.frames) >= 2
        else None,
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
