"""Waveform-to-spectrogram front end.

Mel spectrograms, uniform time segmentation, and SpecAugment-style
masking. Everything here is a pure function of its inputs and seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass
class Waveform:
    """Mono audio clip, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    class_label: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono waveform, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass
class MelSpectrogram:
    """Log-mel energy matrix, shape (d mel bins, w frames), entries >= 0."""

    values: np.ndarray
    sample_rate: int | None = None
    n_fft: int | None = None
    hop: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"expected 2-D spectrogram, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite entries")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass
class SegmentList:
    """N equal-shape time slices of a spectrogram (last zero-padded)."""

    segments: list[np.ndarray]
    n_segments: int
    unpadded_width: int  # original w, needed to undo the padding

    def stacked(self) -> np.ndarray:
        """(N, d, ceil(w/N)) array view of the segments."""
        return np.stack(self.segments, axis=0)


@dataclass(frozen=True)
class AugmentPolicy:
    """SpecAugment mask counts and maximum widths."""

    max_freq_mask_bins: int = 8
    max_time_mask_frames: int = 12
    n_freq_masks: int = 2
    n_time_masks: int = 2

    def validate(self, d: int, w: int) -> None:
        for name in ("max_freq_mask_bins", "max_time_mask_frames", "n_freq_masks", "n_time_masks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_freq_mask_bins >= d:
            raise ValueError(f"max_freq_mask_bins={self.max_freq_mask_bins} must be < d={d}")
        if self.max_time_mask_frames >= w:
            raise ValueError(f"max_time_mask_frames={self.max_time_mask_frames} must be < w={w}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft//2 + 1)."""
    f_max = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, fft_freqs.shape[0]))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_bin_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def compute_mel_spectrogram(
    wave: Waveform, n_mels: int = 64, n_fft: int = 512, hop: int = 256
) -> MelSpectrogram:
    """Log-mel spectrogram: log1p of triangular-filtered STFT power.

    Frames are non-centered: w = 1 + (len - n_fft) // hop. Entries are
    log(1 + energy), so silence maps to exactly 0.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    x = wave.samples
    if x.shape[0] < n_fft:
        raise ValueError(
            f"waveform too short: {x.shape[0]} samples, need at least n_fft={n_fft}"
        )
    w = 1 + (x.shape[0] - n_fft) // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)  # periodic Hann
    idx = np.arange(n_fft)[None, :] + hop * np.arange(w)[:, None]
    frames = x[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # (w, n_fft//2+1)
    fb = mel_filterbank(n_mels, n_fft, wave.sample_rate)
    mel_energy = power @ fb.T  # (w, n_mels)
    return MelSpectrogram(
        np.log1p(mel_energy.T), sample_rate=wave.sample_rate, n_fft=n_fft, hop=hop
    )


def segment_spectrogram(mel: MelSpectrogram, n_segments: int) -> SegmentList:
    """Split along time into N segments of width ceil(w/N), zero-padding the last."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    d, w = mel.d, mel.w
    if n_segments > w:
        raise ValueError(f"cannot form {n_segments} nonempty segments from w={w} frames")
    seg_w = -(-w // n_segments)  # ceil
    segments = []
    for n in range(n_segments):
        chunk = mel.values[:, n * seg_w : (n + 1) * seg_w]
        if chunk.shape[1] < seg_w:
            pad = np.zeros((d, seg_w - chunk.shape[1]))
            chunk = np.concatenate([chunk, pad], axis=1)
        segments.append(chunk.copy())
    return SegmentList(segments=segments, n_segments=n_segments, unpadded_width=w)


def unsegment(seglist: SegmentList) -> np.ndarray:
    """Concatenate segments and drop the padding; inverse of segment_spectrogram."""
    full = np.concatenate(seglist.segments, axis=1)
    return full[:, : seglist.unpadded_width]


def spec_augment(mel: MelSpectrogram, policy: AugmentPolicy, rng_seed) -> MelSpectrogram:
    """Zero out random frequency bands and time spans. Same seed, same masks.

    Mask widths are drawn uniformly from [1, max]; positions uniformly
    over the valid range. A policy with all counts zero is the identity.
    """
    policy.validate(mel.d, mel.w)
    rng = np.random.default_rng(rng_seed)
    out = mel.values.copy()
    for _ in range(policy.n_freq_masks):
        if policy.max_freq_mask_bins < 1:
            continue
        width = int(rng.integers(1, policy.max_freq_mask_bins + 1))
        start = int(rng.integers(0, mel.d - width + 1))
        out[start : start + width, :] = 0.0
    for _ in range(policy.n_time_masks):
        if policy.max_time_mask_frames < 1:
            continue
        width = int(rng.integers(1, policy.max_time_mask_frames + 1))
        start = int(rng.integers(0, mel.w - width + 1))
        out[:, start : start + width] = 0.0
    return MelSpectrogram(out, sample_rate=mel.sample_rate, n_fft=mel.n_fft, hop=mel.hop)


# --- disk formats -----------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    """Read a mono PCM16 or float32 WAV into a [-1, 1] float waveform."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono WAV, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV dtype {data.dtype}")
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, wave: Waveform) -> None:
    """Write as PCM16, clipping to [-1, 1]."""
    clipped = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(path, wave.sample_rate, (clipped * 32767.0).astype(np.int16))


def save_spectrogram(mel: MelSpectrogram, path: str | Path) -> None:
    """Binary tensor (.npy) plus a JSON sidecar with the STFT geometry."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), mel.values)
    sidecar = {
        "d": mel.d,
        "w": mel.w,
        "sample_rate": mel.sample_rate,
        "hop": mel.hop,
        "n_fft": mel.n_fft,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_spectrogram(path: str | Path) -> MelSpectrogram:
    path = Path(path)
    values = np.load(path.with_suffix(".npy"))
    meta = json.loads(path.with_suffix(".json").read_text())
    return MelSpectrogram(
        values, sample_rate=meta["sample_rate"], n_fft=meta["n_fft"], hop=meta["hop"]
    )
