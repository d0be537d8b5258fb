"""Synthetic labeled audio corpus.

Each class is a harmonic stack with a distinct fundamental and harmonic
decay; each clip carries one of four amplitude envelopes (constant,
ramp-up, ramp-down, pulse) so segment-level magnitude actually changes
over time. Fully determined by the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from soundreel.audio import Waveform, write_wav

ENVELOPE_KINDS = ("constant", "ramp_up", "ramp_down", "pulse")

_F0_MIN = 180.0
_F0_MAX = 3200.0


def class_fundamental(label: int, n_classes: int) -> float:
    """Log-spaced fundamental frequency for a class id."""
    if n_classes < 2:
        return _F0_MIN
    ratio = (_F0_MAX / _F0_MIN) ** (1.0 / (n_classes - 1))
    return _F0_MIN * ratio**label


def class_name(label: int, n_classes: int) -> str:
    return f"tone{int(round(class_fundamental(label, n_classes)))}hz"


def _envelope(kind: str, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    if kind == "constant":
        return np.full(n, 0.8)
    if kind == "ramp_up":
        return 0.15 + 0.85 * t
    if kind == "ramp_down":
        return 1.0 - 0.85 * t
    if kind == "pulse":
        return 0.15 + 0.85 * np.exp(-0.5 * ((t - 0.5) / 0.12) ** 2)
    raise ValueError(f"unknown envelope kind {kind!r}")


def synthesize_clip(
    label: int, n_classes: int, duration_s: float, sample_rate: int, rng: np.random.Generator
) -> tuple[Waveform, str]:
    """One clip: harmonic stack at the class fundamental under a random envelope."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = class_fundamental(label, n_classes) * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))
    # class-dependent harmonic profile: higher classes get steeper decay
    decay = 0.3 + 0.5 * (label % 4) / 4.0
    x = np.zeros(n)
    for h in range(1, 4):
        f_h = f0 * h
        if f_h >= sample_rate / 2:
            break
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += (decay ** (h - 1)) * np.sin(2.0 * np.pi * f_h * t + phase)
    x += 0.01 * rng.standard_normal(n)
    kind = ENVELOPE_KINDS[int(rng.integers(0, len(ENVELOPE_KINDS)))]
    x *= _envelope(kind, n)
    x *= 0.7 / max(1e-9, np.max(np.abs(x)))
    return Waveform(samples=x, sample_rate=sample_rate, class_label=label), kind


def synthesize_corpus(
    n_classes: int,
    clips_per_class: int,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    rng_seed: int = 0,
) -> list[Waveform]:
    """n_classes * clips_per_class labeled clips, deterministic per seed."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    clips = []
    for label in range(n_classes):
        for j in range(clips_per_class):
            rng = np.random.default_rng([rng_seed, label, j])
            wave, _ = synthesize_clip(label, n_classes, duration_s, sample_rate, rng)
            clips.append(wave)
    return clips


@dataclass
class ManifestEntry:
    path: str
    class_label: int
    class_name: str


def write_corpus(
    out_dir: str | Path,
    n_classes: int,
    clips_per_class: int,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    rng_seed: int = 0,
) -> Path:
    """Write WAVs plus a JSON-lines manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = synthesize_corpus(n_classes, clips_per_class, duration_s, sample_rate, rng_seed)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for i, wave in enumerate(clips):
            label = wave.class_label
            rel = f"clip_{i:04d}_class{label}.wav"
            write_wav(out_dir / rel, wave)
            entry = {
                "path": rel,
                "class_label": label,
                "class_name": class_name(label, n_classes),
            }
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest_path


def read_manifest(manifest_path: str | Path) -> list[ManifestEntry]:
    entries = []
    for line in Path(manifest_path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        entries.append(ManifestEntry(rec["path"], rec["class_label"], rec["class_name"]))
    return entries


def load_corpus(manifest_path: str | Path) -> list[Waveform]:
    """Read every WAV listed in a manifest, attaching labels."""
    from soundreel.audio import read_wav

    manifest_path = Path(manifest_path)
    clips = []
    for entry in read_manifest(manifest_path):
        wave = read_wav(manifest_path.parent / entry.path)
        wave.class_label = entry.class_label
        clips.append(wave)
    return clips
