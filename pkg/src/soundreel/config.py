"""Run configuration: TOML/JSON files, strict validation, content hashing.

Unknown keys are rejected by name before any work happens. Every
command's outputs land under ``<run_root>/<config-hash>/`` so identical
configs map to identical run directories; the hash covers the fully
resolved config (file plus --set overrides).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

RUN_DIR_ENV = "SOUNDREEL_RUN_DIR"


class ConfigError(ValueError):
    """Bad configuration file or override; CLI exit code 2."""


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section [{section}] must be a table/object")
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{section}.{key}'")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid section [{section}]: {exc}") from exc


@dataclass
class FeaturesConfig:
    sample_rate: int = 16000
    duration_s: float = 2.0
    n_fft: int = 512
    hop: int = 256
    n_mels: int = 64
    n_segments: int = 5


@dataclass
class CorpusConfig:
    n_classes: int = 8
    clips_per_class: int = 16
    seed: int = 0


@dataclass
class EncoderConfig:
    channels: list = field(default_factory=lambda: [8, 16, 128])
    d_emb: int = 64
    h_proj: int = 32
    l_tokens: int = 8
    d_tok: int = 64
    h_map: int = 128
    dropout: float = 0.2


@dataclass
class EncoderTrainingConfig:
    tau: float = 0.07
    lambda_s: float = 0.6
    lr_sgd: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    epochs: int = 30
    lr_adam: float = 0.02
    seed: int = 0
    max_freq_mask_bins: int = 8
    max_time_mask_frames: int = 12
    n_freq_masks: int = 2
    n_time_masks: int = 2


@dataclass
class DiffusionConfig:
    substrate: str = "points2d"
    T: int = 100
    steps: int = 3000
    batch_size: int = 256
    lr: float = 0.001
    cond_dropout: float = 0.15
    seed: int = 0
    dataset_size: int = 20000
    hidden: int = 128  # points2d MLP width
    channels: int = 16  # image16 conv width


@dataclass
class GuidanceSection:
    g: float = 3.0
    delta: int | None = None  # None resolves to round(0.875 * T)
    sigma_c: float = 5.0
    lambda_pct: float = 0.9
    sigma_m: float = 0.3
    beta_m: float = 0.4
    k: float = 1.0
    mask_value_mode: str = "scaled_psi"


@dataclass
class VideoConfig:
    prompt_label: int = 0
    interp_k: int = 1
    seed: int = 0


@dataclass
class PathsConfig:
    run_root: str = "runs"
    corpus_dir: str | None = None  # default: <run_dir>/corpus
    encoder_ckpt: str | None = None  # default: <run_dir>/checkpoints/encoder.npz
    denoiser_ckpt: str | None = None  # default: <run_dir>/checkpoints/denoiser.npz


@dataclass
class TextConfig:
    seed: int = 0


_SECTIONS = {
    "features": FeaturesConfig,
    "corpus": CorpusConfig,
    "encoder": EncoderConfig,
    "encoder_training": EncoderTrainingConfig,
    "diffusion": DiffusionConfig,
    "guidance": GuidanceSection,
    "video": VideoConfig,
    "paths": PathsConfig,
    "text": TextConfig,
}


@dataclass
class RunConfig:
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    encoder_training: EncoderTrainingConfig = field(default_factory=EncoderTrainingConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    video: VideoConfig = field(default_factory=VideoConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    text: TextConfig = field(default_factory=TextConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        for key in data:
            if key not in _SECTIONS:
                raise ConfigError(f"unknown config section '{key}'")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            kwargs[name] = _build(section_cls, data.get(name, {}), name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.diffusion.substrate not in ("points2d", "image16"):
            raise ConfigError(
                f"diffusion.substrate must be points2d or image16, got {self.diffusion.substrate!r}"
            )
        if self.diffusion.T < 2:
            raise ConfigError("diffusion.T must be >= 2")
        if self.guidance.delta is not None and not (1 <= self.guidance.delta <= self.diffusion.T):
            raise ConfigError("guidance.delta must lie in [1, diffusion.T]")
        if self.features.n_segments < 1:
            raise ConfigError("features.n_segments must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    # --- resolved paths -------------------------------------------------------

    def run_root(self) -> Path:
        return Path(os.environ.get(RUN_DIR_ENV, self.paths.run_root))

    def run_dir(self) -> Path:
        return self.run_root() / self.config_hash()

    def corpus_dir(self) -> Path:
        if self.paths.corpus_dir:
            return Path(self.paths.corpus_dir)
        return self.run_dir() / "corpus"

    def encoder_ckpt(self) -> Path:
        if self.paths.encoder_ckpt:
            return Path(self.paths.encoder_ckpt)
        return self.run_dir() / "checkpoints" / "encoder.npz"

    def denoiser_ckpt(self) -> Path:
        if self.paths.denoiser_ckpt:
            return Path(self.paths.denoiser_ckpt)
        return self.run_dir() / "checkpoints" / "denoiser.npz"

    def resolved_delta(self) -> int:
        if self.guidance.delta is not None:
            return self.guidance.delta
        return int(round(0.875 * self.diffusion.T))


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """Read TOML or JSON, apply dot-path --set overrides, validate."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        import tomli

        with open(path, "rb") as fh:
            try:
                data = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    elif path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
    for item in overrides or []:
        data = apply_override(data, item)
    return RunConfig.from_dict(data)


def apply_override(data: dict, item: str) -> dict:
    """Apply one 'section.key=value' override; values parse as JSON first."""
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section, key = parts
    data.setdefault(section, {})
    if not isinstance(data[section], dict):
        raise ConfigError(f"cannot override non-table section '{section}'")
    data[section][key] = value
    return data
