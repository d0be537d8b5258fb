"""Audio semantic guidance for the diffusion sampler.

The guided noise estimate combines classifier-free guidance on the
prompt condition with an audio term that switches on at step delta and
runs to t=1:

    eps~ = eps(z, null) + g * (eps(z, c_p) - eps(z, null)) + lambda_term
    lambda_term = mask_scale(psi) + sigma_m * phi
    psi = eps(z, c_n) - eps(z, null)

mask_scale zeroes every entry of psi whose magnitude falls below the
lambda_pct percentile and scales the survivors by sigma_c. Guidance is
positive-only: there is no sign-flipped suppression branch. phi is an
exponentially smoothed accumulation of past masked terms, reset to zero
at the start of every frame's chain.

Both the conditioned and unconditioned estimates are evaluated on the
same latent z; at most three predictor evaluations happen per step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MASK_SCALED_PSI = "scaled_psi"
MASK_CONSTANT = "constant"


@dataclass
class GuidanceConfig:
    """Everything steering the guided estimate; fixed for all frames of a video."""

    delta: int
    g: float = 3.0
    sigma_c: float = 5.0
    lambda_pct: float = 0.9
    sigma_m: float = 0.3
    beta_m: float = 0.4
    k: float = 1.0
    mask_value_mode: str = MASK_SCALED_PSI

    def validate(self, T: int | None = None) -> None:
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if T is not None and self.delta > T:
            raise ValueError(f"delta={self.delta} exceeds T={T}")
        if self.sigma_c < 0:
            raise ValueError("sigma_c must be nonnegative")
        if not 0.0 <= self.lambda_pct < 1.0:
            raise ValueError("lambda_pct must be in [0, 1)")
        if not 0.0 <= self.sigma_m <= 1.0:
            raise ValueError("sigma_m must be in [0, 1]")
        if not 0.0 <= self.beta_m < 1.0:
            raise ValueError("beta_m must be in [0, 1)")
        if self.mask_value_mode not in (MASK_SCALED_PSI, MASK_CONSTANT):
            raise ValueError(f"unknown mask_value_mode {self.mask_value_mode!r}")

    @classmethod
    def default_for(cls, T: int, **overrides) -> "GuidanceConfig":
        """Defaults at the midpoints of the usual ranges; delta = 0.875 T."""
        cfg = cls(delta=int(round(0.875 * T)), **overrides)
        cfg.validate(T)
        return cfg

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "g": self.g,
            "sigma_c": self.sigma_c,
            "lambda_pct": self.lambda_pct,
            "sigma_m": self.sigma_m,
            "beta_m": self.beta_m,
            "k": self.k,
            "mask_value_mode": self.mask_value_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceConfig":
        return cls(**d)


@dataclass
class MomentumState:
    """Per-frame smoothed guidance accumulator; starts at exact zero."""

    phi: np.ndarray | None = None  # None means "still zero"

    def value(self, like: np.ndarray) -> np.ndarray:
        return np.zeros_like(like) if self.phi is None else self.phi


def compute_psi(eps_audio: np.ndarray, eps_uncond: np.ndarray) -> np.ndarray:
    """Semantic difference between audio-conditioned and unconditioned noise."""
    if eps_audio.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch: {eps_audio.shape} vs {eps_uncond.shape}")
    return eps_audio - eps_uncond


def _nearest_rank_threshold(mags: np.ndarray, lambda_pct: float) -> float:
    """Value below which a fraction lambda_pct of entries fall (nearest rank)."""
    flat = mags.ravel()
    kidx = min(int(np.floor(lambda_pct * flat.size)), flat.size - 1)
    return float(np.partition(flat, kidx)[kidx])


def percentile_mask_scale(
    psi: np.ndarray,
    sigma_c: float,
    lambda_pct: float,
    mode: str = MASK_SCALED_PSI,
) -> np.ndarray:
    """Keep only the largest-|psi| tail (global over all elements), scaled by sigma_c.

    mode "scaled_psi" returns sigma_c * psi on the surviving support
    (direction-preserving); mode "constant" writes the constant sigma_c
    there instead.
    """
    if psi.size == 0:
        raise ValueError("psi is empty")
    if not 0.0 <= lambda_pct < 1.0:
        raise ValueError("lambda_pct must be in [0, 1)")
    mags = np.abs(psi)
    eta = _nearest_rank_threshold(mags, lambda_pct)
    mask = mags >= eta
    if mode == MASK_SCALED_PSI:
        return sigma_c * psi * mask
    if mode == MASK_CONSTANT:
        return sigma_c * mask.astype(np.float64)
    raise ValueError(f"unknown mask_value_mode {mode!r}")


def percentile_mask_scale_batched(
    psi: np.ndarray, sigma_c: float, lambda_pct: float, mode: str = MASK_SCALED_PSI
) -> np.ndarray:
    """Row-wise variant: each leading-axis entry is masked independently.

    Used when many chains run in one array; each chain's psi is its own
    distribution.
    """
    bsz = psi.shape[0]
    flat = np.abs(psi).reshape(bsz, -1)
    kidx = min(int(np.floor(lambda_pct * flat.shape[1])), flat.shape[1] - 1)
    eta = np.partition(flat, kidx, axis=1)[:, kidx]
    mask = flat >= eta[:, None]
    mask = mask.reshape(psi.shape)
    if mode == MASK_SCALED_PSI:
        return sigma_c * psi * mask
    if mode == MASK_CONSTANT:
        return sigma_c * mask.astype(np.float64)
    raise ValueError(f"unknown mask_value_mode {mode!r}")


def support_size(masked: np.ndarray) -> int:
    return int(np.count_nonzero(masked))


def momentum_update(state: MomentumState, current: np.ndarray, beta_m: float) -> MomentumState:
    """Exponential smoothing: phi' = beta_m * phi + (1 - beta_m) * current."""
    if state.phi is not None and state.phi.shape != current.shape:
        raise ValueError(f"shape mismatch: {state.phi.shape} vs {current.shape}")
    phi = state.value(current)
    return MomentumState(phi=beta_m * phi + (1.0 - beta_m) * current)


def _audio_term(z_t, t, c_n, null_c, predict_fn, cfg, state, eps_uncond, batched):
    """Shared core: returns (lambda_term, new_state, info for tracing)."""
    eps_audio = predict_fn(z_t, t, c_n)
    if eps_uncond is None:
        eps_uncond = predict_fn(z_t, t, null_c)
    psi = compute_psi(eps_audio, eps_uncond)
    mask_fn = percentile_mask_scale_batched if batched else percentile_mask_scale
    masked = mask_fn(psi, cfg.sigma_c, cfg.lambda_pct, cfg.mask_value_mode)
    lam = masked + cfg.sigma_m * state.value(masked)
    info = {"psi": psi, "masked": masked, "lam": lam}
    return lam, momentum_update(state, masked, cfg.beta_m), info


def audio_guidance_term(
    z_t: np.ndarray,
    t: int,
    c_n: np.ndarray,
    null_c: np.ndarray,
    predict_fn,
    cfg: GuidanceConfig,
    state: MomentumState,
    eps_uncond: np.ndarray | None = None,
    batched: bool = False,
) -> tuple[np.ndarray, MomentumState]:
    """lambda(z, c_n) = mask_scale(psi) + sigma_m * phi, plus the updated momentum.

    Passing eps_uncond avoids re-evaluating the unconditioned estimate
    when the caller already has it.
    """
    if t > cfg.delta:
        raise ValueError(f"audio guidance is gated to t <= delta ({t} > {cfg.delta})")
    lam, state, _ = _audio_term(z_t, t, c_n, null_c, predict_fn, cfg, state, eps_uncond, batched)
    return lam, state


def guided_eps(
    z_t: np.ndarray,
    t: int,
    c_p: np.ndarray,
    c_n: np.ndarray | None,
    null_c: np.ndarray,
    predict_fn,
    cfg: GuidanceConfig,
    state: MomentumState,
    batched: bool = False,
    trace: list | None = None,
) -> tuple[np.ndarray, MomentumState]:
    """The full guided estimate for one step; see module docstring.

    For t > delta (or with both audio scales zero) this is exactly
    classifier-free guidance: the audio predictor is never evaluated.
    g=0 and g=1 short-circuit so those reductions are bit-exact.
    """
    audio_active = (
        c_n is not None and t <= cfg.delta and (cfg.sigma_c != 0.0 or cfg.sigma_m != 0.0)
    )
    eps_u = None
    if cfg.g != 1.0 or audio_active:
        eps_u = predict_fn(z_t, t, null_c)
    if cfg.g == 0.0:
        base = eps_u
    elif cfg.g == 1.0:
        base = predict_fn(z_t, t, c_p)
    else:
        eps_p = predict_fn(z_t, t, c_p)
        base = eps_u + cfg.g * (eps_p - eps_u)
    if not audio_active:
        return base, state
    lam, state, info = _audio_term(
        z_t, t, c_n, null_c, predict_fn, cfg, state, eps_u, batched
    )
    if trace is not None:
        trace.append(
            {
                "t": t,
                "psi_norm": float(np.linalg.norm(info["psi"])),
                "support_size": support_size(info["masked"]),
                "lambda_norm": float(np.linalg.norm(info["lam"])),
            }
        )
    return base + lam, state


def make_guided_fn(
    predict_fn,
    c_p: np.ndarray,
    c_n: np.ndarray | None,
    null_c: np.ndarray,
    cfg: GuidanceConfig,
    batched: bool = False,
    trace: list | None = None,
):
    """Close over a fresh momentum state; returns a (z, t) -> eps callable.

    One returned function serves exactly one frame's chain (the
    momentum state must not be shared across frames).
    """
    state = MomentumState()

    def fn(z, t):
        nonlocal state
        eps, state = guided_eps(
            z, t, c_p, c_n, null_c, predict_fn, cfg, state, batched=batched, trace=trace
        )
        return eps

    return fn


def make_cfg_fn(predict_fn, c_p: np.ndarray, null_c: np.ndarray, g: float):
    """Plain classifier-free guidance (no audio term)."""
    cfg = GuidanceConfig(delta=1, g=g, sigma_c=0.0, sigma_m=0.0)

    def fn(z, t):
        eps, _ = guided_eps(z, t, c_p, None, null_c, predict_fn, cfg, MomentumState())
        return eps

    return fn


def write_trace(trace: list[dict], path: str | Path) -> None:
    """Per-step guidance trace as CSV: t, |psi|, support size, |lambda|."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "psi_norm", "support_size", "lambda_norm"])
        for row in trace:
            writer.writerow([row["t"], row["psi_norm"], row["support_size"], row["lambda_norm"]])
