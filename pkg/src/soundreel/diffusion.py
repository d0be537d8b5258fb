"""Denoising-diffusion substrate: schedule, closed-form noising, and the
sampling loop into which guidance is injected.

Steps are 1-indexed: t runs T..1 during sampling, alpha_bar[0] = 1 is
the no-noise convention. The default linear beta range is scaled by
1000/T so short toy schedules still end near-Gaussian (alpha_bar_T well
under 0.05).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_REFERENCE_T = 1000
_BETA_START_REF = 1e-4
_BETA_END_REF = 2e-2


@dataclass
class NoiseSchedule:
    betas: np.ndarray  # (T,), betas[t-1] belongs to step t

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size == 0:
            raise ValueError("betas must be a nonempty vector")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie strictly in (0, 1)")
        self.alphas = 1.0 - self.betas
        # alpha_bars[t] = prod_{s<=t} alpha_s, with alpha_bars[0] = 1
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])

    @property
    def T(self) -> int:
        return self.betas.shape[0]

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t < 0 or t > self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def _check_t(self, t: int) -> None:
        if t < 1 or t > self.T:
            raise ValueError(f"step t={t} outside [1, {self.T}]")

    @classmethod
    def linear(cls, T: int, beta_start: float | None = None, beta_end: float | None = None):
        """Linear schedule; default endpoints scale the 1000-step range by 1000/T."""
        scale = _REFERENCE_T / T
        if beta_start is None:
            beta_start = _BETA_START_REF * scale
        if beta_end is None:
            beta_end = min(_BETA_END_REF * scale, 0.999)
        return cls(np.linspace(beta_start, beta_end, T))


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising to step t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    schedule._check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def denoise_step(
    z_t: np.ndarray,
    t: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One ancestral step z_t -> z_{t-1}; no noise is added at t=1."""
    schedule._check_t(t)
    if eps_hat.shape != z_t.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != z shape {z_t.shape}")
    beta = schedule.beta(t)
    ab_t = schedule.alpha_bar(t)
    mean = (z_t - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    if noise is None:
        if rng is None:
            raise ValueError("denoise_step at t>1 needs rng or an explicit noise array")
        noise = rng.standard_normal(z_t.shape)
    ab_prev = schedule.alpha_bar(t - 1)
    sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta)
    return mean + sigma * noise


def ddim_step(z_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Noiseless (eta=0) step via the predicted clean point."""
    schedule._check_t(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    x0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def make_step_noises(rng: np.random.Generator, T: int, shape: tuple) -> np.ndarray:
    """Pre-drawn ancestral noise, one slot per step t (index t; 0 and 1 unused)."""
    noises = np.zeros((T + 1,) + shape)
    for t in range(2, T + 1):
        noises[t] = rng.standard_normal(shape)
    return noises


def sample(
    z_T: np.ndarray,
    guidance_fn,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noises: np.ndarray | None = None,
    method: str = "ancestral",
) -> np.ndarray:
    """Run the chain t=T..1. The noise estimate comes only from guidance_fn(z, t).

    ``noises`` (as from make_step_noises) makes the ancestral path fully
    deterministic; otherwise rng draws fresh noise per step.
    """
    if method not in ("ancestral", "ddim"):
        raise ValueError(f"unknown sampling method {method!r}")
    z = np.array(z_T, dtype=np.float64, copy=True)
    for t in range(schedule.T, 0, -1):
        eps_hat = guidance_fn(z, t)
        if method == "ddim":
            z = ddim_step(z, t, eps_hat, schedule)
        else:
            step_noise = noises[t] if (noises is not None and t > 1) else None
            z = denoise_step(z, t, eps_hat, schedule, rng=rng, noise=step_noise)
    return z
