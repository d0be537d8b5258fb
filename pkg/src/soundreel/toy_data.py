"""Toy training distributions for the two diffusion substrates.

Points: an 8-mode Gaussian mixture on a circle (mode id = class id).
Images: 16x16 oriented gratings, one orientation per class.
"""

from __future__ import annotations

import numpy as np

MODE_RADIUS = 8.0
MODE_SIGMA = 0.5


def mixture_centers(n_modes: int = 8) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    return MODE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def sample_mixture(
    n: int, rng: np.random.Generator, n_modes: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, n_modes, size=n)
    centers = mixture_centers(n_modes)
    x = centers[labels] + MODE_SIGMA * rng.standard_normal((n, 2))
    return x, labels


def nearest_mode(x: np.ndarray, n_modes: int = 8, within: float = 3.0 * MODE_SIGMA) -> np.ndarray:
    """Mode id of the nearest center, or -1 if farther than ``within``."""
    centers = mixture_centers(n_modes)
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
    idx = d.argmin(axis=1)
    idx[d.min(axis=1) > within] = -1
    return idx


def mode_fractions(x: np.ndarray, n_modes: int = 8) -> np.ndarray:
    """Fraction of samples assigned to each mode (outside-all samples dropped)."""
    idx = nearest_mode(x, n_modes)
    return np.array([(idx == m).mean() for m in range(n_modes)])


def dump_point_samples(x: np.ndarray, path_base, n_modes: int = 8) -> None:
    """Sample dump: binary tensor plus a CSV of (x, y, mode_id) rows."""
    from pathlib import Path

    base = Path(path_base)
    np.save(base.with_suffix(".npy"), x)
    modes = nearest_mode(x, n_modes)
    with open(base.with_suffix(".csv"), "w") as fh:
        fh.write("x,y,mode_id\n")
        for (px, py), m in zip(x, modes):
            fh.write(f"{px!r},{py!r},{m}\n")


def grating_image(label: int, rng: np.random.Generator, size: int = 16, n_classes: int = 8) -> np.ndarray:
    """Oriented sinusoidal grating in [-1, 1]; orientation encodes the class."""
    theta = np.pi * label / n_classes
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    phase = rng.uniform(0.0, 2.0 * np.pi)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    img = np.sin(2.0 * np.pi * u / 5.0 + phase)
    img += 0.05 * rng.standard_normal((size, size))
    return np.clip(img, -1.0, 1.0)


def sample_gratings(
    n: int, rng: np.random.Generator, size: int = 16, n_classes: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, n_classes, size=n)
    imgs = np.stack([grating_image(int(l), rng, size, n_classes) for l in labels])
    return imgs[:, None, :, :], labels
