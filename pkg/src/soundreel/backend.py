"""Numba/NumPy kernel lane selection.

The numeric inner loops that dominate runtime (direct 3x3 convolution,
LSTM sequence recursion, the fused 2D denoiser forward) exist twice: a
numba ``@njit`` version in ``_kernels_numba`` and a pure-numpy version in
``_kernels_numpy``. The active lane is chosen once per call through
:func:`kernels`, so tests and benchmarks can flip lanes at runtime.

Selection order:
  1. ``set_backend("numba" | "numpy")`` if called (wins over everything),
  2. the ``SOUNDREEL_NUMBA`` environment variable ("0"/"false"/"off"
     disables the jit lane, "1"/"true"/"on" requires it),
  3. default: numba if it imports, numpy otherwise.
"""

from __future__ import annotations

import os

_ENV_VAR = "SOUNDREEL_NUMBA"
_FALSY = {"0", "false", "off", "no"}
_TRUTHY = {"1", "true", "on", "yes"}

_override: str | None = None


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def backend_name() -> str:
    """Name of the active kernel lane, "numba" or "numpy"."""
    if _override is not None:
        return _override
    env = os.environ.get(_ENV_VAR, "").strip().lower()
    if env in _FALSY:
        return "numpy"
    if env in _TRUTHY:
        if not _numba_importable():
            raise RuntimeError(f"{_ENV_VAR}={env} but numba is not importable")
        return "numba"
    return "numba" if _numba_importable() else "numpy"


def set_backend(name: str | None) -> None:
    """Force a lane ("numba"/"numpy") or restore env-based selection (None)."""
    global _override
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _numba_importable():
        raise RuntimeError("numba backend requested but numba is not importable")
    _override = name


def kernels():
    """Return the active kernel module."""
    if backend_name() == "numba":
        from soundreel import _kernels_numba

        return _kernels_numba
    from soundreel import _kernels_numpy

    return _kernels_numpy
