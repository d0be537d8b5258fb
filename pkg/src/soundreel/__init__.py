"""soundreel: audio-reactive frame-sequence generation.

A temporally-aware audio encoder (mel segments -> conv features -> LSTM
-> temporal attention) aligned to a joint embedding space, plus a toy
denoising-diffusion sampler steered by audio semantic guidance.
"""

__version__ = "0.1.0"

from soundreel.backend import backend_name, set_backend

__all__ = ["backend_name", "set_backend", "__version__"]
