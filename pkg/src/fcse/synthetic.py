"""
Synthetic stand-ins for speech and babble, for desk-scale experiments.

"Speech" is a handful of harmonics of a slowly wandering fundamental, each
with its own syllable-rate amplitude envelope. "Babble" is a sum of
band-limited noise streams, each gated by a random slow envelope.
"""
from __future__ import annotations

import numpy as np

from .audio_io import AudioClip

__all__ = ["synthetic_speech", "synthetic_babble"]


def synthetic_speech(
    duration_s: float,
    sample_rate_hz: int = 16000,
    f0_hz: float = 150.0,
    n_harmonics: int = 4,
    seed: int = 0,
    peak: float = 0.5,
) -> AudioClip:
    if not 3 <= n_harmonics <= 5:
        raise ValueError("n_harmonics must be between 3 and 5")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0_hz * vibrato) / sample_rate_hz
    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        rate = rng.uniform(2.0, 6.0)
        env = 0.5 * (1 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 2
        x += (rng.uniform(0.6, 1.0) / h) * env * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x *= peak / np.max(np.abs(x))
    return AudioClip(x, sample_rate_hz)


def _band_noise(rng, n, sample_rate_hz, lo_hz, hi_hz):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sample_rate_hz)
    # raised-cosine band edges, 1/f tilt inside the band
    width = 0.25 * (hi_hz - lo_hz)
    gain = np.clip((freqs - lo_hz) / width + 0.5, 0, 1) * np.clip((hi_hz - freqs) / width + 0.5, 0, 1)
    gain = np.sin(0.5 * np.pi * gain) ** 2 / np.sqrt(np.maximum(freqs, lo_hz))
    return np.fft.irfft(spec * gain, n)


def synthetic_babble(
    duration_s: float,
    sample_rate_hz: int = 16000,
    n_talkers: int = 6,
    seed: int = 0,
    band_hz: tuple[float, float] = (100.0, 4000.0),
    peak: float = 0.5,
) -> AudioClip:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    x = np.zeros(n)
    for _ in range(n_talkers):
        env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
        stream = _band_noise(rng, n, sample_rate_hz, *band_hz)
        x += env * stream / np.std(stream)
    x *= peak / np.max(np.abs(x))
    return AudioClip(x, sample_rate_hz)
