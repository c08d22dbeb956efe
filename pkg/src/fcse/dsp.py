"""
Signal-level pre- and post-processing around the network.

Pre-processing cuts a waveform into 50 %-overlapping frames, multiplies each
frame by a periodic Hann window and normalizes it with two scalars (mean and
standard deviation of the clean training speech). Post-processing undoes the
normalization and overlap-adds the frames; because periodic Hann windows at
half-frame hop sum to one, no division by the window is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioClip, to_mono
from .errors import DegenerateInputError, InconsistencyError, RateMismatchError, TooShortError

__all__ = [
    "FramingConfig",
    "NormStats",
    "FrameBatch",
    "mix_at_snr",
    "hann_window",
    "frame_signal",
    "frame_for_inference",
    "compute_norm_stats",
    "overlap_add",
    "frame_count",
]


@dataclass(frozen=True)
class FramingConfig:
    frame_len: int = 320
    hop: int = 160
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ValueError(f"frame_len must be even and positive, got {self.frame_len}")
        if self.hop * 2 != self.frame_len:
            raise ValueError(f"hop must be frame_len / 2, got hop={self.hop} frame_len={self.frame_len}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @classmethod
    def from_ms(cls, frame_ms: float = 20.0, sample_rate_hz: int = 16000) -> "FramingConfig":
        frame_len = int(round(frame_ms * sample_rate_hz / 1000))
        return cls(frame_len, frame_len // 2, sample_rate_hz)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise DegenerateInputError("normalization stats must be finite")
        if self.std <= 0:
            raise DegenerateInputError(f"normalization std must be positive, got {self.std}")


IDENTITY_STATS = NormStats(0.0, 1.0)


@dataclass
class FrameBatch:
    """Frames stacked as rows of a ``(count, frame_len)`` matrix."""

    frames: np.ndarray
    config: FramingConfig
    normalized: bool = True
    n_samples: int | None = field(default=None, compare=False)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[1] != self.config.frame_len:
            raise InconsistencyError(
                f"frames shape {frames.shape} does not match frame_len {self.config.frame_len}"
            )
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]


def frame_count(n_samples: int, cfg: FramingConfig) -> int:
    if n_samples < cfg.frame_len:
        return 0
    return (n_samples - cfg.frame_len) // cfg.hop + 1


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def mix_at_snr(
    clean: AudioClip,
    noise: AudioClip,
    snr_db: float,
    seed: int | None = None,
) -> tuple[AudioClip, float]:
    """Add ``noise`` to ``clean`` scaled so the mixture has the requested SNR.

    Noise is truncated to the clean length, from its start unless ``seed`` is
    given, in which case a reproducible random offset is used. Returns the
    mixture and the applied noise scale. ``snr_db = inf`` yields scale 0.
    """
    clean, noise = to_mono(clean), to_mono(noise)
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise RateMismatchError(
            f"clean is {clean.sample_rate_hz} Hz but noise is {noise.sample_rate_hz} Hz"
        )
    n = len(clean)
    if len(noise) < n:
        raise InconsistencyError(f"noise has {len(noise)} samples, need at least {n}")
    offset = 0
    if seed is not None and len(noise) > n:
        offset = int(np.random.default_rng(seed).integers(0, len(noise) - n + 1))
    noise_seg = noise.samples[offset:offset + n]

    p_clean = _power(clean.samples)
    p_noise = _power(noise_seg)
    if p_clean == 0.0:
        raise DegenerateInputError("clean signal has zero power")
    if p_noise == 0.0:
        raise DegenerateInputError("noise signal has zero power")
    if math.isinf(snr_db) and snr_db > 0:
        scale = 0.0
    else:
        scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(clean.samples + scale * noise_seg, clean.sample_rate_hz), scale


def hann_window(frame_len: int) -> np.ndarray:
    """Periodic Hann window, ``0.5 * (1 - cos(2 pi n / N))``."""
    if frame_len < 2 or frame_len % 2:
        raise ValueError(f"frame_len must be even and >= 2, got {frame_len}")
    n = np.arange(frame_len)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / frame_len))


def compute_norm_stats(clean_training_speech: AudioClip | np.ndarray) -> NormStats:
    """Mean and population standard deviation over every sample."""
    x = clean_training_speech.samples if isinstance(clean_training_speech, AudioClip) \
        else np.asarray(clean_training_speech, dtype=np.float64)
    x = np.ravel(x).astype(np.float64)
    if x.size == 0:
        raise DegenerateInputError("cannot compute stats of an empty signal")
    mean = float(np.mean(x))
    std = float(np.sqrt(np.mean(np.square(x - mean))))
    if std == 0.0:
        raise DegenerateInputError("clean training speech has zero variance")
    return NormStats(mean, std)


def _frames_view(x: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    count = frame_count(len(x), cfg)
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)
    return windows[::cfg.hop][:count]


def frame_signal(clip: AudioClip, cfg: FramingConfig, stats: NormStats) -> FrameBatch:
    """Frame, window and normalize a clip; trailing samples that do not fill a frame are dropped."""
    clip = to_mono(clip)
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise RateMismatchError(
            f"clip is {clip.sample_rate_hz} Hz, framing expects {cfg.sample_rate_hz} Hz"
        )
    if len(clip) < cfg.frame_len:
        raise TooShortError(f"clip has {len(clip)} samples, shorter than one frame ({cfg.frame_len})")
    frames = _frames_view(clip.samples, cfg) * hann_window(cfg.frame_len)
    frames = (frames - stats.mean) / stats.std
    return FrameBatch(frames, cfg, normalized=True, n_samples=len(clip))


def frame_for_inference(clip: AudioClip, cfg: FramingConfig, stats: NormStats) -> FrameBatch:
    """Zero-pad to a whole number of hops (and at least two frames), then frame.

    ``FrameBatch.n_samples`` keeps the unpadded length so the pad can be
    trimmed after reconstruction.
    """
    clip = to_mono(clip)
    if len(clip) < cfg.frame_len:
        raise TooShortError(f"clip has {len(clip)} samples, shorter than one frame ({cfg.frame_len})")
    n = len(clip)
    padded_len = max(cfg.frame_len + cfg.hop, cfg.hop * math.ceil(n / cfg.hop))
    padded = np.zeros(padded_len)
    padded[:n] = clip.samples
    batch = frame_signal(AudioClip(padded, clip.sample_rate_hz), cfg, stats)
    batch.n_samples = n
    return batch


def overlap_add(batch: FrameBatch, stats: NormStats, trim: bool = True) -> AudioClip:
    """Denormalize frames and sum them at hop offsets.

    With ``trim`` (the default) the first and last ``hop`` samples, where
    fewer than two windows overlap, are removed: ``count`` frames give
    ``(count - 1) * hop`` samples covering source indices ``[hop, count * hop)``.
    """
    cfg = batch.config
    if not batch.normalized:
        raise InconsistencyError("overlap_add expects normalized frames")
    frames = np.asarray(batch.frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != cfg.frame_len:
        raise InconsistencyError(
            f"frame shape {frames.shape} inconsistent with frame_len {cfg.frame_len}"
        )
    count = frames.shape[0]
    if count < 2:
        raise TooShortError("overlap_add needs at least two frames")
    frames = frames * stats.std + stats.mean

    hop = cfg.hop
    # frame_len == 2 * hop: first halves land on [k*hop, (k+1)*hop), second halves one hop later
    out = np.zeros((count + 1) * hop)
    out[: count * hop] += frames[:, :hop].reshape(-1)
    out[hop:] += frames[:, hop:].reshape(-1)
    if trim:
        out = out[hop:-hop]
    return AudioClip(out, cfg.sample_rate_hz)
