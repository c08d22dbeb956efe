"""
SNR-family objective measures used to score enhancement.

Infinite results are returned as ``math.inf`` / ``-math.inf`` and written as
``+inf`` / ``-inf`` in CSV output.
"""
from __future__ import annotations

import csv
import io
import math

import numpy as np

from .audio_io import AudioClip
from .dsp import FramingConfig, frame_count
from .errors import DegenerateInputError, InconsistencyError, RateMismatchError

__all__ = ["mse", "snr_db", "si_sdr_db", "segmental_snr_db", "format_db", "metric_rows_csv", "METRICS"]

SEG_FLOOR_DB = -10.0
SEG_CEIL_DB = 35.0
SILENCE_POWER = 1e-8


def _arrays(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(reference, AudioClip) and isinstance(estimate, AudioClip):
        if reference.sample_rate_hz != estimate.sample_rate_hz:
            raise RateMismatchError(
                f"reference is {reference.sample_rate_hz} Hz, estimate is {estimate.sample_rate_hz} Hz"
            )
    ref = np.ravel(reference.samples if isinstance(reference, AudioClip) else reference).astype(np.float64)
    est = np.ravel(estimate.samples if isinstance(estimate, AudioClip) else estimate).astype(np.float64)
    if ref.shape != est.shape:
        raise InconsistencyError(f"length mismatch: reference {ref.size}, estimate {est.size}")
    return ref, est


def _ratio_db(signal_energy: float, noise_energy: float) -> float:
    if noise_energy == 0.0:
        return math.inf
    if signal_energy == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal_energy / noise_energy)


def mse(reference, estimate) -> float:
    ref, est = _arrays(reference, estimate)
    return float(np.mean((ref - est) ** 2))


def snr_db(reference, estimate) -> float:
    """``10 log10(sum ref^2 / sum (ref - est)^2)``; ``inf`` when the estimate is exact."""
    ref, est = _arrays(reference, estimate)
    energy = float(np.dot(ref, ref))
    if energy == 0.0:
        raise DegenerateInputError("reference has zero power")
    err = ref - est
    return _ratio_db(energy, float(np.dot(err, err)))


def si_sdr_db(reference, estimate) -> float:
    """Scale-invariant SDR: SNR after projecting the estimate onto the reference."""
    ref, est = _arrays(reference, estimate)
    energy = float(np.dot(ref, ref))
    if energy == 0.0:
        raise DegenerateInputError("reference has zero power")
    target = (float(np.dot(est, ref)) / energy) * ref
    residual = est - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(residual, residual)))


def segmental_snr_db(reference, estimate, cfg: FramingConfig | None = None) -> float:
    """Mean per-frame SNR, each clamped to [-10, 35] dB; silent reference frames skipped."""
    cfg = cfg or FramingConfig()
    ref, est = _arrays(reference, estimate)
    count = frame_count(ref.size, cfg)
    if count == 0:
        raise DegenerateInputError("signal shorter than one frame")
    idx = np.arange(count)[:, None] * cfg.hop + np.arange(cfg.frame_len)
    ref_frames = ref[idx]
    err_frames = ref_frames - est[idx]
    sig = np.sum(ref_frames ** 2, axis=1)
    noise = np.sum(err_frames ** 2, axis=1)
    keep = sig / cfg.frame_len >= SILENCE_POWER
    if not np.any(keep):
        raise DegenerateInputError("every reference frame is silent")
    sig, noise = sig[keep], noise[keep]
    with np.errstate(divide="ignore"):
        per_frame = np.where(noise > 0, 10.0 * np.log10(sig / np.where(noise > 0, noise, 1.0)), np.inf)
    return float(np.mean(np.clip(per_frame, SEG_FLOOR_DB, SEG_CEIL_DB)))


METRICS = {
    "mse": mse,
    "snr_db": snr_db,
    "si_sdr_db": si_sdr_db,
    "segmental_snr_db": segmental_snr_db,
}


def format_db(value: float) -> str:
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return repr(float(value))


def metric_rows_csv(rows: list[tuple[str, float, str, str]], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(["metric", "value", "ref", "est"])
    for name, value, ref, est in rows:
        writer.writerow([name, format_db(value), ref, est])
    return buf.getvalue()
