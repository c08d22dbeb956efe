"""
PCM-16 WAV reading/writing, down-mixing and integer-factor decimation.

Only little-endian RIFF/WAVE files with ``audio_format == 1`` and 16 bits
per sample are accepted. Unknown chunks are skipped on read.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UnsupportedFormatError, UnsupportedRateError

__all__ = [
    "AudioClip",
    "read_wav",
    "write_wav",
    "to_mono",
    "decimate",
    "anti_alias_taps",
]

PCM_SCALE = 32768.0
WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
KAISER_BETA = 8.6
TAPS_PER_FACTOR = 64


@dataclass(frozen=True)
class AudioClip:
    """Sample buffer plus its sampling rate.

    ``samples`` is 1-D for mono audio or ``(n_samples, n_channels)`` for
    multichannel audio prior to down-mixing.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim not in (1, 2):
            raise ValueError(f"samples must be 1-D or 2-D, got ndim={samples.ndim}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


def to_mono(clip: AudioClip) -> AudioClip:
    """Average two channels element-wise; mono input is returned unchanged."""
    if clip.samples.ndim == 1:
        return clip
    n_channels = clip.samples.shape[1]
    if n_channels == 1:
        return AudioClip(clip.samples[:, 0], clip.sample_rate_hz)
    if n_channels != 2:
        raise UnsupportedFormatError(f"expected 1 or 2 channels, got {n_channels}")
    mono = 0.5 * (clip.samples[:, 0] + clip.samples[:, 1])
    return AudioClip(mono, clip.sample_rate_hz)


def _parse_fmt(body: bytes) -> tuple[int, int, int]:
    if len(body) < 16:
        raise FormatError("fmt chunk shorter than 16 bytes")
    audio_format, channels, rate, _byte_rate, block_align, bits = struct.unpack(
        "<HHIIHH", body[:16]
    )
    if audio_format == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
        # sub-format GUID starts at offset 24; its first two bytes are the format tag
        audio_format = struct.unpack("<H", body[24:26])[0]
    if audio_format != WAVE_FORMAT_PCM:
        raise UnsupportedFormatError(f"audio_format {audio_format:#06x} is not PCM")
    if bits != 16:
        raise UnsupportedFormatError(f"{bits}-bit samples not supported, only 16-bit")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels not supported")
    if block_align != channels * 2:
        raise FormatError(f"block_align {block_align} inconsistent with {channels} channels")
    if rate == 0:
        raise FormatError("sample rate of 0")
    return channels, rate, bits


def read_wav(path: str | os.PathLike) -> AudioClip:
    """Read a PCM-16 WAV file as a mono clip with samples in [-1, 1)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            if fmt is None:
                raise FormatError(f"{path}: data chunk precedes fmt chunk")
            pcm = body
        # chunks are word aligned
        pos += 8 + size + (size & 1)
        if pcm is not None:
            break

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise FormatError(f"{path}: missing data chunk")
    channels, rate, _ = fmt
    usable = len(pcm) - len(pcm) % (2 * channels)
    ints = np.frombuffer(pcm[:usable], dtype="<i2")
    if ints.size == 0:
        raise FormatError(f"{path}: empty data chunk")
    samples = ints.astype(np.float64) / PCM_SCALE
    if channels == 2:
        samples = samples.reshape(-1, 2)
    return to_mono(AudioClip(samples, rate))


def _quantize(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(clipped * PCM_SCALE), -32768, 32767).astype("<i2")


def encode_wav(clip: AudioClip) -> bytes:
    """Serialize a clip as the bytes of a PCM-16 WAV file."""
    clip = to_mono(clip)
    payload = _quantize(clip.samples).tobytes()
    fmt = struct.pack(
        "<HHIIHH", WAVE_FORMAT_PCM, 1, clip.sample_rate_hz, clip.sample_rate_hz * 2, 2, 16
    )
    header = b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
    return (
        header
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the destination directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(clip: AudioClip, path: str | os.PathLike) -> None:
    """Write a mono 16-bit PCM file; amplitudes are clamped to [-1, 1] first."""
    atomic_write_bytes(path, encode_wav(clip))


def anti_alias_taps(factor: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass with cutoff at the decimated Nyquist rate.

    The filter has ``64 * factor + 1`` taps (odd, so the group delay is an
    integer number of samples) and unit DC gain.
    """
    n_taps = TAPS_PER_FACTOR * factor + 1
    cutoff = 0.5 / factor  # cycles per source sample
    n = np.arange(n_taps) - (n_taps - 1) / 2
    taps = 2 * cutoff * np.sinc(2 * cutoff * n) * np.kaiser(n_taps, KAISER_BETA)
    return taps / taps.sum()


def decimate(clip: AudioClip, factor: int) -> AudioClip:
    """Low-pass filter then keep every ``factor``-th sample.

    The output has ``ceil(N / factor)`` samples and is time aligned with the
    input (the filter delay is compensated).
    """
    if int(factor) != factor or factor < 1:
        raise UnsupportedRateError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if clip.sample_rate_hz % factor:
        raise UnsupportedRateError(
            f"{clip.sample_rate_hz} Hz is not divisible by decimation factor {factor}"
        )
    if factor == 1:
        return clip
    clip = to_mono(clip)
    taps = anti_alias_taps(factor)
    delay = (len(taps) - 1) // 2
    filtered = np.convolve(clip.samples, taps, mode="full")[delay:delay + len(clip)]
    return AudioClip(filtered[::factor], clip.sample_rate_hz // factor)


def resample_to(clip: AudioClip, rate_hz: int) -> AudioClip:
    """Down-mix, then decimate to ``rate_hz`` when the ratio is an integer."""
    clip = to_mono(clip)
    if clip.sample_rate_hz == rate_hz:
        return clip
    if clip.sample_rate_hz % rate_hz:
        raise UnsupportedRateError(
            f"cannot resample {clip.sample_rate_hz} Hz to {rate_hz} Hz: non-integer ratio"
        )
    return decimate(clip, clip.sample_rate_hz // rate_hz)
