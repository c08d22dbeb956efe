"""
End-to-end glue: dataset manifests, training-pair preparation, checkpoint
persistence and the full denoising path for arbitrary-length audio.

Checkpoint layout (little-endian)::

    b"FCSE" u32 version
    u32 frame_len, u32 n_layers, n_layers * (u32 kind, u32 in, u32 out, u32 kernel)
    f64 bn_eps, f64 bn_momentum
    f64 norm mean, f64 norm std
    u32 framing frame_len, u32 hop, u32 sample_rate
    f64 training SNR tag (NaN when unknown), u64 seed
    u64 n_values, n_values * f32 parameter payload (layer order, fixed key order)
    u64 FNV-1a hash of every preceding byte
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .audio_io import AudioClip, atomic_write_bytes, read_wav, resample_to
from .dsp import (
    FrameBatch,
    FramingConfig,
    NormStats,
    compute_norm_stats,
    frame_for_inference,
    frame_signal,
    mix_at_snr,
    overlap_add,
)
from .errors import CheckpointError, InputError, RateMismatchError, TooShortError
from .metrics import si_sdr_db, snr_db
from .nn import LayerSpec, Model, ModelSpec, forward

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "load_manifest",
    "load_clips",
    "prepare_pairs",
    "prepare_pairs_from_clips",
    "denoise",
    "save_checkpoint",
    "load_checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
    "fnv1a_64",
    "evaluate_enhancement",
    "FORMAT_VERSION",
]

MAGIC = b"FCSE"
FORMAT_VERSION = 1
KIND_CODES = {"conv1d": 0, "batchnorm": 1, "prelu": 2, "relu": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
BUFFER_ORDER = {
    "conv1d": ("weight", "bias"),
    "batchnorm": ("gamma", "beta", "running_mean", "running_var"),
    "prelu": ("alpha",),
    "relu": (),
}
DENOISE_BATCH = 128

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


@numba.njit(cache=True)
def _fnv1a(data, h, prime):
    for b in data:
        h ^= np.uint64(b)
        h *= prime
    return h


def fnv1a_64(data: bytes) -> int:
    arr = np.frombuffer(data, dtype=np.uint8)
    return int(_fnv1a(arr, FNV_OFFSET, FNV_PRIME))


@dataclass
class Checkpoint:
    model: Model
    stats: NormStats
    framing: FramingConfig
    snr_db: float = math.nan
    seed: int = 0
    version: int = FORMAT_VERSION

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    spec = model.spec
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<II", spec.frame_len, len(spec.layers)))
    for layer in spec.layers:
        parts.append(struct.pack(
            "<IIII", KIND_CODES[layer.kind], layer.in_channels, layer.out_channels, layer.kernel_len
        ))
    parts.append(struct.pack("<dd", model.bn_eps, model.bn_momentum))
    parts.append(struct.pack("<dd", ckpt.stats.mean, ckpt.stats.std))
    fr = ckpt.framing
    parts.append(struct.pack("<III", fr.frame_len, fr.hop, fr.sample_rate_hz))
    parts.append(struct.pack("<dQ", ckpt.snr_db, ckpt.seed))
    buffers = [
        np.ascontiguousarray(p[name], dtype="<f4").ravel()
        for layer, p in zip(spec.layers, model.params)
        for name in BUFFER_ORDER[layer.kind]
    ]
    payload = np.concatenate(buffers) if buffers else np.zeros(0, "<f4")
    parts.append(struct.pack("<Q", payload.size))
    parts.append(payload.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a_64(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("checkpoint truncated")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    body, (stored_hash,) = data[:-8], struct.unpack("<Q", data[-8:])
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    if fnv1a_64(body) != stored_hash:
        raise CheckpointError("integrity hash mismatch: checkpoint is corrupt")

    r = _Reader(body)
    r.pos = 8
    frame_len, n_layers = r.take("<II")
    layers = []
    for _ in range(n_layers):
        code, cin, cout, k = r.take("<IIII")
        if code not in KIND_NAMES:
            raise CheckpointError(f"unknown layer kind code {code}")
        layers.append(LayerSpec(KIND_NAMES[code], cin, cout, k))
    spec = ModelSpec(frame_len, tuple(layers))
    try:
        spec.validate()
    except Exception as exc:
        raise CheckpointError(f"invalid model spec in checkpoint: {exc}") from exc
    bn_eps, bn_momentum = r.take("<dd")
    mean, std = r.take("<dd")
    fl, hop, rate = r.take("<III")
    snr_tag, seed = r.take("<dQ")
    (n_values,) = r.take("<Q")
    if r.pos + 4 * n_values != len(body):
        raise CheckpointError("payload length does not match header")
    payload = np.frombuffer(body, dtype="<f4", count=n_values, offset=r.pos).astype(np.float32)

    params = []
    offset = 0
    for layer in layers:
        shapes = {
            "conv1d": {"weight": (layer.out_channels, layer.in_channels, layer.kernel_len),
                       "bias": (layer.out_channels,)},
            "batchnorm": {k: (layer.channels,) for k in BUFFER_ORDER["batchnorm"]},
            "prelu": {"alpha": (frame_len, layer.channels)},
            "relu": {},
        }[layer.kind]
        p = {}
        for name in BUFFER_ORDER[layer.kind]:
            size = int(np.prod(shapes[name]))
            p[name] = payload[offset:offset + size].reshape(shapes[name]).copy()
            offset += size
        params.append(p)
    if offset != n_values:
        raise CheckpointError("payload size does not match the model spec")
    try:
        stats = NormStats(mean, std)
        framing = FramingConfig(fl, hop, rate)
    except Exception as exc:
        raise CheckpointError(f"invalid configuration in checkpoint: {exc}") from exc
    model = Model(spec, params, bn_eps, bn_momentum, seed)
    return Checkpoint(model, stats, framing, snr_tag, seed, version)


def save_checkpoint(
    model: Model,
    stats: NormStats,
    cfg: FramingConfig,
    path: str | os.PathLike,
    snr_db: float = math.nan,
    seed: int | None = None,
) -> None:
    ckpt = Checkpoint(model, stats, cfg, snr_db, model.seed if seed is None else seed)
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)


@dataclass
class DatasetManifest:
    """Plain-text ``key = value`` description of one data split."""

    clean: list[str]
    noise: list[str]
    snr_db: float = 5.0
    role: str = "train"
    noise_seed: int | None = None
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.role not in ("train", "val", "test"):
            raise InputError(f"manifest role must be train, val or test, got {self.role!r}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InputError(f"manifest snr_db must be finite or +inf, got {self.snr_db}")

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def check_files(self) -> None:
        for p in self.clean + self.noise:
            if not os.path.isfile(self.resolve(p)):
                raise InputError(f"manifest references missing file {self.resolve(p)}")


def _split_paths(value: str) -> list[str]:
    return [p.strip() for p in value.split(",") if p.strip()]


def parse_manifest(text: str, base_dir: str = ".") -> DatasetManifest:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"manifest line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        fields[key] = value
    unknown = set(fields) - {"clean", "noise", "snr_db", "role", "noise_seed"}
    if unknown:
        raise InputError(f"unknown manifest keys: {sorted(unknown)}")
    if "clean" not in fields or "noise" not in fields:
        raise InputError("manifest needs both 'clean' and 'noise' entries")
    try:
        snr = float(fields.get("snr_db", "5"))
        seed = int(fields["noise_seed"]) if "noise_seed" in fields else None
    except ValueError as exc:
        raise InputError(f"bad manifest value: {exc}") from exc
    return DatasetManifest(
        clean=_split_paths(fields["clean"]),
        noise=_split_paths(fields["noise"]),
        snr_db=snr,
        role=fields.get("role", "train"),
        noise_seed=seed,
        base_dir=base_dir,
    )


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    manifest = parse_manifest(path.read_text(), str(path.parent))
    manifest.check_files()
    return manifest


def _concat(paths: list[str], manifest: DatasetManifest, rate: int) -> AudioClip:
    clips = [resample_to(read_wav(manifest.resolve(p)), rate) for p in paths]
    return AudioClip(np.concatenate([c.samples for c in clips]), rate)


def load_clips(manifest: DatasetManifest, rate_hz: int) -> tuple[AudioClip, AudioClip]:
    """Read, down-mix and decimate the clean and noise recordings of a manifest."""
    manifest.check_files()
    return _concat(manifest.clean, manifest, rate_hz), _concat(manifest.noise, manifest, rate_hz)


def prepare_pairs_from_clips(
    clean: AudioClip,
    noise: AudioClip,
    snr_db: float,
    cfg: FramingConfig,
    stats: NormStats,
    noise_seed: int | None = None,
) -> tuple[FrameBatch, FrameBatch]:
    """Mix at ``snr_db`` and frame mixture and clean target identically."""
    mixture, _ = mix_at_snr(clean, noise, snr_db, seed=noise_seed)
    return frame_signal(mixture, cfg, stats), frame_signal(clean, cfg, stats)


def prepare_pairs(
    manifest: DatasetManifest, cfg: FramingConfig, stats: NormStats
) -> tuple[FrameBatch, FrameBatch]:
    clean, noise = load_clips(manifest, cfg.sample_rate_hz)
    return prepare_pairs_from_clips(clean, noise, manifest.snr_db, cfg, stats, manifest.noise_seed)


def _enhance_frames(model: Model, frames: np.ndarray, batch_size: int) -> np.ndarray:
    out = np.empty(frames.shape, dtype=np.float64)
    for start in range(0, len(frames), batch_size):
        y, _ = forward(model, frames[start:start + batch_size], "infer")
        out[start:start + batch_size] = y
    return out


def denoise(checkpoint: Checkpoint, noisy: AudioClip, batch_size: int = DENOISE_BATCH) -> AudioClip:
    """Enhance a clip of any length of at least one frame.

    The output covers input samples ``[hop, len - hop)``: the first and last
    hop, where fewer than two windows overlap, are trimmed.
    """
    cfg = checkpoint.framing
    if noisy.sample_rate_hz != cfg.sample_rate_hz:
        raise RateMismatchError(
            f"input is {noisy.sample_rate_hz} Hz, checkpoint expects {cfg.sample_rate_hz} Hz"
        )
    if len(noisy) < cfg.frame_len:
        raise TooShortError(f"input has {len(noisy)} samples, need at least {cfg.frame_len}")
    batch = frame_for_inference(noisy, cfg, checkpoint.stats)
    enhanced = FrameBatch(_enhance_frames(checkpoint.model, batch.frames, batch_size), cfg)
    out = overlap_add(enhanced, checkpoint.stats).samples
    return AudioClip(out[: len(noisy) - 2 * cfg.hop], cfg.sample_rate_hz)


def evaluate_enhancement(
    checkpoint: Checkpoint, clean: AudioClip, noise: AudioClip, snr_db_value: float,
    noise_seed: int | None = None,
) -> dict[str, float]:
    """Mix, denoise and score against the clean reference over the same samples."""
    mixture, _ = mix_at_snr(clean, noise, snr_db_value, seed=noise_seed)
    enhanced = denoise(checkpoint, mixture)
    hop = checkpoint.framing.hop
    ref = clean.samples[hop:hop + len(enhanced)]
    noisy = mixture.samples[hop:hop + len(enhanced)]
    in_snr = snr_db(ref, noisy)
    out_snr = snr_db(ref, enhanced.samples)
    return {
        "snr_in_db": in_snr,
        "snr_out_db": out_snr,
        "snr_gain_db": out_snr - in_snr,
        "si_sdr_in_db": si_sdr_db(ref, noisy),
        "si_sdr_out_db": si_sdr_db(ref, enhanced.samples),
    }


def norm_stats_for(manifest: DatasetManifest, cfg: FramingConfig) -> NormStats:
    clean, _ = load_clips(manifest, cfg.sample_rate_hz)
    return compute_norm_stats(clean)
