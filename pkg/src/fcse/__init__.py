"""Fully convolutional, waveform-in waveform-out speech enhancement."""
from .audio_io import AudioClip, read_wav, write_wav
from .dsp import FramingConfig, NormStats, compute_norm_stats, frame_signal, mix_at_snr, overlap_add
from .estimator import FCNDenoiser, WaveformFramer
from .metrics import segmental_snr_db, si_sdr_db, snr_db
from .nn import ModelSpec, build_model, model53_spec, stack_spec
from .pipeline import Checkpoint, denoise, load_checkpoint, save_checkpoint
from .train import TrainConfig, finetune  # `train` stays under fcse.train so the submodule is not shadowed

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "read_wav", "write_wav",
    "FramingConfig", "NormStats", "compute_norm_stats", "frame_signal", "mix_at_snr", "overlap_add",
    "FCNDenoiser", "WaveformFramer",
    "snr_db", "si_sdr_db", "segmental_snr_db",
    "ModelSpec", "build_model", "model53_spec", "stack_spec",
    "Checkpoint", "denoise", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "finetune",
]
