"""
scikit-learn compatible wrappers.

:class:`WaveformFramer` exposes the pre/post-processing as a transformer and
:class:`FCNDenoiser` wraps training and enhancement behind ``fit`` /
``predict``, so both work with ``clone``, ``get_params`` and grid searches.
Waveforms are passed as a 1-D array, a list of 1-D arrays, or
:class:`~fcse.audio_io.AudioClip` objects.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .audio_io import AudioClip
from .dsp import FrameBatch, FramingConfig, compute_norm_stats, frame_signal, overlap_add
from .errors import InputError
from .metrics import snr_db
from .nn import build_model, kernel_len_from_ms, stack_spec
from .pipeline import Checkpoint, denoise
from .train import TrainConfig, train

__all__ = ["WaveformFramer", "FCNDenoiser", "check_waveforms", "check_frames"]


def check_waveforms(X, sample_rate_hz: int | None = None) -> tuple[list[np.ndarray], bool]:
    """Normalize waveform input to a list of finite float64 vectors.

    Returns the list and whether the caller passed a single waveform, so
    results can be returned in the same form.
    """
    single = isinstance(X, AudioClip) or (isinstance(X, np.ndarray) and X.ndim == 1)
    items = [X] if single else list(X)
    if not items:
        raise InputError("no waveforms given")
    out = []
    for item in items:
        if isinstance(item, AudioClip):
            if sample_rate_hz is not None and item.sample_rate_hz != sample_rate_hz:
                raise InputError(
                    f"clip is {item.sample_rate_hz} Hz, estimator expects {sample_rate_hz} Hz"
                )
            item = item.samples
        arr = check_array(item, ensure_2d=False, dtype=np.float64, input_name="waveform")
        if arr.ndim != 1:
            raise InputError(f"waveforms must be 1-D, got shape {arr.shape}")
        out.append(arr)
    return out, single


def check_frames(frames, frame_len: int) -> np.ndarray:
    frames = check_array(frames, dtype=np.float64, input_name="frames")
    if frames.shape[1] != frame_len:
        raise InputError(f"expected {frame_len} samples per frame, got {frames.shape[1]}")
    return frames


class WaveformFramer(TransformerMixin, BaseEstimator):
    """Frame, window and normalize waveforms; ``inverse_transform`` overlap-adds.

    ``fit`` learns the normalization mean and standard deviation from clean
    speech.
    """

    def __init__(self, frame_ms: float = 20.0, sample_rate_hz: int = 16000):
        self.frame_ms = frame_ms
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        waves, _ = check_waveforms(X, self.sample_rate_hz)
        self.framing_ = FramingConfig.from_ms(self.frame_ms, self.sample_rate_hz)
        self.stats_ = compute_norm_stats(np.concatenate(waves))
        self.n_features_in_ = self.framing_.frame_len
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        waves, _ = check_waveforms(X, self.sample_rate_hz)
        batches = [
            frame_signal(AudioClip(w, self.sample_rate_hz), self.framing_, self.stats_).frames
            for w in waves
        ]
        return np.concatenate(batches)

    def inverse_transform(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        frames = check_frames(X, self.framing_.frame_len)
        return overlap_add(FrameBatch(frames, self.framing_), self.stats_).samples


class FCNDenoiser(RegressorMixin, BaseEstimator):
    """Fully convolutional waveform denoiser.

    ``hidden_layers`` lists ``(filters, kernel_ms)`` per hidden layer; each
    hidden layer is conv -> batchnorm -> activation. ``predict`` returns the
    enhanced waveform, which is ``2 * hop`` samples shorter than its input
    (the first and last hop are trimmed).
    """

    def __init__(
        self,
        hidden_layers=((12, 5.0), (25, 5.0), (50, 5.0), (100, 5.0), (200, 5.0)),
        output_kernel_ms: float = 5.0,
        activation: str = "prelu",
        frame_ms: float = 20.0,
        sample_rate_hz: int = 16000,
        learning_rate: float = 1e-3,
        batch_size: int = 64,
        max_epochs: int = 100,
        patience: int = 20,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.hidden_layers = hidden_layers
        self.output_kernel_ms = output_kernel_ms
        self.activation = activation
        self.frame_ms = frame_ms
        self.sample_rate_hz = sample_rate_hz
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_spec(self, frame_len: int):
        rate = self.sample_rate_hz
        hidden = [(int(f), kernel_len_from_ms(ms, rate)) for f, ms in self.hidden_layers]
        return stack_spec(frame_len, hidden, kernel_len_from_ms(self.output_kernel_ms, rate), self.activation)

    def _frame_pairs(self, X, y):
        noisy, single_x = check_waveforms(X, self.sample_rate_hz)
        clean, single_y = check_waveforms(y, self.sample_rate_hz)
        if len(noisy) != len(clean) or any(a.shape != b.shape for a, b in zip(noisy, clean)):
            raise InputError("noisy and clean waveforms must pair up with equal lengths")
        rate = self.sample_rate_hz
        xs = [frame_signal(AudioClip(a, rate), self.framing_, self.stats_).frames for a in noisy]
        ys = [frame_signal(AudioClip(b, rate), self.framing_, self.stats_).frames for b in clean]
        return np.concatenate(xs).astype(np.float32), np.concatenate(ys).astype(np.float32)

    def fit(self, X, y, eval_set=None):
        """Train on noisy waveforms ``X`` with clean targets ``y``.

        ``eval_set=(X_val, y_val)`` supplies the early-stopping data; without
        it the last ``validation_fraction`` of the frames is held out.
        """
        clean, _ = check_waveforms(y, self.sample_rate_hz)
        self.framing_ = FramingConfig.from_ms(self.frame_ms, self.sample_rate_hz)
        self.stats_ = compute_norm_stats(np.concatenate(clean))
        x_frames, y_frames = self._frame_pairs(X, y)
        if eval_set is not None:
            xv, yv = self._frame_pairs(*eval_set)
        else:
            if not 0 < self.validation_fraction < 1:
                raise InputError("validation_fraction must lie in (0, 1) when no eval_set is given")
            n_val = max(1, int(math.ceil(len(x_frames) * self.validation_fraction)))
            if n_val >= len(x_frames):
                raise InputError("not enough frames to hold out a validation split")
            # contiguous tail split: overlapping neighbours would leak across a random split
            xv, yv = x_frames[-n_val:], y_frames[-n_val:]
            x_frames, y_frames = x_frames[:-n_val], y_frames[:-n_val]

        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            shuffle_seed=self.random_state,
        )
        model = build_model(self._model_spec(self.framing_.frame_len), seed=self.random_state)
        self.model_, self.report_ = train(model, (x_frames, y_frames), (xv, yv), cfg)
        self.n_features_in_ = self.framing_.frame_len
        return self

    def to_checkpoint(self, snr_db_tag: float = math.nan) -> Checkpoint:
        check_is_fitted(self, "model_")
        return Checkpoint(self.model_, self.stats_, self.framing_, snr_db_tag, self.random_state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "FCNDenoiser":
        """Rebuild a fitted estimator around a loaded checkpoint."""
        spec = ckpt.model.spec
        rate = ckpt.framing.sample_rate_hz
        convs = [layer for layer in spec.layers if layer.kind == "conv1d"]
        acts = [layer.kind for layer in spec.layers if layer.kind in ("prelu", "relu")]
        est = cls(
            hidden_layers=tuple((c.out_channels, c.kernel_len * 1000 / rate) for c in convs[:-1]),
            output_kernel_ms=convs[-1].kernel_len * 1000 / rate,
            activation=acts[0] if acts else "prelu",
            frame_ms=ckpt.framing.frame_len * 1000 / rate,
            sample_rate_hz=rate,
            random_state=ckpt.seed,
        )
        est.framing_ = ckpt.framing
        est.stats_ = ckpt.stats
        est.model_ = ckpt.model
        est.n_features_in_ = ckpt.framing.frame_len
        return est

    def predict(self, X):
        check_is_fitted(self, "model_")
        waves, single = check_waveforms(X, self.sample_rate_hz)
        ckpt = self.to_checkpoint()
        out = [denoise(ckpt, AudioClip(w, self.sample_rate_hz)).samples for w in waves]
        return out[0] if single else out

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y, sample_weight=None) -> float:
        """Mean SNR (dB) of the enhanced waveforms against the aligned clean targets."""
        enhanced = self.predict(X)
        clean, single = check_waveforms(y, self.sample_rate_hz)
        if single:
            enhanced = [enhanced]
        hop = self.framing_.hop
        scores = [snr_db(c[hop:hop + len(e)], e) for c, e in zip(clean, enhanced)]
        return float(np.average(scores, weights=sample_weight))
