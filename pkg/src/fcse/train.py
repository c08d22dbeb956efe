"""
MSE loss, Adam, the early-stopped training loop and fine-tuning.

Training pairs are ``(noisy, clean)`` frame matrices that went through the
same windowing and normalization. The loop keeps a snapshot of the model
with the lowest validation MSE and restores it when patience runs out.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .dsp import FrameBatch
from .errors import InputError, NumericError, ShapeError
from .nn import Model, backward, forward

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainReport",
    "EarlyStopping",
    "mse_loss",
    "adam_step",
    "evaluate_mse",
    "train",
    "finetune",
    "LOG_HEADER",
]

LOG_HEADER = ("epoch", "train_mse", "val_mse", "best")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 1000
    patience: int = 20
    shuffle_seed: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for train-mode batchnorm")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    initial_train_mse: float = math.nan
    initial_val_mse: float = math.nan

    @property
    def epochs_run(self) -> int:
        return len(self.val_mse)

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch] if self.best_epoch >= 0 else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for epoch, (tr, va) in enumerate(zip(self.train_mse, self.val_mse)):
            writer.writerow([epoch, repr(tr), repr(va), int(epoch == self.best_epoch)])
        return buf.getvalue()


class EarlyStopping:
    """Track the best validation loss; ``step`` returns True when patience is exhausted."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.epoch = -1

    def step(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target.astype(pred.dtype, copy=False)
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, diff * (2.0 / diff.size)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    A non-finite gradient aborts the step before anything is modified.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state must have equal lengths")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam step aborted")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)


def _frames(batch: FrameBatch | np.ndarray) -> np.ndarray:
    return batch.frames if isinstance(batch, FrameBatch) else np.asarray(batch)


def _check_pairs(pairs, role: str) -> tuple[np.ndarray, np.ndarray]:
    noisy, clean = (_frames(b) for b in pairs)
    if noisy.shape != clean.shape:
        raise InputError(f"{role} noisy/clean frame shapes differ: {noisy.shape} vs {clean.shape}")
    if noisy.ndim != 2 or noisy.shape[0] == 0:
        raise InputError(f"{role} set is empty")
    return noisy, clean


def evaluate_mse(model: Model, noisy: np.ndarray, clean: np.ndarray, batch_size: int = 256) -> float:
    """Infer-mode MSE over every frame, accumulated in float64."""
    total = 0.0
    for start in range(0, len(noisy), batch_size):
        pred, _ = forward(model, noisy[start:start + batch_size], "infer")
        diff = pred.astype(np.float64) - clean[start:start + batch_size]
        total += float(np.sum(diff * diff))
    return total / noisy.size


def _run_epoch(
    model: Model,
    noisy: np.ndarray,
    clean: np.ndarray,
    state: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    order = rng.permutation(len(noisy))
    bs = min(cfg.batch_size, len(noisy))
    losses = []
    for start in range(0, len(order), bs):
        idx = order[start:start + bs]
        if len(idx) < 2:
            # a lone trailing frame cannot form train-mode batch statistics
            continue
        x = noisy[idx]
        pred, tape = forward(model, x, "train")
        loss, grad = mse_loss(pred, clean[idx])
        grads = backward(model, tape, grad)
        names = list(model.trainable())
        adam_step(
            [buf for _, _, buf in names],
            [grads.params[i][n] for i, n, _ in names],
            state,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.eps_adam,
        )
        model.mark_updated()
        losses.append(loss * len(idx))
    return float(np.sum(losses) / len(noisy)) if losses else math.nan


def _fresh_state(model: Model) -> AdamState:
    return AdamState.zeros_like([buf for _, _, buf in model.trainable()])


def train(
    model: Model,
    train_pairs,
    val_pairs,
    cfg: TrainConfig | None = None,
    log_stream: TextIO | None = None,
    validation_hook: Callable[[int, Model], float] | None = None,
) -> tuple[Model, TrainReport]:
    """Train with shuffled mini-batches and early stopping on validation MSE.

    ``train_pairs`` and ``val_pairs`` are ``(noisy, clean)`` tuples of
    :class:`FrameBatch` or frame matrices. The model is updated in place and,
    on return, holds the parameters of the best validation epoch.
    ``validation_hook(epoch, model)`` replaces the validation measurement,
    which is how the stopping logic is exercised with injected losses.
    """
    cfg = cfg or TrainConfig()
    noisy, clean = _check_pairs(train_pairs, "training")
    val_noisy, val_clean = _check_pairs(val_pairs, "validation")
    rng = np.random.default_rng(cfg.shuffle_seed)
    state = _fresh_state(model)
    report = TrainReport()
    report.initial_train_mse = evaluate_mse(model, noisy, clean, cfg.eval_batch_size)
    report.initial_val_mse = evaluate_mse(model, val_noisy, val_clean, cfg.eval_batch_size)

    writer = None
    if log_stream is not None:
        writer = csv.writer(log_stream, lineterminator="\n")
        writer.writerow(LOG_HEADER)

    stopper = EarlyStopping(cfg.patience)
    best = model.copy()
    report.stop_reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        train_mse = _run_epoch(model, noisy, clean, state, cfg, rng)
        if validation_hook is not None:
            val_mse = float(validation_hook(epoch, model))
        else:
            val_mse = evaluate_mse(model, val_noisy, val_clean, cfg.eval_batch_size)
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        exhausted = stopper.step(val_mse)
        if stopper.improved:
            best = model.copy()
        if writer is not None:
            writer.writerow([epoch, repr(train_mse), repr(val_mse), int(stopper.improved)])
            log_stream.flush()
        log.info("epoch %d train_mse=%.6g val_mse=%.6g%s", epoch, train_mse, val_mse,
                 " *" if stopper.improved else "")
        if exhausted:
            report.stop_reason = "patience"
            break
    if cfg.max_epochs == 0:
        report.stop_reason = "no_epochs"
    report.best_epoch = stopper.best_epoch
    model.load_state(best)
    return model, report


def finetune(
    model: Model,
    new_speaker_pairs,
    epochs: int = 5,
    cfg: TrainConfig | None = None,
) -> Model:
    """Run exactly ``epochs`` Adam epochs from fresh optimizer state, no early stopping."""
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    cfg = cfg or TrainConfig()
    noisy, clean = _check_pairs(new_speaker_pairs, "fine-tuning")
    if epochs == 0:
        return model
    rng = np.random.default_rng(cfg.shuffle_seed)
    state = _fresh_state(model)
    for epoch in range(epochs):
        loss = _run_epoch(model, noisy, clean, state, cfg, rng)
        log.info("finetune epoch %d train_mse=%.6g", epoch, loss)
    return model
