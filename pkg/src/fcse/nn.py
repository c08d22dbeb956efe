"""
Fully convolutional network on raw waveform frames, written against numpy.

Activations use a ``(batch, frame_len, channels)`` layout. Every convolution
is stride 1, undilated and "same" padded, so each layer maps ``frame_len``
samples to ``frame_len`` samples. Hidden layers are conv -> batchnorm ->
PReLU (or ReLU); the output layer is a single-filter conv with no activation.

The forward pass in ``mode="train"`` records a :class:`Tape` that
:func:`backward` consumes to produce gradients for every trainable buffer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateBatchError, ShapeError, SpecError, TapeError

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "Model",
    "Tape",
    "Gradients",
    "build_model",
    "model53_spec",
    "stack_spec",
    "kernel_len_from_ms",
    "same_padding",
    "conv1d_same",
    "conv1d_fft",
    "batchnorm_forward",
    "prelu_forward",
    "forward",
    "backward",
    "TRAINABLE",
]

BN_EPS = 1e-3
BN_MOMENTUM = 0.01
PRELU_INIT = 0.25

KINDS = ("conv1d", "batchnorm", "prelu", "relu")
TRAINABLE = {
    "conv1d": ("weight", "bias"),
    "batchnorm": ("gamma", "beta"),
    "prelu": ("alpha",),
    "relu": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_len: int = 0

    @classmethod
    def conv(cls, in_channels: int, out_channels: int, kernel_len: int) -> "LayerSpec":
        return cls("conv1d", in_channels, out_channels, kernel_len)

    @classmethod
    def batchnorm(cls, channels: int) -> "LayerSpec":
        return cls("batchnorm", channels, channels)

    @classmethod
    def prelu(cls, channels: int) -> "LayerSpec":
        return cls("prelu", channels, channels)

    @classmethod
    def relu(cls, channels: int) -> "LayerSpec":
        return cls("relu", channels, channels)

    @property
    def channels(self) -> int:
        return self.out_channels

    def param_count(self, frame_len: int) -> int:
        if self.kind == "conv1d":
            return self.out_channels * self.in_channels * self.kernel_len + self.out_channels
        if self.kind == "batchnorm":
            # gamma, beta, running mean, running variance
            return 4 * self.channels
        if self.kind == "prelu":
            return frame_len * self.channels
        return 0


@dataclass(frozen=True)
class ModelSpec:
    frame_len: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def validate(self) -> "ModelSpec":
        if self.frame_len <= 0:
            raise SpecError(f"frame_len must be positive, got {self.frame_len}")
        if not self.layers:
            raise SpecError("model has no layers")
        channels = 1
        for i, layer in enumerate(self.layers):
            if layer.kind not in KINDS:
                raise SpecError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.in_channels <= 0 or layer.out_channels <= 0:
                raise SpecError(f"layer {i}: channel counts must be positive")
            if layer.in_channels != channels:
                raise SpecError(
                    f"layer {i} ({layer.kind}) expects {layer.in_channels} channels, "
                    f"previous layer produces {channels}"
                )
            if layer.kind == "conv1d":
                if layer.kernel_len <= 0:
                    raise SpecError(f"layer {i}: kernel_len must be positive")
            elif layer.in_channels != layer.out_channels:
                raise SpecError(f"layer {i}: {layer.kind} cannot change the channel count")
            channels = layer.out_channels
        last = self.layers[-1]
        if last.kind != "conv1d" or last.out_channels != 1:
            raise SpecError("final layer must be a conv1d with a single output channel")
        return self

    def layer_param_counts(self) -> list[int]:
        return [layer.param_count(self.frame_len) for layer in self.layers]

    def param_count(self) -> int:
        return sum(self.layer_param_counts())


def kernel_len_from_ms(kernel_ms: float, sample_rate_hz: int = 16000) -> int:
    return max(1, int(round(kernel_ms * sample_rate_hz / 1000)))


def stack_spec(
    frame_len: int,
    hidden: Sequence[tuple[int, int]],
    output_kernel_len: int,
    activation: str = "prelu",
) -> ModelSpec:
    """Build a spec from ``(filters, kernel_len)`` pairs for the hidden layers."""
    if activation not in ("prelu", "relu"):
        raise SpecError(f"unknown activation {activation!r}")
    layers: list[LayerSpec] = []
    channels = 1
    for filters, kernel_len in hidden:
        layers.append(LayerSpec.conv(channels, filters, kernel_len))
        layers.append(LayerSpec.batchnorm(filters))
        layers.append(getattr(LayerSpec, activation)(filters))
        channels = filters
    layers.append(LayerSpec.conv(channels, 1, output_kernel_len))
    return ModelSpec(frame_len, tuple(layers)).validate()


def model53_spec(frame_len: int = 320, kernel_len: int = 80) -> ModelSpec:
    """The five-hidden-layer PReLU network with 12/25/50/100/200 filters."""
    hidden = [(f, kernel_len) for f in (12, 25, 50, 100, 200)]
    return stack_spec(frame_len, hidden, kernel_len, "prelu")


def same_padding(kernel_len: int) -> tuple[int, int]:
    """(left, right) zero padding; the extra sample of an even kernel goes right."""
    return (kernel_len - 1) // 2, kernel_len // 2


def _check_conv_shapes(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be (batch, length, channels), got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv weight must be (out, in, kernel), got {weight.shape}")
    if x.shape[2] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[2]} channels, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} filters")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    return x, False


# Internally activations are channels-first (B, C, L): gathering kernel taps
# then copies whole contiguous time rows, which is much cheaper than a
# channels-last gather.

def _im2col(x: np.ndarray, kernel_len: int, pad: tuple[int, int]) -> np.ndarray:
    """(B, C, L) -> (B, C*kernel_len, L) patch tensor."""
    b, c, length = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), pad))
    cols = np.empty((b, c, kernel_len, length), dtype=x.dtype)
    for j in range(kernel_len):
        cols[:, :, j, :] = xp[:, :, j:j + length]
    return cols.reshape(b, c * kernel_len, length)


def _correlate(x: np.ndarray, weight: np.ndarray, pad: tuple[int, int]):
    out_ch, in_ch, k = weight.shape
    cols = _im2col(x, k, pad)
    return weight.reshape(out_ch, in_ch * k) @ cols, cols


def _correlate_input_grad(dy: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # transposed, time-reversed kernel with the padding sides swapped
    pad_left, pad_right = same_padding(weight.shape[2])
    w_t = np.ascontiguousarray(weight.transpose(1, 0, 2)[:, :, ::-1])
    dx, _ = _correlate(dy, w_t, (pad_right, pad_left))
    return dx


def conv1d_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Zero-padded cross-correlation whose output length equals the input length.

    ``x`` is ``(length, in_ch)`` or ``(batch, length, in_ch)``; ``weight`` is
    ``(out_ch, in_ch, kernel_len)``.
    """
    x, squeeze = _as_batched(x)
    weight = np.asarray(weight)
    _check_conv_shapes(x, weight, bias)
    y, _ = _correlate(x.transpose(0, 2, 1), weight, same_padding(weight.shape[2]))
    y = y.transpose(0, 2, 1)
    if bias is not None:
        y = y + bias
    return y[0] if squeeze else y


def conv1d_fft(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same result as :func:`conv1d_same`, computed as a pointwise spectral product.

    The FFT length covers the full linear convolution, so no circular wrap
    reaches the retained samples.
    """
    x, squeeze = _as_batched(x)
    weight = np.asarray(weight)
    _check_conv_shapes(x, weight, bias)
    _, length, _ = x.shape
    k = weight.shape[2]
    pad_left, _ = same_padding(k)
    n_fft = length + k - 1
    # cross-correlation == convolution with the time-reversed kernel
    x_spec = np.fft.rfft(x, n=n_fft, axis=1)  # (B, F, in)
    h_spec = np.fft.rfft(weight[:, :, ::-1], n=n_fft, axis=2)  # (out, in, F)
    y_spec = np.einsum("bfi,oif->bfo", x_spec, h_spec)
    full = np.fft.irfft(y_spec, n=n_fft, axis=1)
    start = k - 1 - pad_left
    y = full[:, start:start + length, :].astype(np.result_type(x, weight), copy=False)
    if bias is not None:
        y = y + bias
    return y[0] if squeeze else y


def _bn(x, params, training, eps, momentum, update_running):
    """Channels-first batchnorm; statistics over batch and time."""
    gamma = params["gamma"][:, None]
    beta = params["beta"][:, None]
    if not training:
        inv_std = 1.0 / np.sqrt(params["running_var"] + eps)
        scale = (params["gamma"] * inv_std).astype(x.dtype, copy=False)
        shift = (params["beta"] - params["running_mean"] * params["gamma"] * inv_std).astype(
            x.dtype, copy=False
        )
        return x * scale[:, None] + shift[:, None], None
    if x.shape[0] < 2:
        raise DegenerateBatchError("train-mode batchnorm needs a batch of at least 2")
    mean = x.mean(axis=(0, 2))
    centered = x - mean[:, None]
    var = np.mean(centered * centered, axis=(0, 2))
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = centered * inv_std[:, None]
    if update_running:
        params["running_mean"] *= 1.0 - momentum
        params["running_mean"] += momentum * mean
        params["running_var"] *= 1.0 - momentum
        params["running_var"] += momentum * var
    return xhat * gamma + beta, (xhat, inv_std)


def _bn_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    xhat, inv_std = cache
    n = dy.shape[0] * dy.shape[2]
    dbeta = dy.sum(axis=(0, 2))
    dgamma = np.sum(dy * xhat, axis=(0, 2))
    # derivative of gamma * (x - mean) / std through the batch statistics
    dx = ((gamma * inv_std / n)[:, None]) * (n * dy - dbeta[:, None] - xhat * dgamma[:, None])
    return dx, {"gamma": dgamma, "beta": dbeta}


def batchnorm_forward(
    x: np.ndarray,
    params: dict[str, np.ndarray],
    mode: str = "infer",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
    update_running: bool = True,
) -> np.ndarray:
    """Per-channel normalization of a ``(batch, frame_len, channels)`` tensor.

    Train mode normalizes with the batch statistics and, unless
    ``update_running`` is false, moves the running statistics in ``params``
    toward them; infer mode uses the running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"batchnorm input must be (batch, length, channels), got {x.shape}")
    y, _ = _bn(x.transpose(0, 2, 1), params, mode == "train", eps, momentum, update_running)
    return y.transpose(0, 2, 1)


def prelu_forward(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``x`` where non-negative, ``alpha * x`` elsewhere; one slope per (time, channel)."""
    x = np.asarray(x)
    if x.shape[-2:] != alpha.shape:
        raise ShapeError(f"PReLU slope shape {alpha.shape} does not match input {x.shape}")
    return np.where(x >= 0, x, alpha * x)


@dataclass
class Tape:
    """Cached activations of one train-mode forward pass."""

    model_id: int
    model_version: int
    caches: list = field(default_factory=list)
    consumed: bool = False


@dataclass
class Gradients:
    """Per-layer gradients of the trainable buffers plus the input gradient."""

    params: list[dict[str, np.ndarray]]
    input: np.ndarray

    def items(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for i, grads in enumerate(self.params):
            for name, g in grads.items():
                yield i, name, g

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for _, _, g in self.items()])


class Model:
    """Instantiated parameter buffers for a :class:`ModelSpec`.

    ``params[i]`` holds the buffers of ``spec.layers[i]``: conv ``weight``
    ``(out, in, k)`` and ``bias``; batchnorm ``gamma``, ``beta``,
    ``running_mean``, ``running_var``; PReLU ``alpha`` ``(frame_len, ch)``.
    """

    def __init__(
        self,
        spec: ModelSpec,
        params: list[dict[str, np.ndarray]],
        bn_eps: float = BN_EPS,
        bn_momentum: float = BN_MOMENTUM,
        seed: int = 0,
    ):
        self.spec = spec
        self.params = params
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.seed = seed
        self.version = 0

    @property
    def dtype(self) -> np.dtype:
        return self.params[0]["weight"].dtype

    @property
    def frame_len(self) -> int:
        return self.spec.frame_len

    def param_count(self) -> int:
        return sum(a.size for p in self.params for a in p.values())

    def layer_param_counts(self) -> list[int]:
        return [sum(a.size for a in p.values()) for p in self.params]

    def trainable(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for i, (layer, p) in enumerate(zip(self.spec.layers, self.params)):
            for name in TRAINABLE[layer.kind]:
                yield i, name, p[name]

    def mark_updated(self) -> None:
        self.version += 1

    def copy(self) -> "Model":
        return Model(
            self.spec,
            [{k: v.copy() for k, v in p.items()} for p in self.params],
            self.bn_eps,
            self.bn_momentum,
            self.seed,
        )

    def astype(self, dtype) -> "Model":
        clone = self.copy()
        clone.params = [{k: v.astype(dtype) for k, v in p.items()} for p in clone.params]
        return clone

    def load_state(self, other: "Model") -> None:
        """Copy buffers from ``other`` (same spec) into this model in place."""
        if other.spec != self.spec:
            raise SpecError("cannot load parameters from a model with a different spec")
        for mine, theirs in zip(self.params, other.params):
            for k in mine:
                mine[k][...] = theirs[k]
        self.mark_updated()

    def equal_params(self, other: "Model") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a[k], b[k]) for a, b in zip(self.params, other.params) for k in a
        )

    def __repr__(self) -> str:
        return f"Model(layers={len(self.spec.layers)}, params={self.param_count():,}, dtype={self.dtype})"


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate ``spec`` with deterministic fan-in scaled uniform weights."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: list[dict[str, np.ndarray]] = []
    for layer in spec.layers:
        c = layer.channels
        if layer.kind == "conv1d":
            fan_in = layer.in_channels * layer.kernel_len
            bound = math.sqrt(6.0 / (fan_in * (1.0 + PRELU_INIT ** 2)))
            shape = (layer.out_channels, layer.in_channels, layer.kernel_len)
            params.append({
                "weight": rng.uniform(-bound, bound, size=shape).astype(dtype),
                "bias": np.zeros(layer.out_channels, dtype=dtype),
            })
        elif layer.kind == "batchnorm":
            params.append({
                "gamma": np.ones(c, dtype=dtype),
                "beta": np.zeros(c, dtype=dtype),
                "running_mean": np.zeros(c, dtype=dtype),
                "running_var": np.ones(c, dtype=dtype),
            })
        elif layer.kind == "prelu":
            params.append({"alpha": np.full((spec.frame_len, c), PRELU_INIT, dtype=dtype)})
        else:
            params.append({})
    return Model(spec, params, seed=seed)


def _prepare_input(model: Model, x: np.ndarray) -> np.ndarray:
    """Accept (B, L) or (B, L, 1) and return channels-first (B, 1, L)."""
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2 or x.shape[1] != model.frame_len:
        raise ShapeError(
            f"expected input (batch, {model.frame_len}, 1) or (batch, {model.frame_len}), got {x.shape}"
        )
    return x[:, None, :]


def forward(
    model: Model,
    x: np.ndarray,
    mode: str = "infer",
    conv: str = "direct",
    update_running: bool = True,
) -> tuple[np.ndarray, Tape | None]:
    """Run every layer in order; returns ``(output, tape)``.

    The output has the input's shape. A tape is only recorded in train mode.
    ``conv="fft"`` routes convolutions through :func:`conv1d_fft` (infer only).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if conv not in ("direct", "fft"):
        raise ValueError(f"conv must be 'direct' or 'fft', got {conv!r}")
    if conv == "fft" and mode == "train":
        raise ValueError("the FFT convolution path is inference only")
    in_shape = np.shape(x)
    h = _prepare_input(model, x)
    training = mode == "train"
    tape = Tape(id(model), model.version) if training else None

    for layer, p in zip(model.spec.layers, model.params):
        if layer.kind == "conv1d":
            if conv == "fft":
                h = conv1d_fft(h.transpose(0, 2, 1), p["weight"], p["bias"]).transpose(0, 2, 1)
                continue
            h, cols = _correlate(h, p["weight"], same_padding(layer.kernel_len))
            h += p["bias"][:, None]
            if training:
                tape.caches.append(cols)
        elif layer.kind == "batchnorm":
            h, cache = _bn(h, p, training, model.bn_eps, model.bn_momentum, update_running)
            if training:
                tape.caches.append(cache)
        elif layer.kind == "prelu":
            if training:
                tape.caches.append(h)
            h = np.where(h >= 0, h, p["alpha"].T * h)
        else:
            if training:
                tape.caches.append(h)
            h = np.maximum(h, 0)
    return h.reshape(in_shape), tape


def backward(model: Model, tape: Tape | None, output_grad: np.ndarray) -> Gradients:
    """Reverse-mode pass through a recorded forward.

    Running batchnorm statistics receive no gradient. The tape is consumed.
    """
    if tape is None:
        raise TapeError("backward needs a tape from a train-mode forward pass")
    if tape.consumed:
        raise TapeError("tape has already been consumed by a backward pass")
    if tape.model_id != id(model) or tape.model_version != model.version:
        raise TapeError("tape is stale: the model changed after the forward pass")
    if len(tape.caches) != len(model.spec.layers):
        raise TapeError("tape does not match the model's layer count")
    tape.consumed = True

    in_shape = np.shape(output_grad)
    dy = _prepare_input(model, output_grad)
    grads: list[dict[str, np.ndarray]] = [dict() for _ in model.spec.layers]
    for i in range(len(model.spec.layers) - 1, -1, -1):
        layer, p, cache = model.spec.layers[i], model.params[i], tape.caches[i]
        if layer.kind == "conv1d":
            w = p["weight"]
            dw = np.matmul(dy, cache.transpose(0, 2, 1)).sum(axis=0)
            grads[i]["weight"] = dw.reshape(w.shape)
            grads[i]["bias"] = dy.sum(axis=(0, 2))
            dy = _correlate_input_grad(dy, w)
        elif layer.kind == "batchnorm":
            dy, g = _bn_backward(dy, cache, p["gamma"])
            grads[i].update(g)
        elif layer.kind == "prelu":
            neg = cache < 0
            grads[i]["alpha"] = np.sum(np.where(neg, dy * cache, 0), axis=0).T
            dy = np.where(neg, dy * p["alpha"].T, dy)
        else:
            dy = np.where(cache > 0, dy, 0)
    tape.caches = []
    return Gradients(grads, dy[:, 0, :].reshape(in_shape))
