"""Dense-tensor layer kernels with exact backpropagation.

All kernels are pure functions over float64 numpy arrays with a leading
batch axis. Layer parameters live in a ParamStore keyed by layer index;
only conv2d and dense layers own parameters. Every kernel output is
checked for finiteness (NaN/Inf raises NumericalError).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NumericalError
from .rng import Stream, derive_key

LOSS_EPS = 1e-12


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    padding: str = "same"  # "same" (odd kernels, zero pad) or "valid"
    kind = "conv2d"


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    kind = "dense"


@dataclass(frozen=True)
class Relu:
    kind = "relu"


@dataclass(frozen=True)
class MaxPool2x2:
    kind = "maxpool2x2"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


@dataclass(frozen=True)
class Softmax:
    kind = "softmax"


LayerSpec = Conv2d | Dense | Relu | MaxPool2x2 | Flatten | Softmax


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), self.bias.copy())


@dataclass
class ParamStore:
    """Weight/bias tensors keyed by layer index in the owning network."""

    tensors: dict[int, LayerParams] = field(default_factory=dict)
    rng_seed: int = 0

    def copy(self) -> "ParamStore":
        return ParamStore({i: p.copy() for i, p in self.tensors.items()}, self.rng_seed)


def validate_layer(layer: LayerSpec) -> None:
    if isinstance(layer, Conv2d):
        dims = (layer.in_channels, layer.out_channels, layer.kernel_h,
                layer.kernel_w, layer.stride)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"conv2d dimensions must be >= 1, got {layer}")
        if layer.padding not in ("same", "valid"):
            raise ConfigurationError(f"unknown padding {layer.padding!r}")
        if layer.padding == "same" and (layer.kernel_h % 2 == 0 or layer.kernel_w % 2 == 0):
            raise ConfigurationError("'same' padding requires odd kernel sizes")
    elif isinstance(layer, Dense):
        if layer.in_features < 1 or layer.out_features < 1:
            raise ConfigurationError(f"dense dimensions must be >= 1, got {layer}")


def output_shape(layer: LayerSpec, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by `layer` on a single example of `input_shape`."""
    validate_layer(layer)
    if isinstance(layer, Conv2d):
        if len(input_shape) != 3 or input_shape[0] != layer.in_channels:
            raise ConfigurationError(
                f"conv2d expects (channels={layer.in_channels}, h, w), got {input_shape}")
        _, h, w = input_shape
        ph, pw = _conv_pad(layer)
        if h + 2 * ph < layer.kernel_h or w + 2 * pw < layer.kernel_w:
            raise ConfigurationError(f"input {input_shape} smaller than kernel {layer}")
        ho = (h + 2 * ph - layer.kernel_h) // layer.stride + 1
        wo = (w + 2 * pw - layer.kernel_w) // layer.stride + 1
        return (layer.out_channels, ho, wo)
    if isinstance(layer, Dense):
        if input_shape != (layer.in_features,):
            raise ConfigurationError(
                f"dense expects ({layer.in_features},), got {input_shape}")
        return (layer.out_features,)
    if isinstance(layer, MaxPool2x2):
        if len(input_shape) != 3 or input_shape[1] % 2 or input_shape[2] % 2:
            raise ConfigurationError(
                f"maxpool2x2 needs (c, even h, even w), got {input_shape}")
        c, h, w = input_shape
        return (c, h // 2, w // 2)
    if isinstance(layer, Flatten):
        if len(input_shape) < 1:
            raise ConfigurationError("flatten needs a non-scalar input")
        return (int(np.prod(input_shape)),)
    # relu / softmax preserve shape; softmax additionally wants a vector
    if isinstance(layer, Softmax) and len(input_shape) != 1:
        raise ConfigurationError(f"softmax expects a feature vector, got {input_shape}")
    return input_shape


def init_layer_params(layer: LayerSpec, seed: int, layer_index: int) -> LayerParams | None:
    """He-style init: weight ~ N(0, sqrt(2/fan_in)), bias zero."""
    stream = Stream(derive_key(seed, "init", layer_index))
    if isinstance(layer, Conv2d):
        fan_in = layer.in_channels * layer.kernel_h * layer.kernel_w
        shape = (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)
        weight = stream.normal(int(np.prod(shape)), std=np.sqrt(2.0 / fan_in)).reshape(shape)
        return LayerParams(weight, np.zeros(layer.out_channels))
    if isinstance(layer, Dense):
        shape = (layer.in_features, layer.out_features)
        weight = stream.normal(shape[0] * shape[1], std=np.sqrt(2.0 / layer.in_features)).reshape(shape)
        return LayerParams(weight, np.zeros(layer.out_features))
    return None


def _conv_pad(layer: Conv2d) -> tuple[int, int]:
    if layer.padding == "same":
        return (layer.kernel_h - 1) // 2, (layer.kernel_w - 1) // 2
    return 0, 0


def _conv_windows(layer: Conv2d, x: np.ndarray) -> np.ndarray:
    ph, pw = _conv_pad(layer)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    view = sliding_window_view(x, (layer.kernel_h, layer.kernel_w), axis=(2, 3))
    return view[:, :, ::layer.stride, ::layer.stride]  # (n, cin, ho, wo, kh, kw)


def _ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {what}")
    return arr


def _check_input(layer: LayerSpec, x: np.ndarray) -> None:
    if x.ndim < 2:
        raise ConfigurationError(f"{layer.kind} input must be batched, got ndim={x.ndim}")
    output_shape(layer, x.shape[1:])  # raises on incompatible shapes


def forward_layer(layer: LayerSpec, params: LayerParams | None, x: np.ndarray) -> np.ndarray:
    """Apply one layer to a batch (n, ...); returns (n, out_shape)."""
    _check_input(layer, x)
    if isinstance(layer, Conv2d):
        windows = _conv_windows(layer, x)
        out = np.einsum("nchwkl,ockl->nohw", windows, params.weight, optimize=True)
        out += params.bias[None, :, None, None]
    elif isinstance(layer, Dense):
        out = x @ params.weight + params.bias
    elif isinstance(layer, Relu):
        out = np.maximum(x, 0.0)
    elif isinstance(layer, MaxPool2x2):
        n, c, h, w = x.shape
        out = x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
    elif isinstance(layer, Flatten):
        out = x.reshape(x.shape[0], -1)
    elif isinstance(layer, Softmax):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=1, keepdims=True)
    else:
        raise ConfigurationError(f"unknown layer kind {layer!r}")
    return _ensure_finite(out, f"{layer.kind} forward")


def backward_layer(
    layer: LayerSpec,
    params: LayerParams | None,
    x: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, LayerParams | None]:
    """Gradients of a scalar loss wrt input and parameters of one layer.

    `x` is the same input passed to forward_layer; `grad_out` is the loss
    gradient at the layer output.
    """
    _check_input(layer, x)
    grad_params = None
    if isinstance(layer, Conv2d):
        windows = _conv_windows(layer, x)
        grad_w = np.einsum("nchwkl,nohw->ockl", windows, grad_out, optimize=True)
        grad_b = grad_out.sum(axis=(0, 2, 3))
        grad_params = LayerParams(grad_w, grad_b)

        n, _, h, w = x.shape
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        ph, pw = _conv_pad(layer)
        s = layer.stride
        grad_pad = np.zeros((n, layer.in_channels, h + 2 * ph, w + 2 * pw))
        for i in range(layer.kernel_h):
            for j in range(layer.kernel_w):
                patch = np.einsum("nohw,oc->nchw", grad_out, params.weight[:, :, i, j],
                                  optimize=True)
                grad_pad[:, :, i:i + s * ho:s, j:j + s * wo:s] += patch
        grad_in = grad_pad[:, :, ph:ph + h, pw:pw + w]
    elif isinstance(layer, Dense):
        grad_params = LayerParams(x.T @ grad_out, grad_out.sum(axis=0))
        grad_in = grad_out @ params.weight.T
    elif isinstance(layer, Relu):
        grad_in = grad_out * (x > 0)
    elif isinstance(layer, MaxPool2x2):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        windows = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        winners = windows.argmax(axis=-1)  # ties route to the first maximum
        grad_win = np.where(winners[..., None] == np.arange(4), grad_out[..., None], 0.0)
        grad_in = grad_win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    elif isinstance(layer, Flatten):
        grad_in = grad_out.reshape(x.shape)
    elif isinstance(layer, Softmax):
        s = forward_layer(layer, None, x)
        grad_in = s * (grad_out - (grad_out * s).sum(axis=1, keepdims=True))
    else:
        raise ConfigurationError(f"unknown layer kind {layer!r}")
    _ensure_finite(grad_in, f"{layer.kind} backward")
    if grad_params is not None:
        _ensure_finite(grad_params.weight, f"{layer.kind} weight gradient")
        _ensure_finite(grad_params.bias, f"{layer.kind} bias gradient")
    return grad_in, grad_params


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log p_true over the batch, with p clamped at 1e-12 before log."""
    _validate_probs(probs, labels)
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p_true, LOSS_EPS)).mean())


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of cross_entropy_loss wrt probs (zero where the clamp is active)."""
    _validate_probs(probs, labels)
    n = len(labels)
    idx = np.arange(n)
    p_true = probs[idx, labels]
    grad = np.zeros_like(probs)
    grad[idx, labels] = np.where(p_true > LOSS_EPS, -1.0 / (n * np.maximum(p_true, LOSS_EPS)), 0.0)
    return grad


def _validate_probs(probs: np.ndarray, labels: np.ndarray) -> None:
    if probs.ndim != 2 or len(labels) != probs.shape[0]:
        raise ConfigurationError(
            f"expected probs (batch, classes) matching {len(labels)} labels, got {probs.shape}")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise ConfigurationError("probability rows must sum to 1 within 1e-6")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ConfigurationError(
            f"labels must lie in [0, {probs.shape[1]}), got range "
            f"[{labels.min()}, {labels.max()}]")


def zero_velocity(params: ParamStore) -> dict[int, LayerParams]:
    return {i: LayerParams(np.zeros_like(p.weight), np.zeros_like(p.bias))
            for i, p in params.tensors.items()}


def sgd_step(
    params: ParamStore,
    grads: dict[int, LayerParams],
    velocity: dict[int, LayerParams],
    learning_rate: float,
    momentum: float,
) -> ParamStore:
    """In-place momentum update: v <- momentum*v - lr*g; w <- w + v.

    Layers absent from `grads` (e.g. a frozen trunk) are untouched.
    """
    for i, g in grads.items():
        p, v = params.tensors[i], velocity[i]
        v.weight *= momentum
        v.weight -= learning_rate * g.weight
        v.bias *= momentum
        v.bias -= learning_rate * g.bias
        p.weight += v.weight
        p.bias += v.bias
        _ensure_finite(p.weight, f"layer {i} weight update")
        _ensure_finite(p.bias, f"layer {i} bias update")
    return params
