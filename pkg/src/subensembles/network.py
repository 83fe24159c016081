"""Declarative network definition, trunk/task splitting, and cost model.

A NetworkSpec is an ordered layer sequence ending in softmax. Splitting at
index k partitions it into a trunk (layers [0, k)) and a task segment
(layers [k, end)); evaluating trunk then task runs the exact same kernel
sequence as a full forward pass, so stitched and split evaluation agree
bitwise.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .layers import (Conv2d, Dense, Flatten, LayerParams, LayerSpec, MaxPool2x2,
                     ParamStore, Relu, Softmax, forward_layer, init_layer_params,
                     output_shape)

CHECKPOINT_MAGIC = b"SENS"
CHECKPOINT_VERSION = 1


@dataclass
class EvalCounter:
    """Test instrumentation: counts kernel-segment evaluations."""

    trunk_forwards: int = 0
    task_forwards: int = 0
    full_forwards: int = 0

    def reset(self) -> None:
        self.trunk_forwards = self.task_forwards = self.full_forwards = 0


eval_counter = EvalCounter()


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # (channels, height, width)
    num_classes: int

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("network needs at least one layer")
        if not isinstance(self.layers[-1], Softmax):
            raise ConfigurationError("final layer must be softmax")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = output_shape(layer, shape)
            except ConfigurationError as exc:
                raise ConfigurationError(f"layer {i} ({layer.kind}): {exc}") from exc
        if shape != (self.num_classes,):
            raise ConfigurationError(
                f"network outputs {shape}, expected ({self.num_classes},)")

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Input shape of every layer plus the final output shape."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(output_shape(layer, shapes[-1]))
        return shapes


@dataclass(frozen=True)
class SplitPoint:
    index: int  # trunk = layers[:index], task = layers[index:]


@dataclass
class SplitNetwork:
    spec: NetworkSpec
    split: SplitPoint
    trunk_params: ParamStore
    task_params: ParamStore

    def forward_trunk(self, x: np.ndarray) -> np.ndarray:
        return forward_trunk(self.spec, self.split, self.trunk_params, x)

    def forward_task(self, trunk_out: np.ndarray) -> np.ndarray:
        return forward_task(self.spec, self.split, self.task_params, trunk_out)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_task(self.forward_trunk(x))


def split(spec: NetworkSpec, k: int) -> SplitPoint:
    """Partition the layer sequence at index k (0 < k < layer count)."""
    if not 0 < k < len(spec.layers):
        raise ConfigurationError(
            f"split index {k} outside (0, {len(spec.layers)}); the task segment "
            "must be non-empty and contain the softmax output")
    return SplitPoint(k)


def init_params(spec: NetworkSpec, seed: int, layer_range: tuple[int, int] | None = None) -> ParamStore:
    """Initialize parameters for layers in [lo, hi) (whole network by default)."""
    lo, hi = layer_range if layer_range is not None else (0, len(spec.layers))
    store = ParamStore(rng_seed=seed)
    for i in range(lo, hi):
        p = init_layer_params(spec.layers[i], seed, i)
        if p is not None:
            store.tensors[i] = p
    return store


def run_layers(
    spec: NetworkSpec,
    params: ParamStore,
    x: np.ndarray,
    lo: int = 0,
    hi: int | None = None,
) -> np.ndarray:
    hi = len(spec.layers) if hi is None else hi
    for i in range(lo, hi):
        x = forward_layer(spec.layers[i], params.tensors.get(i), x)
    return x


def forward_full(spec: NetworkSpec, params: ParamStore, x: np.ndarray) -> np.ndarray:
    eval_counter.full_forwards += 1
    return run_layers(spec, params, _batched(spec, x))


def forward_trunk(spec: NetworkSpec, split_point: SplitPoint, trunk_params: ParamStore,
                  x: np.ndarray) -> np.ndarray:
    eval_counter.trunk_forwards += 1
    return run_layers(spec, trunk_params, _batched(spec, x), 0, split_point.index)


def forward_task(spec: NetworkSpec, split_point: SplitPoint, task_params: ParamStore,
                 trunk_out: np.ndarray) -> np.ndarray:
    eval_counter.task_forwards += 1
    return run_layers(spec, task_params, trunk_out, split_point.index)


def _batched(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    if x.shape[1:] != spec.input_shape and x.shape != spec.input_shape:
        raise ConfigurationError(
            f"input shape {x.shape} incompatible with network input {spec.input_shape}")
    return x if x.ndim == 4 else x[None]


def flops_of_layer(layer: LayerSpec, input_shape: tuple[int, ...]) -> int:
    """Forward-pass FLOPs for one example; one multiply-accumulate = 2 FLOPs.

    Activations, pooling, flatten, and softmax count as 0: they are
    negligible against the conv/dense terms, which keeps the cost model
    auditable without changing any speedup ratio materially.
    """
    out = output_shape(layer, input_shape)
    if isinstance(layer, Conv2d):
        _, ho, wo = out
        return 2 * layer.kernel_h * layer.kernel_w * layer.in_channels * layer.out_channels * ho * wo
    if isinstance(layer, Dense):
        return 2 * layer.in_features * layer.out_features
    return 0


def network_flops(spec: NetworkSpec, lo: int = 0, hi: int | None = None) -> int:
    """Sum of per-layer FLOPs over layers [lo, hi)."""
    hi = len(spec.layers) if hi is None else hi
    shapes = spec.layer_shapes()
    return sum(flops_of_layer(spec.layers[i], shapes[i]) for i in range(lo, hi))


def params_digest(*stores: ParamStore) -> str:
    """SHA-256 over a canonical serialization of the given parameter sets."""
    h = hashlib.sha256()
    for store in stores:
        for i in sorted(store.tensors):
            p: LayerParams = store.tensors[i]
            h.update(struct.pack("<i", i))
            for arr in (p.weight, p.bias):
                h.update(struct.pack("<i", arr.ndim))
                h.update(struct.pack(f"<{arr.ndim}i", *arr.shape))
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# line-oriented text format for NetworkSpec: one layer per line, kind key=value


def format_spec(spec: NetworkSpec) -> str:
    c, h, w = spec.input_shape
    lines = [f"input channels={c} height={h} width={w} classes={spec.num_classes}"]
    for layer in spec.layers:
        if isinstance(layer, Conv2d):
            lines.append(
                f"conv2d in_channels={layer.in_channels} out_channels={layer.out_channels} "
                f"kernel_h={layer.kernel_h} kernel_w={layer.kernel_w} "
                f"stride={layer.stride} padding={layer.padding}")
        elif isinstance(layer, Dense):
            lines.append(f"dense in_features={layer.in_features} out_features={layer.out_features}")
        else:
            lines.append(layer.kind)
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> NetworkSpec:
    input_shape = None
    num_classes = None
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, *pairs = line.split()
        kv = {}
        for pair in pairs:
            if "=" not in pair:
                raise DataFormatError(f"line {lineno}: expected key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            kv[key] = value
        try:
            if kind == "input":
                input_shape = (int(kv.pop("channels")), int(kv.pop("height")), int(kv.pop("width")))
                num_classes = int(kv.pop("classes"))
            elif kind == "conv2d":
                layers.append(Conv2d(
                    in_channels=int(kv.pop("in_channels")),
                    out_channels=int(kv.pop("out_channels")),
                    kernel_h=int(kv.pop("kernel_h")),
                    kernel_w=int(kv.pop("kernel_w")),
                    stride=int(kv.pop("stride", "1")),
                    padding=kv.pop("padding", "same")))
            elif kind == "dense":
                layers.append(Dense(int(kv.pop("in_features")), int(kv.pop("out_features"))))
            elif kind == "relu":
                layers.append(Relu())
            elif kind == "maxpool2x2":
                layers.append(MaxPool2x2())
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "softmax":
                layers.append(Softmax())
            else:
                raise DataFormatError(f"line {lineno}: unknown layer kind {kind!r}")
        except KeyError as exc:
            raise DataFormatError(f"line {lineno}: missing key {exc} for {kind}") from exc
        if kv:
            raise DataFormatError(f"line {lineno}: unknown keys {sorted(kv)} for {kind}")
    if input_shape is None or num_classes is None:
        raise DataFormatError("spec text is missing the 'input' line")
    try:
        return NetworkSpec(tuple(layers), input_shape, num_classes)
    except ConfigurationError as exc:
        raise DataFormatError(f"inconsistent network spec: {exc}") from exc


# ---------------------------------------------------------------------------
# binary checkpoints: versioned header, shapes, little-endian float64 payload


def save_params(store: ParamStore, path) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQI", CHECKPOINT_VERSION,
                            store.rng_seed & 0xFFFFFFFFFFFFFFFF, len(store.tensors)))
        for i in sorted(store.tensors):
            p = store.tensors[i]
            f.write(struct.pack("<i", i))
            for arr in (p.weight, p.bias):
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> ParamStore:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r} in {path}")
        version, seed, count = struct.unpack("<IQI", _read_exact(f, 16, path))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version} in {path}")
        store = ParamStore(rng_seed=seed)
        for _ in range(count):
            (index,) = struct.unpack("<i", _read_exact(f, 4, path))
            arrays = []
            for _ in range(2):
                (ndim,) = struct.unpack("<I", _read_exact(f, 4, path))
                shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, path))
                n = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(_read_exact(f, 8 * n, path), dtype="<f8")
                arrays.append(data.reshape(shape).astype(np.float64))
            store.tensors[index] = LayerParams(arrays[0], arrays[1])
        return store


def _read_exact(f, n: int, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated checkpoint file {path}")
    return data
