"""Built-in architectures and their named split points.

Split presets are named SE-1, SE-2, ... counting trailing layer groups:
SE-1 ensembles only the fully connected head, SE-2 additionally ensembles
the last convolutional group.
"""

from __future__ import annotations

from .errors import ConfigurationError
from .layers import Conv2d, Dense, Flatten, MaxPool2x2, Relu, Softmax
from .network import NetworkSpec


def mnist_cnn() -> NetworkSpec:
    """28x28 grayscale net: 32 and 64 3x3 convs, then 128-unit and 10-way dense."""
    return NetworkSpec(
        layers=(
            Conv2d(1, 32, 3, 3),
            Relu(),
            Conv2d(32, 64, 3, 3),
            Relu(),
            Flatten(),
            Dense(64 * 28 * 28, 128),
            Relu(),
            Dense(128, 10),
            Softmax(),
        ),
        input_shape=(1, 28, 28),
        num_classes=10,
    )


def blob_cnn(image_size: int = 12, num_classes: int = 4) -> NetworkSpec:
    """Small pooled CNN sized for the synthetic blob datasets."""
    if image_size % 4:
        raise ConfigurationError("blob_cnn image_size must be divisible by 4")
    reduced = image_size // 4
    return NetworkSpec(
        layers=(
            Conv2d(1, 8, 3, 3),
            Relu(),
            MaxPool2x2(),
            Conv2d(8, 16, 3, 3),
            Relu(),
            MaxPool2x2(),
            Flatten(),
            Dense(16 * reduced * reduced, 32),
            Relu(),
            Dense(32, num_classes),
            Softmax(),
        ),
        input_shape=(1, image_size, image_size),
        num_classes=num_classes,
    )


# split index = first layer of the task segment
SPLIT_PRESETS: dict[str, dict[str, int]] = {
    "mnist": {"SE-1": 5, "SE-2": 2},
    "blobs": {"SE-1": 7, "SE-2": 3},
}

ARCH_BUILDERS = {
    "mnist": mnist_cnn,
    "blobs": blob_cnn,
}


def build_arch(name: str, **kwargs) -> NetworkSpec:
    if name not in ARCH_BUILDERS:
        raise ConfigurationError(
            f"unknown architecture preset {name!r}; available: {sorted(ARCH_BUILDERS)}")
    return ARCH_BUILDERS[name](**kwargs)


def split_index(arch: str, split: str | int) -> int:
    """Resolve an SE-k preset name (or explicit integer) to a layer index."""
    if isinstance(split, int) or (isinstance(split, str) and split.lstrip("-").isdigit()):
        return int(split)
    presets = SPLIT_PRESETS.get(arch, {})
    if split not in presets:
        raise ConfigurationError(
            f"unknown split preset {split!r} for arch {arch!r}; "
            f"available: {sorted(presets)} or an explicit layer index")
    return presets[split]
