"""Named reference architectures used throughout the experiments.

* ``convA``: two 5x5 conv/pool stages, the "wide kernel" victim.
* ``convB``: three 3x3 conv/pool stages, a deeper contrast to convA so
  cross-architecture transfer has two genuinely different targets.
* ``branchy``: a stem conv feeding a two-branch block merged by Concat,
  small-scale stand-in for inception-style graphs; exercises the
  concat-aware layer selection policy.

All presets start with an explicit InputNorm layer so perturbations are
added in raw [0, 255] pixel space before normalization.
"""

from __future__ import annotations

from .nn import (NetworkSpec, avg_pool, concat, conv2d, flatten,
                 fully_connected, input_norm, max_pool, relu, softmax)

__all__ = ["PRESETS", "build_preset"]


def _norm(channels: int):
    return input_norm("norm", mean=[128.0] * channels, scale=1.0 / 64.0)


def conv_a(input_shape=(1, 28, 28), class_count=10) -> NetworkSpec:
    c = input_shape[0]
    layers = [
        _norm(c),
        conv2d("conv1", "norm", out_channels=16, kernel_h=5, kernel_w=5, pad=2),
        relu("relu1", "conv1"),
        max_pool("pool1", "relu1", window=2, stride=2),
        conv2d("conv2", "pool1", out_channels=32, kernel_h=5, kernel_w=5, pad=2),
        relu("relu2", "conv2"),
        max_pool("pool2", "relu2", window=2, stride=2),
        flatten("flat", "pool2"),
        fully_connected("fc", "flat", out_dim=class_count),
        softmax("prob", "fc"),
    ]
    return NetworkSpec(layers, input_shape, class_count)


def conv_b(input_shape=(1, 28, 28), class_count=10) -> NetworkSpec:
    c = input_shape[0]
    layers = [_norm(c)]
    prev = "norm"
    for i, ch in enumerate((8, 16, 32), start=1):
        layers += [
            conv2d(f"conv{i}", prev, out_channels=ch, kernel_h=3, kernel_w=3, pad=1),
            relu(f"relu{i}", f"conv{i}"),
            max_pool(f"pool{i}", f"relu{i}", window=2, stride=2),
        ]
        prev = f"pool{i}"
    layers += [
        flatten("flat", prev),
        fully_connected("fc", "flat", out_dim=class_count),
        softmax("prob", "fc"),
    ]
    return NetworkSpec(layers, input_shape, class_count)


def branchy(input_shape=(1, 28, 28), class_count=10) -> NetworkSpec:
    c = input_shape[0]
    layers = [
        _norm(c),
        conv2d("stem", "norm", out_channels=8, kernel_h=3, kernel_w=3, pad=1),
        relu("stem_relu", "stem"),
        max_pool("stem_pool", "stem_relu", window=2, stride=2),
        conv2d("br1_conv", "stem_pool", out_channels=8, kernel_h=3, kernel_w=3, pad=1),
        relu("br1_relu", "br1_conv"),
        conv2d("br2_conv", "stem_pool", out_channels=8, kernel_h=5, kernel_w=5, pad=2),
        relu("br2_relu", "br2_conv"),
        concat("merge", ["br1_relu", "br2_relu"]),
        avg_pool("merge_pool", "merge", window=2, stride=2),
        flatten("flat", "merge_pool"),
        fully_connected("fc", "flat", out_dim=class_count),
        softmax("prob", "fc"),
    ]
    return NetworkSpec(layers, input_shape, class_count)


PRESETS = {"convA": conv_a, "convB": conv_b, "branchy": branchy}


def build_preset(name: str, input_shape=(1, 28, 28), class_count: int = 10) -> NetworkSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown architecture {name!r}; "
                         f"choose from {sorted(PRESETS)}")
    return PRESETS[name](tuple(input_shape), class_count)
