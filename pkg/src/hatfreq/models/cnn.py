"""Small residual CNN with the same logits contract as the ViT."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeError, Tensor, as_tensor
from .init import to_params, trunc_normal


@dataclass(frozen=True)
class CNNConfig:
    image_size: int = 32
    channels: int = 3
    widths: tuple[int, ...] = (32, 64, 128)
    num_classes: int = 10
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        for w in self.widths:
            if w % self.groups:
                raise ValueError(f"width {w} not divisible by {self.groups} norm groups")

    @property
    def total_stride(self) -> int:
        return 2 ** (len(self.widths) - 1)


def init_shapes(config: CNNConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    w0 = config.widths[0]
    shapes["stem.weight"] = (w0, config.channels, 3, 3)
    shapes["stem.norm.weight"] = (w0,)
    shapes["stem.norm.bias"] = (w0,)
    prev = w0
    for s, width in enumerate(config.widths):
        pre = f"stages.{s}."
        shapes[pre + "conv1.weight"] = (width, prev, 3, 3)
        shapes[pre + "norm1.weight"] = (width,)
        shapes[pre + "norm1.bias"] = (width,)
        shapes[pre + "conv2.weight"] = (width, width, 3, 3)
        shapes[pre + "norm2.weight"] = (width,)
        shapes[pre + "norm2.bias"] = (width,)
        if s > 0 or prev != width:
            shapes[pre + "shortcut.weight"] = (width, prev, 1, 1)
        prev = width
    shapes["head.weight"] = (prev, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def init_cnn(config: CNNConfig, seed: int, dtype=np.float32, zero_head: bool = False) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in init_shapes(config).items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        elif "norm" in name:
            arrays[name] = np.ones(shape)
        elif zero_head and name == "head.weight":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = trunc_normal(rng, shape)
    return to_params(arrays, dtype)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample group normalisation (no statistics shared across the batch)."""
    n, c, h, w = x.shape
    y = ad.reshape(x, (n, groups, (c // groups) * h * w))
    y = ad.reshape(ad.layer_norm(y, eps=eps), (n, c, h, w))
    return y * ad.reshape(gamma, (1, c, 1, 1)) + ad.reshape(beta, (1, c, 1, 1))


def cnn_forward(params: dict[str, Tensor], config: CNNConfig, batch) -> Tensor:
    """conv-norm-relu residual stages (stride 2 after the first), GAP, linear head."""
    expected = init_shapes(config)
    if expected.keys() != params.keys():
        raise KeyError("parameter/config mismatch for CNN")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
    x = as_tensor(batch)
    if x.shape[1:] != (config.channels, config.image_size, config.image_size):
        raise ShapeError(f"batch shape {x.shape} does not match config")
    g = config.groups

    x = ad.conv2d(x, params["stem.weight"], padding=1)
    x = ad.relu(group_norm(x, g, params["stem.norm.weight"], params["stem.norm.bias"]))
    for s in range(len(config.widths)):
        pre = f"stages.{s}."
        stride = 1 if s == 0 else 2
        y = ad.conv2d(x, params[pre + "conv1.weight"], stride=stride, padding=1)
        y = ad.relu(group_norm(y, g, params[pre + "norm1.weight"], params[pre + "norm1.bias"]))
        y = ad.conv2d(y, params[pre + "conv2.weight"], padding=1)
        y = group_norm(y, g, params[pre + "norm2.weight"], params[pre + "norm2.bias"])
        if pre + "shortcut.weight" in params:
            x = ad.conv2d(x, params[pre + "shortcut.weight"], stride=stride)
        x = ad.relu(x + y)
    pooled = ad.global_avg_pool(x)
    return ad.linear(pooled, params["head.weight"], params["head.bias"])
