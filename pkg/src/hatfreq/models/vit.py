"""A small Vision Transformer built on the autodiff primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeError, Tensor, as_tensor
from .init import to_params, trunc_normal


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    embed_dim: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 10
    pooling: Literal["class-token", "mean"] = "mean"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.pooling not in ("class-token", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)


def patchify(images, patch_size: int) -> Tensor:
    """N x C x H x W -> N x T x (p*p*C), row-major patches, channel-last inside."""
    x = as_tensor(images)
    if x.ndim != 4:
        raise ShapeError("patchify expects an N x C x H x W batch")
    n, c, h, w = x.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"{h}x{w} image is not divisible into {p}x{p} patches")
    x = ad.reshape(x, (n, c, h // p, p, w // p, p))
    x = ad.transpose(x, (0, 2, 4, 3, 5, 1))
    return ad.reshape(x, (n, (h // p) * (w // p), p * p * c))


def attention(q, k, v, probe: Optional[Callable[[np.ndarray], None]] = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention extents differ: q{q.shape} k{k.shape} v{v.shape}")
    d = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    if probe is not None:
        probe(weights.data)
    return ad.matmul(weights, v)


def init_vit(config: ViTConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal (std 0.02) weights and embeddings, zero biases, identity norms."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in init_shapes(config).items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        elif "norm" in name:
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = trunc_normal(rng, shape)
    return to_params(arrays, dtype)


def _check_params(params: dict[str, Tensor], config: ViTConfig) -> None:
    expected = init_shapes(config)
    missing = expected.keys() - params.keys()
    extra = params.keys() - expected.keys()
    if missing or extra:
        raise KeyError(f"parameter/config mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")


def init_shapes(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    d, hd = config.embed_dim, config.hidden_dim
    tokens = config.num_patches + (1 if config.pooling == "class-token" else 0)
    shapes = {
        "patch_embed.weight": (config.patch_dim, d),
        "patch_embed.bias": (d,),
        "pos_embed": (1, tokens, d),
    }
    if config.pooling == "class-token":
        shapes["cls_token"] = (1, 1, d)
    for b in range(config.depth):
        pre = f"blocks.{b}."
        shapes.update({
            pre + "norm1.weight": (d,), pre + "norm1.bias": (d,),
            pre + "attn.qkv.weight": (d, 3 * d), pre + "attn.qkv.bias": (3 * d,),
            pre + "attn.proj.weight": (d, d), pre + "attn.proj.bias": (d,),
            pre + "norm2.weight": (d,), pre + "norm2.bias": (d,),
            pre + "mlp.fc1.weight": (d, hd), pre + "mlp.fc1.bias": (hd,),
            pre + "mlp.fc2.weight": (hd, d), pre + "mlp.fc2.bias": (d,),
        })
    shapes.update({
        "norm.weight": (d,), "norm.bias": (d,),
        "head.weight": (d, config.num_classes), "head.bias": (config.num_classes,),
    })
    return shapes


def vit_forward(params: dict[str, Tensor], config: ViTConfig, batch,
                probe: Optional[Callable[[int, np.ndarray], None]] = None) -> Tensor:
    """Logits for an N x C x H x W batch.

    ``probe(block_index, attention_weights)`` is called once per block with
    the N x heads x T x T attention matrix, for diagnostics.
    """
    _check_params(params, config)
    x = as_tensor(batch)
    if x.shape[1:] != (config.channels, config.image_size, config.image_size):
        raise ShapeError(f"batch shape {x.shape} does not match config")
    n = x.shape[0]
    d, h = config.embed_dim, config.heads
    hd = d // h

    tokens = ad.linear(patchify(x, config.patch_size), params["patch_embed.weight"], params["patch_embed.bias"])
    if config.pooling == "class-token":
        cls = ad.broadcast_to(params["cls_token"], (n, 1, d))
        tokens = ad.concat([cls, tokens], axis=1)
    tokens = tokens + params["pos_embed"]
    t = tokens.shape[1]

    for b in range(config.depth):
        pre = f"blocks.{b}."
        y = ad.layer_norm(tokens, params[pre + "norm1.weight"], params[pre + "norm1.bias"])
        qkv = ad.linear(y, params[pre + "attn.qkv.weight"], params[pre + "attn.qkv.bias"])
        qkv = ad.transpose(ad.reshape(qkv, (n, t, 3, h, hd)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        hook = (lambda w, b=b: probe(b, w)) if probe is not None else None
        a = attention(q, k, v, probe=hook)
        a = ad.reshape(ad.transpose(a, (0, 2, 1, 3)), (n, t, d))
        tokens = tokens + ad.linear(a, params[pre + "attn.proj.weight"], params[pre + "attn.proj.bias"])
        y = ad.layer_norm(tokens, params[pre + "norm2.weight"], params[pre + "norm2.bias"])
        y = ad.gelu(ad.linear(y, params[pre + "mlp.fc1.weight"], params[pre + "mlp.fc1.bias"]))
        tokens = tokens + ad.linear(y, params[pre + "mlp.fc2.weight"], params[pre + "mlp.fc2.bias"])

    tokens = ad.layer_norm(tokens, params["norm.weight"], params["norm.bias"])
    pooled = tokens[:, 0] if config.pooling == "class-token" else ad.mean(tokens, axis=1)
    return ad.linear(pooled, params["head.weight"], params["head.bias"])
