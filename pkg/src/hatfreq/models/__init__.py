from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from ..autodiff import Tensor, no_grad
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    DuplicateNameError,
    TruncatedFileError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .cnn import CNNConfig, cnn_forward, init_cnn
from .vit import ViTConfig, attention, init_vit, patchify, vit_forward

ModelConfig = Union[ViTConfig, CNNConfig]


@dataclass
class Classifier:
    """A model kind, its config and a parameter map behind one call signature."""

    kind: str
    config: ModelConfig
    params: dict[str, Tensor]

    def logits(self, batch, **kwargs) -> Tensor:
        if self.kind == "vit":
            return vit_forward(self.params, self.config, batch, **kwargs)
        if self.kind == "cnn":
            return cnn_forward(self.params, self.config, batch)
        raise ValueError(f"unknown model kind {self.kind!r}")

    def predict_logits(self, images: np.ndarray, batch_size: int = 250) -> np.ndarray:
        """Logits without graph recording, evaluated in fixed-size chunks."""
        out = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                out.append(self.logits(images[start:start + batch_size]).data)
        return np.concatenate(out, axis=0)

    def with_params(self, params: dict[str, Tensor]) -> "Classifier":
        return replace(self, params=params)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    if isinstance(config, ViTConfig):
        return init_vit(config, seed, dtype)
    return init_cnn(config, seed, dtype)


def build_model(kind: str, config: ModelConfig, seed: int, dtype=np.float32) -> Classifier:
    if kind == "vit" and not isinstance(config, ViTConfig):
        raise TypeError("vit model needs a ViTConfig")
    if kind == "cnn" and not isinstance(config, CNNConfig):
        raise TypeError("cnn model needs a CNNConfig")
    return Classifier(kind, config, init_params(config, seed, dtype))


__all__ = [
    "BadMagicError", "CNNConfig", "CheckpointError", "ChecksumError", "Classifier",
    "DuplicateNameError", "ModelConfig", "TruncatedFileError", "VersionMismatchError",
    "ViTConfig", "attention", "build_model", "cnn_forward", "init_cnn", "init_params",
    "init_vit", "load_checkpoint", "patchify", "save_checkpoint", "vit_forward",
]
