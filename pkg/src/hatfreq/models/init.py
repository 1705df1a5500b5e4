from __future__ import annotations

import numpy as np

from ..autodiff import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside +-bound*std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def to_params(arrays: dict[str, np.ndarray], dtype) -> dict[str, Tensor]:
    return {name: Tensor(arr, requires_grad=True, dtype=dtype) for name, arr in arrays.items()}
