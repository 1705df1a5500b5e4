from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tol: float
    h: float
    coords: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {verdict}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tol:g}, h {self.h:g}, {len(self.coords)} coords)")


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare autodiff against central differences of ``f`` at ``x``.

    ``f`` maps a Tensor to a scalar Tensor.  When ``n_coords`` is given only
    that many coordinates (sampled without replacement) are probed.  The
    check passes iff the max relative error is strictly below ``tol``, so
    ``tol=0`` always fails.  ``floor`` lower-bounds the denominator of the
    relative error; it should sit above the round-off of the difference
    quotient (about ``eps * |f| / h``) so exactly-zero gradients compare sanely.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x)
    if x0.dtype not in (np.float32, np.float64):
        x0 = x0.astype(np.float64)

    xt = Tensor(x0, requires_grad=True)
    out = f(xt)
    analytic_full = backward(out).get(xt, np.zeros_like(x0))

    flat = x0.reshape(-1)
    if n_coords is None or n_coords >= flat.size:
        coords = np.arange(flat.size)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(flat.size, size=n_coords, replace=False))

    def value(v: np.ndarray) -> float:
        val = float(f(Tensor(v.reshape(x0.shape))).data)
        if not np.isfinite(val):
            raise NonFiniteError("function is non-finite at a probe point")
        return val

    numeric = np.empty(len(coords))
    for n, i in enumerate(coords):
        probe = flat.copy()
        probe[i] = flat[i] + h
        up = value(probe)
        probe[i] = flat[i] - h
        down = value(probe)
        numeric[n] = (up - down) / (2 * h)
    analytic = analytic_full.reshape(-1)[coords].astype(np.float64)
    err = rel_error(analytic, numeric, floor)
    max_err = float(err.max()) if err.size else 0.0
    return GradCheckReport(max_err < tol, max_err, tol, h, coords, analytic, numeric)
