"""2-D DFT, low/high-pass frequency masks and spectrum statistics.

Spectra use the *shifted* layout by default: the zero-frequency bin sits at
``(H // 2, W // 2)``.  Row ``i`` of a shifted grid therefore carries the
frequency ``i - H // 2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

from .autodiff import Tensor, as_tensor

Mode = Literal["low", "high"]
Variant = Literal["as-written", "square"]


class SymmetryError(ValueError):
    """Inverse DFT of a spectrum that is not conjugate-symmetric."""


class RatioUndefinedError(ValueError):
    """Energy ratio requested for a signal with zero energy."""


@dataclass(frozen=True)
class ComplexSpectrum:
    values: np.ndarray
    shifted: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def shift(self) -> "ComplexSpectrum":
        if self.shifted:
            return self
        return ComplexSpectrum(np.fft.fftshift(self.values, axes=(-2, -1)), True)

    def unshift(self) -> "ComplexSpectrum":
        if not self.shifted:
            return self
        return ComplexSpectrum(np.fft.ifftshift(self.values, axes=(-2, -1)), False)


def center(n: int) -> int:
    return n // 2


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")


def dft2(image, shifted: bool = True) -> ComplexSpectrum:
    """DFT over the last two axes; leading axes (batch, channel) are independent."""
    x = np.asarray(image)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError("dft2 needs at least a 1x1 plane")
    _check_finite(x, "dft2 input")
    coeffs = np.fft.fft2(x, axes=(-2, -1))
    spec = ComplexSpectrum(coeffs, shifted=False)
    return spec.shift() if shifted else spec


def dft2_direct(plane: np.ndarray) -> np.ndarray:
    """Unshifted DFT of a single plane by explicit summation (reference oracle)."""
    plane = np.asarray(plane, dtype=np.complex128)
    h, w = plane.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for i in range(h):
                for j in range(w):
                    acc += plane[i, j] * np.exp(-2j * np.pi * (u * i / h + v * j / w))
            out[u, v] = acc
    return out


def _residue_tol(dtype) -> float:
    return 1e-5 if np.dtype(dtype) in (np.float32, np.complex64) else 1e-10


def idft2(spectrum: Union[ComplexSpectrum, np.ndarray], tol: Optional[float] = None) -> np.ndarray:
    """Inverse DFT back to a real image.

    The imaginary residue must stay below ``tol`` (relative to the largest
    real magnitude, floored at 1); otherwise the spectrum was not
    conjugate-symmetric and a :class:`SymmetryError` is raised.
    """
    if isinstance(spectrum, np.ndarray):
        spectrum = ComplexSpectrum(spectrum, shifted=True)
    _check_finite(spectrum.values, "idft2 input")
    natural = spectrum.unshift().values
    x = np.fft.ifft2(natural, axes=(-2, -1))
    if tol is None:
        tol = _residue_tol(spectrum.values.dtype)
    scale = max(1.0, float(np.abs(x.real).max(initial=0.0)))
    residue = float(np.abs(x.imag).max(initial=0.0))
    if residue > tol * scale:
        raise SymmetryError(f"imaginary residue {residue:.3e} exceeds tolerance {tol:g}")
    real_dtype = np.float32 if natural.dtype == np.complex64 else np.float64
    return x.real.astype(real_dtype, copy=False)


# -- masks ---------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyMask:
    H: int
    W: int
    S: float
    mode: str
    variant: str
    grid: np.ndarray

    @property
    def ones(self) -> int:
        return int(self.grid.sum())

    @property
    def is_identity(self) -> bool:
        return bool(self.grid.all())


def _center_distances(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    di = np.abs(np.arange(h) - center(h))[:, None].astype(float)
    dj = np.abs(np.arange(w) - center(w))[None, :].astype(float)
    return np.broadcast_to(di, (h, w)), np.broadcast_to(dj, (h, w))


def make_mask(H: int, W: int, S: float, mode: Mode = "low", variant: Variant = "as-written") -> FrequencyMask:
    """Binary mask for a low- or high-pass filter of size ``S``.

    The as-written low-pass keeps bins with ``min(|i-cH|, |j-cW|) <= S/2``,
    which is a cross; the square variant uses ``max`` instead.  Both variants
    share the high-pass rule, which removes bins with
    ``min(|i-cH|, |j-cW|) <= (min(H, W) - S)/2``.
    """
    if mode not in ("low", "high"):
        raise ValueError(f"unknown mask mode {mode!r}")
    if variant not in ("as-written", "square"):
        raise ValueError(f"unknown mask variant {variant!r}")
    if not 0 <= S <= min(H, W):
        raise ValueError(f"filter size {S} outside [0, {min(H, W)}]")
    di, dj = _center_distances(H, W)
    if mode == "low":
        dist = np.maximum(di, dj) if variant == "square" else np.minimum(di, dj)
        grid = dist <= S / 2
    else:
        grid = ~(np.minimum(di, dj) <= (min(H, W) - S) / 2)
    grid = grid.astype(np.uint8)
    grid.setflags(write=False)
    return FrequencyMask(H, W, S, mode, variant, grid)


def mask_1d(n: int, S: float, mode: Mode) -> np.ndarray:
    """One-dimensional analogue of the as-written masks (shifted layout)."""
    d = np.abs(np.arange(n) - center(n)).astype(float)
    if mode == "low":
        return (d <= S / 2).astype(np.uint8)
    return (~(d <= (n - S) / 2)).astype(np.uint8)


def _apply_mask(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    spec = np.fft.fft2(x, axes=(-2, -1))
    natural_mask = np.fft.ifftshift(grid)
    out = np.fft.ifft2(spec * natural_mask, axes=(-2, -1))
    return out.real.astype(x.dtype if x.dtype in (np.float32, np.float64) else np.float64, copy=False)


def filter_image(image, mask: FrequencyMask) -> np.ndarray:
    """Inverse DFT of the masked (shifted) spectrum, per channel plane."""
    x = np.asarray(image)
    if x.shape[-2:] != (mask.H, mask.W):
        raise ValueError(f"mask is {mask.H}x{mask.W} but image planes are {x.shape[-2:]}")
    _check_finite(x, "filter_image input")
    if mask.is_identity:
        return x.copy()
    return _apply_mask(x, mask.grid)


def filter_tensor(t, mask: FrequencyMask) -> Tensor:
    """Differentiable version of :func:`filter_image`.

    The masks are symmetric under ``k -> -k``, so the filter is a
    self-adjoint real operator and its backward pass is the same filter.
    """
    t = as_tensor(t)
    if t.shape[-2:] != (mask.H, mask.W):
        raise ValueError(f"mask is {mask.H}x{mask.W} but tensor planes are {t.shape[-2:]}")
    if mask.is_identity:
        return t + 0.0
    grid = mask.grid
    return Tensor._result(
        _apply_mask(t.data, grid), (t,), lambda g: (_apply_mask(g, grid),), "spectral_filter"
    )


# -- noise and statistics ------------------------------------------------------

def conjugate_partner(H: int, W: int, i: int, j: int) -> tuple[int, int]:
    """Shifted-layout index of the bin holding the conjugate of bin (i, j)."""
    ch, cw = center(H), center(W)
    return (ch - (i - ch)) % H, (cw - (j - cw)) % W


def fourier_basis_noise(H: int, W: int, i: int, j: int, l2_norm: float,
                        sign_source: Union[int, np.random.Generator, None] = 1) -> np.ndarray:
    """Real image whose spectrum lives on bin (i, j) and its conjugate partner.

    ``sign_source`` is either a fixed +1/-1 or a Generator drawn once per call.
    """
    if not (0 <= i < H and 0 <= j < W):
        raise IndexError(f"bin ({i}, {j}) outside {H}x{W} grid")
    if l2_norm < 0:
        raise ValueError("l2_norm must be non-negative")
    if isinstance(sign_source, np.random.Generator):
        sign = 1.0 if sign_source.random() < 0.5 else -1.0
    else:
        sign = 1.0 if sign_source is None or sign_source >= 0 else -1.0
    if l2_norm == 0:
        return np.zeros((H, W))
    spec = np.zeros((H, W), dtype=np.complex128)
    spec[i, j] = 1.0
    spec[conjugate_partner(H, W, i, j)] = 1.0
    plane = np.fft.ifft2(np.fft.ifftshift(spec)).real
    return sign * l2_norm * plane / np.linalg.norm(plane)


def highfreq_energy_ratio(image, S: float, variant: Variant = "as-written") -> float:
    """Share of spectral energy kept by the high-pass mask of size ``S``.

    Channels (all leading axes) are averaged; zero-energy channels are
    skipped.  Raises :class:`RatioUndefinedError` for an all-zero image.
    """
    x = np.asarray(image, dtype=np.float64)
    h, w = x.shape[-2:]
    if not 0 < S < min(h, w):
        raise ValueError(f"filter size {S} must lie strictly inside (0, {min(h, w)})")
    mask = make_mask(h, w, S, "high", variant).grid.astype(bool)
    power = np.abs(dft2(x.reshape(-1, h, w)).values) ** 2
    total = power.sum(axis=(-2, -1))
    kept = power[:, mask].sum(axis=-1)
    live = total > 0
    if not live.any():
        raise RatioUndefinedError("energy ratio undefined for an all-zero image")
    return float(np.mean(kept[live] / total[live]))


def spectrum_energy_map(batch) -> np.ndarray:
    """Mean of log(1 + |coefficient|) over images and channels, shifted layout."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim < 2 or x.size == 0 or (x.ndim >= 3 and x.shape[0] == 0):
        raise ValueError("spectrum_energy_map needs a non-empty batch")
    h, w = x.shape[-2:]
    mags = np.abs(dft2(x.reshape(-1, h, w)).values)
    return np.log1p(mags).mean(axis=0)


def attention_lowpass_decay(A, v, k_max: int, atol: float = 1e-6) -> np.ndarray:
    """High/low ratio of ``A^k v`` for k = 1..k_max.

    Low keeps only the zero-frequency bin of the 1-D shifted DFT, high keeps
    every other bin.  Norms below the round-off floor ``n * eps * ||A^k v||``
    count as exactly zero; a zero low-frequency part gives ``inf``.
    """
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n) or v.shape != (n,):
        raise ValueError("A must be n x n and v an n-vector")
    if np.any(A < 0) or np.max(np.abs(A.sum(axis=1) - 1.0)) > atol:
        raise ValueError("A must be row-stochastic with non-negative entries")
    if not np.any(v):
        raise ValueError("v must be nonzero")
    low = mask_1d(n, 1, "low").astype(bool)
    high = mask_1d(n, n - 1, "high").astype(bool)
    floor = n * np.finfo(np.float64).eps
    ratios = np.empty(k_max)
    u = v
    for k in range(k_max):
        u = A @ u
        coeffs = np.fft.fftshift(np.fft.fft(u))
        # Parseval: ||M(u)||_2 = ||masked coefficients||_2 / sqrt(n)
        low_norm = np.linalg.norm(coeffs[low]) / np.sqrt(n)
        high_norm = np.linalg.norm(coeffs[high]) / np.sqrt(n)
        ref = np.linalg.norm(u)
        if high_norm <= floor * ref:
            high_norm = 0.0
        if low_norm <= floor * ref:
            ratios[k] = np.inf if high_norm > 0 else 0.0
        else:
            ratios[k] = high_norm / low_norm
    return ratios


def random_attention(n: int, rng: np.random.Generator) -> np.ndarray:
    """Row-wise softmax of i.i.d. standard-normal logits."""
    logits = rng.standard_normal((n, n))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# -- CSV export ----------------------------------------------------------------

def _write_comment(fh, header: Optional[str]) -> None:
    if not header:
        return
    line = header.rstrip("\n")
    fh.write((line if line.startswith("#") else f"# {line}") + "\n")


def write_grid_csv(path: Union[str, Path], grid: np.ndarray, header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        _write_comment(fh, header)
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "value"])
        for (r, c), val in np.ndenumerate(grid):
            writer.writerow([r, c, repr(float(val))])


def write_decay_csv(path: Union[str, Path], ratios: np.ndarray, header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        _write_comment(fh, header)
        writer = csv.writer(fh)
        writer.writerow(["k", "ratio"])
        for k, r in enumerate(ratios, start=1):
            writer.writerow([k, repr(float(r))])
