"""Measurement instruments: filtered-accuracy sweeps, Fourier heat maps and
perturbation spectra."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import Dataset
from .hat import HatConfig, pgd_attack
from .models import Classifier
from .spectral import (
    conjugate_partner,
    filter_image,
    fourier_basis_noise,
    highfreq_energy_ratio,
    make_mask,
    spectrum_energy_map,
)
from .utils import csv_header, stream

REFERENCE_HEATMAP_NORM = 15.7
REFERENCE_IMAGE_SIDE = 224


def desk_heatmap_norm(image_side: int) -> float:
    """Heat-map noise norm scaled from the 224-pixel protocol by the image side."""
    return REFERENCE_HEATMAP_NORM * image_side / REFERENCE_IMAGE_SIDE


def predictions(model: Classifier, images: np.ndarray, batch_size: int = 250) -> np.ndarray:
    return np.argmax(model.predict_logits(images, batch_size), axis=1)


def evaluate_accuracy(model: Classifier, dataset: Dataset, batch_size: int = 250) -> float:
    """Top-1 agreement rate; argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if model.num_classes != dataset.num_classes:
        raise ValueError(f"model has {model.num_classes} classes, dataset {dataset.num_classes}")
    return float(np.mean(predictions(model, dataset.images, batch_size) == dataset.labels))


# -- filtered sweeps -----------------------------------------------------------

@dataclass
class SweepReport:
    model_id: str
    variant: str
    mode: str
    records: list[tuple[float, float, int]] = field(default_factory=list)

    @property
    def sizes(self) -> list[float]:
        return [r[0] for r in self.records]

    @property
    def accuracies(self) -> list[float]:
        return [r[1] for r in self.records]

    def write_csv(self, path: Union[str, Path], config_digest: str = "", seed: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(csv_header(config_digest, seed, model=self.model_id))
            writer = csv.writer(fh)
            writer.writerow(["mode", "variant", "S", "accuracy", "n"])
            for s, acc, n in self.records:
                writer.writerow([self.mode, self.variant, s, repr(acc), n])


def filter_dataset_images(dataset: Dataset, mask) -> np.ndarray:
    """Filter in pixel space, then re-standardise; identity masks return the originals."""
    if mask.is_identity:
        return dataset.images
    pixels = dataset.destandardize()
    return dataset.standardize(filter_image(pixels, mask))


def filtered_accuracy_sweep(model: Classifier, dataset: Dataset, mode: str, sizes: Sequence[float],
                            variant: str = "as-written", model_id: str = "model",
                            batch_size: int = 250) -> SweepReport:
    h, w = dataset.image_shape[1:]
    sizes = sorted(sizes)
    if len(set(sizes)) != len(sizes):
        raise ValueError("filter sizes must be distinct")
    report = SweepReport(model_id, variant, mode)
    for s in sizes:
        mask = make_mask(h, w, s, mode, variant)
        images = filter_dataset_images(dataset, mask)
        acc = float(np.mean(predictions(model, images, batch_size) == dataset.labels))
        report.records.append((s, acc, len(dataset)))
    return report


# -- Fourier heat maps ---------------------------------------------------------

@dataclass
class FourierHeatMap:
    """Error rates indexed by frequency offset; cell (r, c) is offset (r - R, c - R)."""

    error: np.ndarray
    l2_norm: float
    n: int
    radius: int
    subset: np.ndarray = field(repr=False)

    def standard_error(self) -> np.ndarray:
        p = self.error
        return np.sqrt(np.maximum(p * (1 - p), 1e-12) / self.n)

    def write_csv(self, path: Union[str, Path], config_digest: str = "", seed: int = 0) -> None:
        subset_digest = hashlib.sha256(self.subset.astype("<i8").tobytes()).hexdigest()[:12]
        with open(path, "w", newline="") as fh:
            fh.write(csv_header(config_digest, seed, l2_norm=repr(self.l2_norm), n=self.n,
                                subset=subset_digest))
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "error_rate"])
            for (i, j), err in np.ndenumerate(self.error):
                writer.writerow([i, j, repr(float(err))])


def heatmap_subset(n_total: int, size: int, seed: int) -> np.ndarray:
    if size >= n_total:
        return np.arange(n_total)
    return np.sort(stream(seed, "heatmap-subset").choice(n_total, size=size, replace=False))


def fourier_heatmap(model: Classifier, dataset: Dataset, l2_norm: Optional[float] = None,
                    radius: Optional[int] = None, subset_size: int = 1000, seed: int = 0,
                    exploit_symmetry: bool = True, batch_size: int = 250) -> FourierHeatMap:
    """Error rate under additive Fourier basis noise at every frequency offset.

    For each offset (u, v) with |u|, |v| <= ``radius`` every image/channel gets
    the basis image of that frequency with norm ``l2_norm`` (in pixel units)
    and an independent random sign.  With ``exploit_symmetry`` each
    conjugate pair is evaluated once and mirrored.
    """
    _, h, w = dataset.image_shape
    if l2_norm is None:
        l2_norm = desk_heatmap_norm(h)
    if l2_norm < 0:
        raise ValueError("noise norm must be non-negative")
    if radius is None:
        radius = min(h, w) // 2
    if radius > min(h, w) // 2:
        raise ValueError("heat-map radius beyond Nyquist")
    subset = heatmap_subset(len(dataset), subset_size, seed)
    images = dataset.images[subset]
    labels = dataset.labels[subset]
    n, c = len(subset), images.shape[1]
    side = 2 * radius + 1
    error = np.full((side, side), np.nan)

    std = dataset.channel_std.reshape(1, c, 1, 1)
    ch, cw = h // 2, w // 2
    for r in range(side):
        for col in range(side):
            if not np.isnan(error[r, col]):
                continue
            u, v = r - radius, col - radius
            i, j = (ch + u) % h, (cw + v) % w
            basis = fourier_basis_noise(h, w, i, j, l2_norm, 1)
            signs = np.where(stream(seed, "heatmap-sign", u, v).random((n, c)) < 0.5, -1.0, 1.0)
            noise = (signs[:, :, None, None] * basis[None, None]) / std
            perturbed = (images + noise).astype(images.dtype, copy=False)
            err = float(np.mean(predictions(model, perturbed, batch_size) != labels))
            error[r, col] = err
            if exploit_symmetry:
                pr, pc = radius - u, radius - v
                if 0 <= pr < side and 0 <= pc < side:
                    error[pr, pc] = err
    return FourierHeatMap(error, float(l2_norm), n, radius, subset)


def conjugate_cell(radius: int, r: int, c: int) -> tuple[int, int]:
    return 2 * radius - r, 2 * radius - c


# -- perturbation spectra ------------------------------------------------------

@dataclass
class SpectrumReport:
    natural: np.ndarray
    perturbation: np.ndarray
    natural_ratio: float
    perturbation_ratio: float
    S: float
    n: int

    def write_csv(self, path: Union[str, Path], config_digest: str = "", seed: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(csv_header(config_digest, seed, S=self.S, n=self.n,
                                natural_ratio=repr(self.natural_ratio),
                                perturbation_ratio=repr(self.perturbation_ratio)))
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "natural_energy", "perturbation_energy"])
            for (i, j), nat in np.ndenumerate(self.natural):
                writer.writerow([i, j, repr(float(nat)), repr(float(self.perturbation[i, j]))])


def _mean_ratio(batch: np.ndarray, S: float) -> float:
    ratios = []
    for img in batch:
        if np.any(img):
            ratios.append(highfreq_energy_ratio(img, S))
    return float(np.mean(ratios)) if ratios else float("nan")


def perturbation_spectrum_report(model: Classifier, dataset: Dataset, cfg: HatConfig, n: int = 256,
                                 S: float = 8, seed: int = 0, batch_size: int = 64) -> SpectrumReport:
    """Energy maps of natural images and of PGD perturbations crafted against ``model``.

    Both are taken in pixel units (the perturbation is multiplied back by the
    channel std).  The mean high-frequency energy ratio is reported for each;
    it is NaN for an all-zero perturbation batch.
    """
    idx = heatmap_subset(len(dataset), n, seed)
    images, labels = dataset.images[idx], dataset.labels[idx]
    deltas = []
    for start in range(0, len(idx), batch_size):
        deltas.append(pgd_attack(model, images[start:start + batch_size], labels[start:start + batch_size],
                                 cfg.epsilon, cfg.eta, cfg.k, channel_std=dataset.std))
    delta_px = np.concatenate(deltas) * dataset.channel_std.reshape(1, -1, 1, 1)
    pixels = dataset.destandardize(images)
    return SpectrumReport(
        natural=spectrum_energy_map(pixels),
        perturbation=spectrum_energy_map(delta_px),
        natural_ratio=_mean_ratio(pixels, S),
        perturbation_ratio=_mean_ratio(delta_px, S),
        S=S,
        n=len(idx),
    )
