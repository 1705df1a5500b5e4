"""Dataset ingestion, standardisation and augmentations."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .models import checkpoint

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR10_RECORD = 3073
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Standardised images (N x C x H x W float32) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    mean: tuple[float, ...]
    std: tuple[float, ...]
    num_classes: int = 10
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) == 0:
            raise DatasetError("dataset needs a non-empty N x C x H x W image array")
        if len(self.labels) != len(self.images):
            raise DatasetError("image and label counts differ")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DatasetError(f"labels outside [0, {self.num_classes})")
        if len(self.mean) != self.images.shape[1] or len(self.std) != self.images.shape[1]:
            raise DatasetError("per-channel constants do not match channel count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    @property
    def channel_std(self) -> np.ndarray:
        return np.asarray(self.std, dtype=self.images.dtype)

    def subset(self, idx) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])

    def destandardize(self, images: Optional[np.ndarray] = None) -> np.ndarray:
        x = self.images if images is None else images
        return destandardize(x, self.mean, self.std)

    def standardize(self, pixels: np.ndarray) -> np.ndarray:
        return standardize(pixels, self.mean, self.std)


def _channel(v: Sequence[float], dtype) -> np.ndarray:
    return np.asarray(v, dtype=dtype).reshape(1, -1, 1, 1)


def standardize(pixels: np.ndarray, mean, std) -> np.ndarray:
    dtype = pixels.dtype if pixels.dtype in (np.float32, np.float64) else np.float32
    return ((pixels - _channel(mean, dtype)) / _channel(std, dtype)).astype(dtype, copy=False)


def destandardize(images: np.ndarray, mean, std) -> np.ndarray:
    return (images * _channel(std, images.dtype) + _channel(mean, images.dtype)).astype(images.dtype, copy=False)


def parse_cifar10_bytes(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Raw uint8 images (N x 3 x 32 x 32) and labels from CIFAR-10 binary records."""
    if len(blob) == 0 or len(blob) % CIFAR10_RECORD:
        raise DatasetError(f"CIFAR-10 file size {len(blob)} is not a multiple of {CIFAR10_RECORD}")
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetError(f"label byte {labels.max()} exceeds 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(directory: Union[str, Path], split: str = "train",
                 files: Optional[Sequence[str]] = None) -> Dataset:
    """Load the standard CIFAR-10 binary batches from ``directory``.

    Pixel bytes map to [0, 1] (byte/255) and are then standardised per channel
    with ``CIFAR10_MEAN`` / ``CIFAR10_STD``.
    """
    directory = Path(directory)
    if files is None:
        files = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    paths = [directory / f for f in files if (directory / f).exists()]
    if not paths:
        raise DatasetError(f"no CIFAR-10 batch files for split {split!r} in {directory}")
    imgs, labs = zip(*(parse_cifar10_bytes(p.read_bytes()) for p in paths))
    pixels = np.concatenate(imgs).astype(np.float32) / 255.0
    return Dataset(standardize(pixels, CIFAR10_MEAN, CIFAR10_STD), np.concatenate(labs),
                   CIFAR10_MEAN, CIFAR10_STD, 10, split)


def save_tensor_dataset(path: Union[str, Path], pixels: np.ndarray, labels: np.ndarray) -> None:
    """Store un-standardised images and labels in the checkpoint container."""
    checkpoint.save_checkpoint({"images": pixels.astype(np.float32),
                                "labels": np.asarray(labels, dtype=np.float32)}, path)


def load_tensor_dataset(path: Union[str, Path], mean=None, std=None, num_classes: Optional[int] = None,
                        split: str = "train") -> Dataset:
    arrays = checkpoint.load_arrays(path)
    if set(arrays) != {"images", "labels"}:
        raise DatasetError(f"tensor dataset must hold exactly 'images' and 'labels', got {sorted(arrays)}")
    pixels, labels = arrays["images"], arrays["labels"]
    if np.any(labels != np.round(labels)):
        raise DatasetError("labels must be integral")
    labels = labels.astype(np.int64)
    c = pixels.shape[1]
    mean = tuple(mean) if mean is not None else (0.0,) * c
    std = tuple(std) if std is not None else (1.0,) * c
    num_classes = num_classes or int(labels.max()) + 1
    return Dataset(standardize(pixels, mean, std), labels, mean, std, num_classes, split)


def synthetic_dataset(n: int, seed: int, image_size: int = 16, channels: int = 3, num_classes: int = 4,
                      noise: float = 0.25, split: str = "train") -> Dataset:
    """Smooth class-conditional images with a natural-image-like 1/f spectrum.

    Each class owns a fixed low-frequency template; samples add 1/f noise.
    Useful as a fast stand-in when CIFAR-10 is not on disk.
    """
    rng_t = np.random.default_rng(10_007)
    templates = np.stack([_pink_noise(rng_t, channels, image_size) for _ in range(num_classes)])
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    imgs = templates[labels] + noise * np.stack([_pink_noise(rng, channels, image_size) for _ in range(n)])
    pixels = np.clip(0.5 + 0.2 * imgs, 0.0, 1.0).astype(np.float32)
    mean = tuple(float(m) for m in pixels.mean(axis=(0, 2, 3)))
    std = tuple(float(s) for s in pixels.std(axis=(0, 2, 3)))
    return Dataset(standardize(pixels, mean, std), labels.astype(np.int64), mean, std, num_classes, split)


def _pink_noise(rng: np.random.Generator, channels: int, size: int) -> np.ndarray:
    f = np.fft.fftfreq(size)
    radius = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    radius[0, 0] = 1.0 / size
    spec = (rng.standard_normal((channels, size, size)) + 1j * rng.standard_normal((channels, size, size))) / radius
    spec[:, 0, 0] = 0
    img = np.fft.ifft2(spec).real
    return img / img.std()


# -- augmentations ---------------------------------------------------------------

def hflip(batch: np.ndarray) -> np.ndarray:
    return batch[..., ::-1].copy()


def crop(batch: np.ndarray, offsets: np.ndarray, pad: int, mode: str = "reflect") -> np.ndarray:
    """Pad every image by ``pad`` then cut the original extent at per-image offsets."""
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    out = np.empty_like(batch)
    for k, (dy, dx) in enumerate(offsets):
        out[k] = padded[k, :, dy:dy + h, dx:dx + w]
    return out


def augment_basic(batch: np.ndarray, seed: int, pad: int = 4, flip: Optional[bool] = None,
                  mode: str = "reflect") -> np.ndarray:
    """Random crop with ``pad``-pixel padding plus random horizontal flip.

    ``flip=True/False`` forces the flip for every image.
    """
    rng = np.random.default_rng(seed)
    n = len(batch)
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5 if flip is None else np.full(n, flip)
    out = crop(batch, offsets, pad, mode) if pad else batch.copy()
    out[flips] = out[flips][..., ::-1]
    return out


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(dtype)
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def mixup(batch: np.ndarray, labels: np.ndarray, num_classes: int, alpha: float = 0.8, seed: int = 0,
          lam: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of each image with a randomly paired one."""
    if alpha <= 0:
        raise ValueError("mixup beta parameter must be positive")
    if len(batch) < 2:
        raise ValueError("mixup needs a batch of at least two images")
    rng = np.random.default_rng(seed)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(batch))
    y = one_hot(labels, num_classes)
    mixed = lam * batch + (1 - lam) * batch[perm]
    return mixed.astype(batch.dtype, copy=False), (lam * y + (1 - lam) * y[perm]).astype(np.float32)


def cutmix(batch: np.ndarray, labels: np.ndarray, num_classes: int, seed: int = 0,
           lam: Optional[float] = None, box: Optional[tuple[int, int, int, int]] = None,
           ) -> tuple[np.ndarray, np.ndarray]:
    """Paste a random box from a paired image; labels weighted by the pasted area.

    ``box=(y0, x0, y1, x1)`` overrides the sampled box.  The label weight uses
    the clipped box, so it always matches the pixels actually replaced.
    """
    if len(batch) < 2:
        raise ValueError("cutmix needs a batch of at least two images")
    rng = np.random.default_rng(seed)
    n, _, h, w = batch.shape
    if lam is None:
        lam = float(rng.beta(1.0, 1.0))
    perm = rng.permutation(n)
    if box is None:
        ratio = np.sqrt(1.0 - lam)
        ch, cw = int(h * ratio), int(w * ratio)
        cy, cx = int(rng.integers(h)), int(rng.integers(w))
        box = (cy - ch // 2, cx - cw // 2, cy + ch // 2, cx + cw // 2)
    y0, x0 = max(box[0], 0), max(box[1], 0)
    y1, x1 = min(box[2], h), min(box[3], w)
    out = batch.copy()
    area = max(y1 - y0, 0) * max(x1 - x0, 0)
    if area:
        out[:, :, y0:y1, x0:x1] = batch[perm][:, :, y0:y1, x0:x1]
    pasted = area / (h * w)
    y = one_hot(labels, num_classes)
    return out, ((1 - pasted) * y + pasted * y[perm]).astype(np.float32)
