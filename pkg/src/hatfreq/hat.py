"""Adversarial training step with accumulated weight gradients.

One call of :func:`hat_minibatch` runs K PGD steps on a single minibatch.
Every step backpropagates once to get the weight gradient *and* the
perturbation gradient; weight gradients are summed over the K steps and the
perturbation takes a clipped sign step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .losses import ce_loss, supervised_loss, symmetric_kl
from .models import Classifier
from .spectral import FrequencyMask, filter_tensor, make_mask

FREQ_MODES = ("full", "high", "low")


@dataclass(frozen=True)
class HatConfig:
    """Perturbation, loss-weight and optimisation settings.

    ``epsilon`` and ``eta`` are in un-standardised pixel units; they are
    divided by the per-channel std before acting on standardised inputs.
    """

    epsilon: float = 2 / 255
    eta: float = 1 / 255
    k: int = 3
    alpha: float = 3.0
    beta: float = 0.01
    adv_fraction: float = 2 / 3
    freq_mode: str = "full"
    freq_size: float = 8
    mask_variant: str = "as-written"
    lr: float = 1e-3
    min_lr: float = 1e-5
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    epochs: int = 50
    batch_size: int = 128
    augment: str = "basic"
    mixup_alpha: float = 0.0
    cutmix: bool = False
    augment_adv: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0 <= self.adv_fraction <= 1:
            raise ValueError("adv_fraction must lie in [0, 1]")
        if self.freq_mode not in FREQ_MODES:
            raise ValueError(f"freq_mode must be one of {FREQ_MODES}")
        if self.augment not in ("none", "basic"):
            raise ValueError("augment must be 'none' or 'basic'")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs, batch_size and warmup_epochs must be non-negative (batch_size >= 1)")
        if self.lr <= 0 or self.min_lr < 0 or self.weight_decay < 0:
            raise ValueError("learning rates must be positive and weight decay non-negative")

    def adversarial_epochs(self) -> int:
        # guard against 2/3 * 300 = 200.00000000000003
        return math.ceil(round(self.adv_fraction * self.epochs, 9))

    def mask(self, h: int, w: int) -> Optional[FrequencyMask]:
        if self.freq_mode == "full":
            return None
        return make_mask(h, w, self.freq_size, self.freq_mode, self.mask_variant)

    def with_(self, **changes) -> "HatConfig":
        return replace(self, **changes)


@dataclass
class HatStepResult:
    grads: dict[str, np.ndarray]
    delta: np.ndarray
    deltas: list[np.ndarray] = field(repr=False)
    losses: list[float]
    clean_logits: np.ndarray = field(repr=False)


def _channel_bounds(cfg: HatConfig, x: np.ndarray, channel_std) -> tuple[np.ndarray, np.ndarray]:
    c = x.shape[1]
    std = np.ones(c) if channel_std is None else np.asarray(channel_std, dtype=np.float64)
    if std.shape != (c,):
        raise ValueError(f"channel_std must have {c} entries")
    eps = (cfg.epsilon / std).reshape(1, c, 1, 1).astype(x.dtype)
    eta = (cfg.eta / std).reshape(1, c, 1, 1).astype(x.dtype)
    return eps, eta


def step_loss(model: Classifier, x: np.ndarray, y, applied, t: int, cfg: HatConfig,
              teacher_labels=None) -> tuple[Tensor, Tensor]:
    """Loss of PGD step ``t`` (1-based) given the applied perturbation tensor.

    Returns ``(loss, adversarial_logits)``.
    """
    logits_adv = model.logits(ad.add(Tensor(x), applied))
    if t == 1:
        return supervised_loss(logits_adv, y, teacher_labels), logits_adv
    # clean logits recomputed each step so the weight gradient flows through both KL branches
    logits_clean = model.logits(x)
    loss = ad.add(ad.scale(supervised_loss(logits_adv, y, teacher_labels), cfg.alpha),
                  ad.scale(symmetric_kl(logits_adv, logits_clean), cfg.beta))
    return ad.scale(loss, 1.0 / (cfg.k - 1)), logits_adv


def hat_minibatch(model: Classifier, x: np.ndarray, y, cfg: HatConfig, channel_std=None,
                  teacher_labels=None) -> HatStepResult:
    """K accumulated-gradient PGD steps on one minibatch.

    Returns the summed weight gradients g_K, the final perturbation and the
    full perturbation history (delta_0 .. delta_K).
    """
    x = np.asarray(x, dtype=next(iter(model.params.values())).dtype)
    eps, eta = _channel_bounds(cfg, x, channel_std)
    mask = cfg.mask(x.shape[2], x.shape[3])
    delta = np.zeros_like(x)
    deltas = [delta]
    grads = {name: np.zeros(p.shape, dtype=p.dtype) for name, p in model.params.items()}
    losses: list[float] = []
    clean_logits = None
    for t in range(1, cfg.k + 1):
        d = Tensor(delta, requires_grad=True)
        applied = filter_tensor(d, mask) if mask is not None else d
        try:
            loss, logits_adv = step_loss(model, x, y, applied, t, cfg, teacher_labels)
        except NonFiniteError as exc:
            raise NonFiniteError(f"HAT step {t}/{cfg.k}: {exc}") from exc
        if t == 1:
            clean_logits = logits_adv.data
        gmap = ad.backward(loss)
        for name, p in model.params.items():
            if p in gmap:
                grads[name] += gmap[p]
        gd = gmap.get(d, np.zeros_like(delta))
        delta = np.clip(delta + eta * np.sign(gd), -eps, eps).astype(x.dtype, copy=False)
        deltas.append(delta)
        losses.append(float(loss.data))
    return HatStepResult(grads, delta, deltas, losses, clean_logits)


def pgd_attack(model: Classifier, x: np.ndarray, y, epsilon: float, eta: float, k: int,
               channel_std=None, mask: Optional[FrequencyMask] = None) -> np.ndarray:
    """Standard L-inf PGD maximising CE from a zero start; ``k=0`` returns zeros."""
    x = np.asarray(x, dtype=next(iter(model.params.values())).dtype)
    c = x.shape[1]
    std = np.ones(c) if channel_std is None else np.asarray(channel_std, dtype=np.float64)
    eps = (epsilon / std).reshape(1, c, 1, 1).astype(x.dtype)
    step = (eta / std).reshape(1, c, 1, 1).astype(x.dtype)
    delta = np.zeros_like(x)
    for _ in range(k):
        d = Tensor(delta, requires_grad=True)
        applied = filter_tensor(d, mask) if mask is not None else d
        loss = ce_loss(model.logits(ad.add(Tensor(x), applied)), y)
        gd = ad.backward(loss).get(d, np.zeros_like(delta))
        delta = np.clip(delta + step * np.sign(gd), -eps, eps).astype(x.dtype, copy=False)
    return delta
