"""Training loops: plain supervised, HAT, frequency-constrained AT, distillation."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, augment_basic, cutmix, mixup
from .hat import HatConfig, hat_minibatch
from .losses import hard_decision, supervised_loss
from .models import Classifier, ModelConfig, build_model, save_checkpoint
from .utils import config_hash, csv_header, derive_seed, stream

log = logging.getLogger(__name__)

# wall_seconds is the only column that differs between identical re-runs
METRIC_FIELDS = ("epoch", "phase", "train_loss", "train_acc", "eval_acc", "wall_seconds")


class AdamW:
    """Adam with decoupled weight decay (applied to matrices and kernels only)."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> dict[str, Tensor]:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        new = {}
        for name, p in params.items():
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            w = p.data
            if p.ndim >= 2 and self.weight_decay:
                w = w * (1 - lr * self.weight_decay)
            new[name] = Tensor((w - lr * update).astype(p.dtype, copy=False), requires_grad=True)
        return new


def lr_at(step: int, total_steps: int, warmup_steps: int, lr: float, min_lr: float) -> float:
    """Linear warmup to ``lr`` followed by cosine decay to ``min_lr``."""
    if warmup_steps and step < warmup_steps:
        return lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return min_lr + 0.5 * (lr - min_lr) * (1 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    model: Classifier
    optimizer: AdamW
    epoch: int
    seed: int
    log: list[dict] = field(default_factory=list)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.model.params


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _prepare_batch(images: np.ndarray, labels: np.ndarray, cfg: HatConfig, num_classes: int,
                   seed: int, epoch: int, index: int, adversarial: bool):
    use_aug = cfg.augment_adv or not adversarial
    x, y = images, labels
    if not use_aug:
        return x, y
    if cfg.augment == "basic":
        x = augment_basic(x, derive_seed(seed, "augment", epoch, index))
    if len(x) >= 2:
        if cfg.mixup_alpha > 0:
            x, y = mixup(x, y, num_classes, cfg.mixup_alpha, derive_seed(seed, "mixup", epoch, index))
        if cfg.cutmix:
            x, y = cutmix(x, y, num_classes, derive_seed(seed, "cutmix", epoch, index))
    return x, y


def _evaluate(model: Classifier, dataset: Optional[Dataset]) -> float:
    if dataset is None:
        return float("nan")
    return accuracy(model.predict_logits(dataset.images), dataset.labels)


def _fit(kind: str, model_config: ModelConfig, dataset: Dataset, cfg: HatConfig, seed: int,
         phase_of: Callable[[int], str], eval_dataset: Optional[Dataset], out_dir: Optional[Path],
         teacher: Optional[Classifier], dtype) -> TrainState:
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    model = build_model(kind, model_config, derive_seed(seed, "init"), dtype)
    opt = AdamW(model.params, cfg.weight_decay)
    state = TrainState(model, opt, 0, seed)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = steps_per_epoch * cfg.warmup_epochs
    std = dataset.std
    images = dataset.images.astype(dtype, copy=False)
    step = 0
    metrics_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        with open(metrics_path, "w", newline="") as fh:
            fh.write(csv_header(config_hash({"kind": kind, "model": model_config, "hat": cfg}), seed))
            csv.writer(fh).writerow(METRIC_FIELDS)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        phase = phase_of(epoch)
        adversarial = phase == "adv"
        order = stream(seed, "shuffle", epoch).permutation(len(dataset))
        loss_sum = acc_sum = 0.0
        seen = 0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x, y = _prepare_batch(images[idx], dataset.labels[idx], cfg, dataset.num_classes,
                                  seed, epoch, b, adversarial)
            x = x.astype(dtype, copy=False)
            teacher_labels = hard_decision(teacher.predict_logits(x)) if teacher is not None else None
            if adversarial:
                res = hat_minibatch(state.model, x, y, cfg, channel_std=std, teacher_labels=teacher_labels)
                grads, batch_loss, logits = res.grads, float(np.sum(res.losses)), res.clean_logits
            else:
                out = state.model.logits(x)
                loss = supervised_loss(out, y, teacher_labels)
                gmap = ad.backward(loss)
                grads = {k: gmap.get(p, np.zeros(p.shape, dtype=p.dtype)) for k, p in state.model.params.items()}
                batch_loss, logits = float(loss.data), out.data
            lr = lr_at(step, total, warmup, cfg.lr, cfg.min_lr)
            state.model = state.model.with_params(opt.step(state.model.params, grads, lr))
            step += 1
            loss_sum += batch_loss * len(idx)
            acc_sum += accuracy(logits, y) * len(idx)
            seen += len(idx)
        state.epoch = epoch
        record = {
            "epoch": epoch,
            "phase": phase,
            "train_loss": loss_sum / seen,
            "train_acc": acc_sum / seen,
            "eval_acc": _evaluate(state.model, eval_dataset),
            "wall_seconds": time.perf_counter() - start,
        }
        state.log.append(record)
        log.info("epoch %d [%s] loss %.4f acc %.4f eval %.4f", epoch, phase,
                 record["train_loss"], record["train_acc"], record["eval_acc"])
        if out_dir is not None:
            with open(metrics_path, "a", newline="") as fh:
                csv.writer(fh).writerow([record[k] if not isinstance(record[k], float) else repr(record[k])
                                         for k in METRIC_FIELDS])
            save_checkpoint(state.model.params, out_dir / "checkpoint.shat")
    return state


def train(kind: str, model_config: ModelConfig, dataset: Dataset, cfg: HatConfig, seed: int = 0,
          eval_dataset: Optional[Dataset] = None, out_dir: Union[str, Path, None] = None,
          teacher: Optional[Classifier] = None, dtype=np.float32) -> TrainState:
    """Adversarial epochs first (``ceil(adv_fraction * epochs)`` of them), then normal epochs."""
    n_adv = cfg.adversarial_epochs()
    return _fit(kind, model_config, dataset, cfg, seed,
                lambda epoch: "adv" if epoch <= n_adv else "normal",
                eval_dataset, Path(out_dir) if out_dir else None, teacher, dtype)


def train_baseline(kind: str, model_config: ModelConfig, dataset: Dataset, cfg: HatConfig, seed: int = 0,
                   eval_dataset: Optional[Dataset] = None, out_dir: Union[str, Path, None] = None,
                   teacher: Optional[Classifier] = None, dtype=np.float32) -> TrainState:
    """Plain supervised training; HAT fields of ``cfg`` are ignored."""
    return _fit(kind, model_config, dataset, cfg, seed, lambda epoch: "normal",
                eval_dataset, Path(out_dir) if out_dir else None, teacher, dtype)


def epoch_phases(cfg: HatConfig) -> list[str]:
    n_adv = cfg.adversarial_epochs()
    return ["adv" if e <= n_adv else "normal" for e in range(1, cfg.epochs + 1)]


ABLATION_FIELDS = ("strategy", "freq_mode", "S", "top1", "base_config_hash", "config_hash")


def ablation_matrix(kind: str, model_config: ModelConfig, dataset: Dataset, eval_dataset: Dataset,
                    base: HatConfig, seed: int = 0, S: Optional[float] = None,
                    out_path: Union[str, Path, None] = None, dtype=np.float32) -> list[dict]:
    """Baseline plus adversarial training with low-, high- and full-frequency perturbations."""
    S = base.freq_size if S is None else S
    base_hash = config_hash({"kind": kind, "model": model_config, "hat": base, "seed": seed})
    runs = [
        ("baseline", base.with_(adv_fraction=0.0, freq_mode="full"), "full"),
        ("low", base.with_(freq_mode="low", freq_size=S), "low"),
        ("high", base.with_(freq_mode="high", freq_size=S), "high"),
        ("full", base.with_(freq_mode="full"), "full"),
    ]
    rows = []
    for name, cfg, mode in runs:
        state = train(kind, model_config, dataset, cfg, seed, dtype=dtype)
        rows.append({
            "strategy": name,
            "freq_mode": mode,
            "S": S if mode != "full" else "",
            "top1": _evaluate(state.model, eval_dataset),
            "base_config_hash": base_hash,
            "config_hash": config_hash({"kind": kind, "model": model_config, "hat": cfg, "seed": seed}),
        })
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            fh.write(csv_header(base_hash, seed))
            writer = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows
