from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor


def _targets(labels, num_classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if not np.issubdtype(labels.dtype, np.integer):
            raise TypeError("hard labels must be integers")
        out = np.zeros((len(labels), num_classes), dtype=dtype)
        out[np.arange(len(labels)), labels] = 1
        return out
    if labels.shape[1] != num_classes:
        raise ShapeError(f"soft labels have {labels.shape[1]} classes, logits {num_classes}")
    if np.any(labels < 0) or np.max(np.abs(labels.sum(axis=1) - 1.0)) > 1e-4:
        raise ValueError("soft labels must be non-negative rows summing to 1")
    return labels.astype(dtype)


def ce_loss(logits, labels) -> Tensor:
    """Batch-mean cross-entropy; ``labels`` are class ids or soft label rows."""
    logits = as_tensor(logits)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {len(labels)} labels")
    target = _targets(labels, logits.shape[1], logits.dtype)
    return ad.neg(ad.mean(ad.sum(ad.mul(ad.log_softmax(logits, axis=1), target), axis=1)))


def symmetric_kl(logits_p, logits_q) -> Tensor:
    """Batch mean of (KL(p||q) + KL(q||p)) / 2 between the two softmax outputs."""
    logits_p, logits_q = as_tensor(logits_p), as_tensor(logits_q)
    if logits_p.shape != logits_q.shape:
        raise ShapeError(f"logit shapes differ: {logits_p.shape} vs {logits_q.shape}")
    log_p = ad.log_softmax(logits_p, axis=1)
    log_q = ad.log_softmax(logits_q, axis=1)
    # KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
    per_row = ad.sum(ad.mul(ad.exp(log_p) - ad.exp(log_q), log_p - log_q), axis=1)
    return ad.scale(ad.mean(per_row), 0.5)


def hard_decision(teacher_logits) -> np.ndarray:
    """Teacher argmax; ties go to the lowest class index."""
    data = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    return np.argmax(data, axis=1)


def distill_loss(student_logits, labels, teacher_logits) -> Tensor:
    """0.5 * CE(student, labels) + 0.5 * CE(student, teacher hard decision)."""
    student_logits = as_tensor(student_logits)
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    if t.ndim != 2 or t.shape[1] != student_logits.shape[1]:
        raise ShapeError(f"teacher has {t.shape[-1]} classes, student {student_logits.shape[1]}")
    return ad.scale(ce_loss(student_logits, labels) + ce_loss(student_logits, hard_decision(t)), 0.5)


def supervised_loss(logits, labels, teacher_labels=None) -> Tensor:
    """CE, or the hard-label distillation loss when teacher decisions are given."""
    if teacher_labels is None:
        return ce_loss(logits, labels)
    return ad.scale(ce_loss(logits, labels) + ce_loss(logits, np.asarray(teacher_labels)), 0.5)
