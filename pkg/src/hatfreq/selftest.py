"""Fast invariant checks runnable from the command line (``hatfreq selftest``)."""
from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import synthetic_dataset
from .freq_eval import evaluate_accuracy, filtered_accuracy_sweep, fourier_heatmap
from .hat import HatConfig, hat_minibatch
from .losses import ce_loss
from .models import ViTConfig, build_model, load_checkpoint, save_checkpoint
from .spectral import (
    attention_lowpass_decay,
    dft2,
    filter_image,
    idft2,
    make_mask,
    random_attention,
)
from .utils import stream


def _mask_counts() -> None:
    counts = (make_mask(8, 8, 4, "low").ones, make_mask(8, 8, 4, "low", "square").ones,
              make_mask(8, 8, 4, "high").ones)
    assert counts == (55, 25, 9), counts


def _round_trip() -> None:
    x = stream(0, "selftest", "fft").random((3, 32, 32)).astype(np.float32)
    err = np.max(np.abs(idft2(dft2(x)) - x))
    assert err < 1e-5, err


def _complementarity() -> None:
    x = stream(0, "selftest", "comp").random((3, 16, 16))
    for s in range(0, 17, 2):
        y = filter_image(x, make_mask(16, 16, s, "low")) + filter_image(x, make_mask(16, 16, 16 - s, "high"))
        assert np.max(np.abs(y - x)) < 1e-10, s


def _gradcheck() -> None:
    rng = stream(0, "selftest", "grad")
    w = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1])
    x = rng.standard_normal((4, 5))
    report = ad.grad_check(lambda t: ce_loss(ad.matmul(ad.tanh(t), ad.Tensor(w)), labels),
                           ad.Tensor(x, dtype=np.float64), tol=1e-6)
    assert report.passed, report.max_rel_error


def _checkpoint() -> None:
    model = build_model("vit", ViTConfig(image_size=8, patch_size=4, embed_dim=8, depth=1, heads=2,
                                         num_classes=3), seed=0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.shat"
        save_checkpoint(model.params, path)
        back = load_checkpoint(path)
    assert all(np.array_equal(back[k].data, v.data) for k, v in model.params.items())


def _attention_decay() -> None:
    for s in range(10):
        rng = stream(s, "selftest", "attn")
        ratios = attention_lowpass_decay(random_attention(32, rng), rng.standard_normal(32), 30)
        assert ratios[-1] < 1e-2 * ratios[0], s
    assert attention_lowpass_decay(np.full((16, 16), 1 / 16), np.arange(16.0), 1)[0] == 0.0


def _tiny_model():
    ds = synthetic_dataset(64, 0, image_size=8, num_classes=3)
    model = build_model("vit", ViTConfig(image_size=8, patch_size=4, embed_dim=8, depth=1, heads=2,
                                         num_classes=3), seed=0)
    return model, ds


def _pgd_bound() -> None:
    model, ds = _tiny_model()
    cfg = HatConfig(freq_mode="high", freq_size=4)
    res = hat_minibatch(model, ds.images[:16], ds.labels[:16], cfg, channel_std=ds.std)
    eps = (cfg.epsilon / np.asarray(ds.std)).reshape(1, -1, 1, 1)
    for d in res.deltas:
        assert np.all(np.abs(d) <= eps * (1 + 1e-6))


def _sweep_anchor() -> None:
    model, ds = _tiny_model()
    clean = evaluate_accuracy(model, ds)
    rep = filtered_accuracy_sweep(model, ds, "low", [8])
    assert rep.accuracies[0] == clean


def _heatmap_anchor() -> None:
    model, ds = _tiny_model()
    clean_err = 1 - evaluate_accuracy(model, ds)
    hm = fourier_heatmap(model, ds, l2_norm=0.0, radius=2, subset_size=64)
    assert np.all(hm.error == clean_err)


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("mask-cardinality", _mask_counts),
    ("dft-round-trip", _round_trip),
    ("mask-complementarity", _complementarity),
    ("autodiff-gradcheck", _gradcheck),
    ("checkpoint-round-trip", _checkpoint),
    ("attention-lowpass-decay", _attention_decay),
    ("pgd-linf-bound", _pgd_bound),
    ("sweep-identity-anchor", _sweep_anchor),
    ("heatmap-zero-anchor", _heatmap_anchor),
]


def run_selftest(emit: Callable[[str], None] = print) -> tuple[int, int]:
    passed = failed = 0
    for name, check in CHECKS:
        try:
            check()
        except Exception as exc:  # report every failure, keep going
            failed += 1
            emit(f"FAIL {name}: {type(exc).__name__}: {exc}")
        else:
            passed += 1
            emit(f"PASS {name}")
    emit(f"selftest: {passed} passed, {failed} failed")
    return passed, failed
