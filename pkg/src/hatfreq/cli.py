"""``hatfreq`` command line: one binary, one subcommand per experiment.

Every subcommand takes ``--config FILE`` plus any number of
``--section.key=value`` overrides.  Failures print a single line

    error code=<code> command=<name> message=<text>

on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .autodiff import Tensor
from .config import ConfigError, RunConfig, dump_config, parse_config
from .data import Dataset, DatasetError, load_cifar10, load_tensor_dataset, standardize, synthetic_dataset
from .freq_eval import (
    evaluate_accuracy,
    filtered_accuracy_sweep,
    fourier_heatmap,
    perturbation_spectrum_report,
)
from .models import CheckpointError, Classifier, build_model, load_checkpoint
from .selftest import run_selftest
from .spectral import attention_lowpass_decay, random_attention, write_decay_csv
from .train import ablation_matrix, train
from .utils import config_hash, csv_header, derive_seed, stream

THREADS_ENV = "HATFREQ_NUM_THREADS"

COMMANDS = ("train", "eval", "sweep", "heatmap", "spectrum", "ablation", "theorem1", "selftest")
NEEDS_DATA = {"train", "eval", "sweep", "heatmap", "spectrum", "ablation"}
NEEDS_CHECKPOINT = {"eval", "sweep", "heatmap", "spectrum"}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.precision == "float64" else np.float32


def _limit(ds: Dataset, n: int) -> Dataset:
    return ds.subset(np.arange(min(n, len(ds)))) if n > 0 else ds


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d, m = cfg.data, cfg.model
    try:
        if d.source == "cifar10":
            tr, ev = load_cifar10(d.cifar_dir, "train"), load_cifar10(d.cifar_dir, "test")
        elif d.source == "tensor":
            tr = load_tensor_dataset(d.train_tensors, num_classes=m.num_classes, split="train")
            ev = load_tensor_dataset(d.eval_tensors, num_classes=m.num_classes, split="test")
        else:
            tr = synthetic_dataset(d.synthetic_train, derive_seed(cfg.seed, "synthetic", "train"),
                                   m.image_size, m.channels, m.num_classes)
            raw = synthetic_dataset(d.synthetic_eval, derive_seed(cfg.seed, "synthetic", "eval"),
                                    m.image_size, m.channels, m.num_classes, split="test")
            # evaluation data shares the training normalisation
            ev = Dataset(standardize(raw.destandardize(), tr.mean, tr.std), raw.labels,
                         tr.mean, tr.std, raw.num_classes, "test")
    except (OSError, CheckpointError, DatasetError) as exc:
        raise CliError("unreadable-dataset", str(exc)) from exc
    if tr.image_shape != (m.channels, m.image_size, m.image_size):
        raise CliError("bad-dataset", f"dataset images are {tr.image_shape}, model expects "
                                      f"{(m.channels, m.image_size, m.image_size)}")
    return _limit(tr, d.train_limit), _limit(ev, d.eval_limit)


def load_model(cfg: RunConfig) -> Classifier:
    path = cfg.eval.checkpoint
    if path is None:
        raise CliError("missing-input", "this command needs --checkpoint=PATH")
    if not Path(path).exists():
        raise CliError("missing-input", f"checkpoint {path!r} does not exist")
    template = build_model(cfg.model.kind, cfg.model.build(), 0, _dtype(cfg))
    try:
        params = load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError("bad-checkpoint", f"{type(exc).__name__}: {exc}") from exc
    expected = {k: v.shape for k, v in template.params.items()}
    found = {k: v.shape for k, v in params.items()}
    if expected != found:
        raise CliError("bad-checkpoint", "checkpoint tensors do not match the configured model")
    params = {k: Tensor(v.data.astype(_dtype(cfg)), requires_grad=True) for k, v in params.items()}
    return template.with_params(params)


def _prepare_run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    (out / "seed.txt").write_text(f"{cfg.seed}\n")
    (out / "VERSION").write_text(version_string() + "\n")
    return out


def _digest(cfg: RunConfig) -> str:
    return config_hash(cfg.to_dict())


def cmd_train(cfg: RunConfig, out: Path) -> str:
    tr, ev = load_datasets(cfg)
    state = train(cfg.model.kind, cfg.model.build(), tr, cfg.hat, cfg.seed, eval_dataset=ev,
                  out_dir=out, dtype=_dtype(cfg))
    last = state.log[-1] if state.log else {}
    return f"trained {cfg.hat.epochs} epochs, final eval accuracy {last.get('eval_acc', float('nan')):.4f}"


def cmd_eval(cfg: RunConfig, out: Path) -> str:
    model = load_model(cfg)
    _, ev = load_datasets(cfg)
    acc = evaluate_accuracy(model, ev)
    with open(out / "eval.csv", "w", newline="") as fh:
        fh.write(csv_header(_digest(cfg), cfg.seed))
        writer = csv.writer(fh)
        writer.writerow(["split", "accuracy", "n"])
        writer.writerow([ev.split, repr(acc), len(ev)])
    return f"accuracy {acc:.4f} on {len(ev)} images"


def cmd_sweep(cfg: RunConfig, out: Path) -> str:
    model = load_model(cfg)
    _, ev = load_datasets(cfg)
    side = min(ev.image_shape[1:])
    sizes = cfg.eval.sweep_sizes or list(range(4, side + 1, 4))
    rows = []
    for mode in cfg.eval.sweep_modes:
        for variant in cfg.eval.mask_variants:
            rep = filtered_accuracy_sweep(model, ev, mode, sizes, variant,
                                          model_id=cfg.eval.checkpoint)
            rows += [(mode, variant, s, repr(a), n) for s, a, n in rep.records]
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write(csv_header(_digest(cfg), cfg.seed, model=cfg.eval.checkpoint))
        writer = csv.writer(fh)
        writer.writerow(["mode", "variant", "S", "accuracy", "n"])
        writer.writerows(rows)
    return f"{len(rows)} sweep points"


def cmd_heatmap(cfg: RunConfig, out: Path) -> str:
    model = load_model(cfg)
    _, ev = load_datasets(cfg)
    hm = fourier_heatmap(model, ev, cfg.eval.heatmap_norm, cfg.eval.heatmap_radius,
                         cfg.eval.heatmap_subset, seed=cfg.seed)
    hm.write_csv(out / "heatmap.csv", _digest(cfg), cfg.seed)
    return f"{hm.error.shape[0]}x{hm.error.shape[1]} heat map at norm {hm.l2_norm:.4f}"


def cmd_spectrum(cfg: RunConfig, out: Path) -> str:
    model = load_model(cfg)
    _, ev = load_datasets(cfg)
    rep = perturbation_spectrum_report(model, ev, cfg.hat, cfg.eval.spectrum_n, cfg.eval.spectrum_size,
                                       seed=cfg.seed)
    rep.write_csv(out / "spectrum.csv", _digest(cfg), cfg.seed)
    return f"high-frequency ratio: natural {rep.natural_ratio:.4g}, perturbation {rep.perturbation_ratio:.4g}"


def cmd_ablation(cfg: RunConfig, out: Path) -> str:
    tr, ev = load_datasets(cfg)
    rows = ablation_matrix(cfg.model.kind, cfg.model.build(), tr, ev, cfg.hat, cfg.seed,
                           cfg.eval.ablation_size, out / "ablation.csv", dtype=_dtype(cfg))
    return ", ".join(f"{r['strategy']}={r['top1']:.4f}" for r in rows)


def cmd_theorem1(cfg: RunConfig, out: Path) -> str:
    n, kmax = cfg.eval.attention_n, cfg.eval.attention_kmax
    if n < 2 or kmax < 1:
        raise CliError("bad-value", "theorem1 needs n >= 2 and kmax >= 1")
    rng = stream(cfg.seed, "theorem1")
    ratios = attention_lowpass_decay(random_attention(n, rng), rng.standard_normal(n), kmax)
    write_decay_csv(out / "theorem1.csv", ratios, csv_header(_digest(cfg), cfg.seed, n=n))
    return f"ratio k=1 {ratios[0]:.4g}, k={kmax} {ratios[-1]:.4g}"


HANDLERS = {
    "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "heatmap": cmd_heatmap,
    "spectrum": cmd_spectrum, "ablation": cmd_ablation, "theorem1": cmd_theorem1,
}


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise CliError("bad-env", f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(n, 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hatfreq",
        description="Adversarial training and frequency analysis for small vision models.",
        epilog="Override any config key with --section.key=value, e.g. --hat.k=2 --seed=3. "
               f"Set {THREADS_ENV} to cap BLAS threads.")
    parser.add_argument("--version", action="version", version=f"hatfreq {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "train": "train a model (adversarial epochs first, then normal epochs)",
        "eval": "top-1 accuracy of a checkpoint",
        "sweep": "accuracy on low/high-pass filtered test images",
        "heatmap": "Fourier heat map of error rates",
        "spectrum": "energy spectra of natural images vs PGD perturbations",
        "ablation": "baseline vs low/high/full-frequency adversarial training",
        "theorem1": "high/low frequency ratio of repeated attention (k, ratio)",
        "selftest": "run the built-in invariant checks",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="YAML config file")
    return parser


def _fail(command: str, code: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"error code={code} command={command} message={message}", file=sys.stderr)
    return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    command = args.command or "none"
    if args.command is None:
        parser.print_help(sys.stderr)
        return _fail(command, "usage", "no command given")
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if command == "selftest":
        _, failed = run_selftest()
        return 1 if failed else 0
    bad = [a for a in extra if not a.startswith("--")]
    if bad:
        return _fail(command, "usage", f"unexpected argument {bad[0]!r}")
    try:
        if args.config is not None and not Path(args.config).exists():
            raise CliError("missing-input", f"config file {args.config!r} does not exist")
        cfg = parse_config(args.config, extra, require_data=command in NEEDS_DATA)
        if command in NEEDS_CHECKPOINT and cfg.eval.checkpoint is None:
            raise CliError("missing-input", "this command needs --checkpoint=PATH")
        with _thread_limit():
            out = _prepare_run_dir(cfg)
            summary = HANDLERS[command](cfg, out)
    except (ConfigError, CliError) as exc:
        return _fail(command, exc.code, str(exc))
    except (ValueError, OSError) as exc:
        return _fail(command, "runtime", f"{type(exc).__name__}: {exc}")
    print(f"{command}: {summary} -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
