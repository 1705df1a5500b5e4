"""Adversarial training with accumulated gradients and frequency-domain
analysis tools for small vision transformers and CNNs, on numpy."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, parse_config
from .data import Dataset, load_cifar10, synthetic_dataset
from .freq_eval import evaluate_accuracy, filtered_accuracy_sweep, fourier_heatmap, perturbation_spectrum_report
from .hat import HatConfig, hat_minibatch, pgd_attack
from .models import CNNConfig, Classifier, ViTConfig, build_model, load_checkpoint, save_checkpoint
from .train import ablation_matrix, train, train_baseline

__all__ = [
    "CNNConfig", "Classifier", "ConfigError", "Dataset", "HatConfig", "RunConfig", "ViTConfig",
    "ablation_matrix", "build_model", "evaluate_accuracy", "filtered_accuracy_sweep", "fourier_heatmap",
    "hat_minibatch", "load_checkpoint", "load_cifar10", "parse_config", "perturbation_spectrum_report",
    "pgd_attack", "save_checkpoint", "synthetic_dataset", "train", "train_baseline",
]
