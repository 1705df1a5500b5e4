"""Run configuration: YAML file + ``--section.key=value`` overrides + defaults."""
from __future__ import annotations

import dataclasses
import difflib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import yaml

from .hat import HatConfig
from .models import CNNConfig, ViTConfig


class ConfigError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ModelSection:
    kind: str = "vit"
    image_size: int = 32
    channels: int = 3
    num_classes: int = 10
    patch_size: int = 4
    embed_dim: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: float = 4.0
    pooling: str = "mean"
    widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    groups: int = 8

    def build(self) -> Union[ViTConfig, CNNConfig]:
        if self.kind == "vit":
            return ViTConfig(self.image_size, self.patch_size, self.channels, self.embed_dim, self.depth,
                             self.heads, self.mlp_ratio, self.num_classes, self.pooling)
        if self.kind == "cnn":
            return CNNConfig(self.image_size, self.channels, tuple(self.widths), self.num_classes, self.groups)
        raise ConfigError("bad-value", f"model.kind must be 'vit' or 'cnn', got {self.kind!r}")


@dataclass
class DataSection:
    source: str = "cifar10"
    cifar_dir: Optional[str] = None
    train_tensors: Optional[str] = None
    eval_tensors: Optional[str] = None
    synthetic_train: int = 2048
    synthetic_eval: int = 512
    train_limit: int = 0
    eval_limit: int = 0


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None
    sweep_modes: list[str] = field(default_factory=lambda: ["low", "high"])
    # None: every multiple of 4 up to the image side
    sweep_sizes: Optional[list[float]] = None
    mask_variants: list[str] = field(default_factory=lambda: ["as-written", "square"])
    heatmap_norm: Optional[float] = None
    heatmap_radius: Optional[int] = None
    heatmap_subset: int = 1000
    spectrum_n: int = 256
    spectrum_size: float = 8
    attention_n: int = 64
    attention_kmax: int = 50
    ablation_size: float = 8


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    hat: HatConfig = field(default_factory=HatConfig)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "runs/default"
    seed: int = 0
    precision: str = "float32"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# short flag spellings used by the CLI
ALIASES = {
    "checkpoint": "eval.checkpoint",
    "n": "eval.attention_n",
    "kmax": "eval.attention_kmax",
    "out": "output_dir",
    "cifar-dir": "data.cifar_dir",
}

SECTIONS = {"model": ModelSection, "hat": HatConfig, "data": DataSection, "eval": EvalSection}


def valid_keys() -> list[str]:
    keys = []
    for f in dataclasses.fields(RunConfig):
        if f.name in SECTIONS:
            keys += [f"{f.name}.{g.name}" for g in dataclasses.fields(SECTIONS[f.name])]
        else:
            keys.append(f.name)
    return keys


def _nearest(key: str) -> str:
    keys = valid_keys()
    hit = difflib.get_close_matches(key, keys, n=1, cutoff=0.0)
    leaf = key.rsplit(".", 1)[-1]
    leaves = {k.rsplit(".", 1)[-1]: k for k in keys}
    leaf_hit = difflib.get_close_matches(leaf, list(leaves), n=1, cutoff=0.6)
    if leaf_hit:
        return leaves[leaf_hit[0]]
    return hit[0] if hit else keys[0]


def _unknown(key: str) -> ConfigError:
    return ConfigError("unknown-key", f"unknown config key {key!r}; did you mean {_nearest(key)!r}?")


def _coerce(key: str, value: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, value, inner[0])
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError("type-mismatch", f"{key}: expected a list, got {type(value).__name__}")
        return [_coerce(key, v, args[0]) for v in value] if args else list(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError("type-mismatch", f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("type-mismatch", f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("type-mismatch", f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError("type-mismatch", f"{key}: expected a string, got {value!r}")
        return value
    return value


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key in SECTIONS:
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _parse_flag(flag: str) -> tuple[str, Any]:
    body = flag[2:] if flag.startswith("--") else flag
    if "=" not in body:
        raise ConfigError("bad-flag", f"override {flag!r} must look like --section.key=value")
    key, raw = body.split("=", 1)
    key = ALIASES.get(key, key)
    value = yaml.safe_load(raw) if raw != "" else None
    return key, value


def parse_config(path: Union[str, Path, None] = None, overrides: Sequence[str] = (),
                 require_data: bool = False) -> RunConfig:
    """Resolve defaults < file values < flag overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        tree = yaml.safe_load(text) or {}
        if not isinstance(tree, dict):
            raise ConfigError("bad-file", f"{path}: top level must be a mapping")
        values.update(_flatten(tree))
    for flag in overrides:
        key, value = _parse_flag(flag)
        values[key] = value

    known = set(valid_keys())
    for key in values:
        if key not in known:
            raise _unknown(key)
    # coerce defaults too, so a resolved config and its echo hash identically
    values = {**_flatten(RunConfig().to_dict()), **values}

    hints = {name: typing.get_type_hints(cls) for name, cls in SECTIONS.items()}
    top_hints = typing.get_type_hints(RunConfig)
    section_kwargs: dict[str, dict] = {name: {} for name in SECTIONS}
    top_kwargs: dict[str, Any] = {}
    for key, value in values.items():
        if "." in key:
            section, leaf = key.split(".", 1)
            section_kwargs[section][leaf] = _coerce(key, value, hints[section][leaf])
        else:
            top_kwargs[key] = _coerce(key, value, top_hints[key])
    try:
        sections = {name: cls(**section_kwargs[name]) for name, cls in SECTIONS.items()}
    except ValueError as exc:
        raise ConfigError("bad-value", str(exc)) from exc
    cfg = RunConfig(**sections, **top_kwargs)
    if cfg.precision not in ("float32", "float64"):
        raise ConfigError("bad-value", "precision must be float32 or float64")
    cfg.model.build()
    _check_data(cfg, require_data)
    return cfg


def _check_data(cfg: RunConfig, require: bool) -> None:
    d = cfg.data
    if d.source not in ("cifar10", "tensor", "synthetic"):
        raise ConfigError("bad-value", f"data.source must be cifar10, tensor or synthetic, got {d.source!r}")
    paths = {"cifar10": [d.cifar_dir], "tensor": [d.train_tensors, d.eval_tensors], "synthetic": []}[d.source]
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigError("missing-input", f"dataset path {p!r} does not exist")
    if require and d.source == "cifar10" and d.cifar_dir is None:
        raise ConfigError("missing-input", "data.cifar_dir is required for data.source=cifar10")
    if require and d.source == "tensor" and (d.train_tensors is None or d.eval_tensors is None):
        raise ConfigError("missing-input", "data.train_tensors and data.eval_tensors are required")


def dump_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
