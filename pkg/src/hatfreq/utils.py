from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from typing import Any

import numpy as np


def _name_key(name: Any) -> int:
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names: Any) -> np.random.Generator:
    """Independent generator for a named purpose under one master seed.

    Streams are keyed by name, so adding a new consumer never shifts the
    draws seen by existing ones.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(_name_key(n) for n in names)]))


def derive_seed(seed: int, *names: Any) -> int:
    return int(np.random.SeedSequence([int(seed), *(_name_key(n) for n in names)]).generate_state(1)[0])


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def config_hash(obj: Any) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def csv_header(config_digest: str, seed: int, **extra: Any) -> str:
    fields = [f"config_hash={config_digest}", f"seed={seed}"]
    fields += [f"{k}={v}" for k, v in extra.items()]
    return "# " + " ".join(fields) + "\n"
