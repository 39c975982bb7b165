"""JSON checkpoints with bit-exact parameter round trips.

Parameters are written as decimal literals with 17 significant digits, which
is enough to recover every float64 exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .policy_net import MlpParams, NetConfig

CHECKPOINT_VERSION = "1"


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


@dataclass
class Checkpoint:
    params: MlpParams
    net_config: NetConfig
    scenario: str = "default"
    algo: str = "ppo"
    seeds: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)


def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise CheckpointError(f"cannot store non-finite parameter {x}")
    return format(x, ".17g")


def _array_literal(a: np.ndarray) -> str:
    if a.ndim == 0:
        return _num(a)
    return "[" + ", ".join(_array_literal(sub) for sub in a) + "]"


def _params_literal(params: MlpParams) -> str:
    parts = {
        "weights": "[" + ", ".join(_array_literal(w) for w in params.weights) + "]",
        "biases": "[" + ", ".join(_array_literal(b) for b in params.biases) + "]",
        "mean_w": _array_literal(params.mean_w),
        "mean_b": _array_literal(params.mean_b),
        "value_w": _array_literal(params.value_w),
        "value_b": _array_literal(params.value_b),
        "log_std": _array_literal(params.log_std),
    }
    return "{" + ", ".join(f'"{k}": {v}' for k, v in parts.items()) + "}"


def dumps_checkpoint(ckpt: Checkpoint) -> str:
    head = {
        "version": CHECKPOINT_VERSION,
        "algo": ckpt.algo,
        "scenario": ckpt.scenario,
        "seeds": ckpt.seeds,
        "net_config": asdict(ckpt.net_config),
        "configs": ckpt.configs,
    }
    text = json.dumps(head, indent=1, sort_keys=True, allow_nan=False)
    # splice the hand-formatted parameter block in before the closing brace
    return text[:-2] + ',\n "params": ' + _params_literal(ckpt.params) + "\n}\n"


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_checkpoint(ckpt))
    return path


def _array(value, shape, name) -> np.ndarray:
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"parameter {name!r} is not numeric") from exc
    if a.shape != shape:
        raise CheckpointError(f"parameter {name!r} has shape {a.shape}, expected {shape}")
    return a


def loads_checkpoint(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r} "
                              f"(expected {CHECKPOINT_VERSION!r})")
    try:
        net = NetConfig(**doc["net_config"])
        raw = doc["params"]
        d = net.trunk_dim
        params = MlpParams(
            [_array(w, s, f"weights[{k}]") for k, (w, s) in
             enumerate(_zip_exact(raw["weights"], net.layer_shapes))],
            [_array(b, (s[1],), f"biases[{k}]") for k, (b, s) in
             enumerate(_zip_exact(raw["biases"], net.layer_shapes))],
            _array(raw["mean_w"], (d, net.action_dim), "mean_w"),
            _array(raw["mean_b"], (net.action_dim,), "mean_b"),
            _array(raw["value_w"], (d,), "value_w"),
            _array(raw["value_b"], (), "value_b"),
            _array(raw["log_std"], (net.action_dim,), "log_std"),
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint is missing or mistypes a field: {exc}") from exc
    return Checkpoint(params, net, doc.get("scenario", "default"), doc.get("algo", "ppo"),
                      doc.get("seeds", {}), doc.get("configs", {}))


def _zip_exact(values, shapes):
    if len(values) != len(shapes):
        raise CheckpointError(f"expected {len(shapes)} layers, found {len(values)}")
    return zip(values, shapes)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads_checkpoint(text)
