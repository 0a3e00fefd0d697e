"""JSON documents for model and run configuration.

Documents carry `"schema": 1` and are parsed strictly: unknown keys are
errors, so a typoed field never silently falls back to a default. Optimizer
defaults follow the published recipe (beta1 0.9, beta2 0.98, weight decay
0.1, cosine decay); the warmup default keeps the published warmup-to-steps
proportion rather than the absolute step count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from cos.assembly import CosConfig, ScaleSpec

SCHEMA_VERSION = 1

# published warmup was 2000 of 120000 steps; keep the proportion on desk runs
WARMUP_FRACTION = 60


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.1
    warmup_steps: int | None = None  # None: steps // WARMUP_FRACTION
    min_lr: float = 1e-6

    def resolve_warmup(self, steps: int) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, steps // WARMUP_FRACTION)


@dataclass(frozen=True)
class RunConfig:
    model: CosConfig
    seed: int = 0
    steps: int = 300
    batch_size: int = 16
    optimizer: OptimizerConfig = OptimizerConfig()
    task_seed: int | None = None  # None: reuse seed

    def resolve_task_seed(self) -> int:
        return self.seed if self.task_seed is None else self.task_seed


def _take(doc: dict, context: str, required: dict, optional: dict) -> dict:
    """Pull typed fields out of a JSON object, rejecting unknown keys."""
    unknown = set(doc) - set(required) - set(optional) - {"schema"}
    if unknown:
        raise SchemaError(f"{context}: unknown keys {sorted(unknown)}")
    out = {}
    for key, kind in required.items():
        if key not in doc:
            raise SchemaError(f"{context}: missing required key {key!r}")
        out[key] = _coerce(doc[key], kind, f"{context}.{key}")
    for key, (kind, default) in optional.items():
        out[key] = _coerce(doc[key], kind, f"{context}.{key}") if key in doc else default
    return out


def _coerce(value, kind, context):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{context}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{context}: expected a number, got {value!r}")
        return float(value)
    if kind is list:
        if not isinstance(value, list):
            raise SchemaError(f"{context}: expected a list, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise SchemaError(f"{context}: expected an object, got {value!r}")
        return value
    raise AssertionError(f"unhandled kind {kind}")


def _check_schema(doc: dict, context: str) -> None:
    if not isinstance(doc, dict):
        raise SchemaError(f"{context}: expected a JSON object at the top level")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaError(
            f"{context}: schema must be {SCHEMA_VERSION}, got {doc.get('schema')!r}"
        )


def cos_config_from_dict(doc: dict, context: str = "config") -> CosConfig:
    _check_schema(doc, context)
    fields = _take(
        doc,
        context,
        required={
            "resolution": int,
            "patch_size": int,
            "channels": int,
            "model_dim": int,
            "heads": int,
            "levels": int,
            "out_dim": int,
            "scales": list,
        },
        optional={},
    )
    scales = []
    for i, entry in enumerate(fields["scales"]):
        sub = _take(
            _coerce(entry, dict, f"{context}.scales[{i}]"),
            f"{context}.scales[{i}]",
            required={"window_size": int, "queries_per_window": int},
            optional={},
        )
        scales.append(ScaleSpec(**sub))
    fields["scales"] = tuple(scales)
    return CosConfig(**fields)


def cos_config_to_dict(cfg: CosConfig) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "resolution": cfg.resolution,
        "patch_size": cfg.patch_size,
        "channels": cfg.channels,
        "model_dim": cfg.model_dim,
        "heads": cfg.heads,
        "levels": cfg.levels,
        "out_dim": cfg.out_dim,
        "scales": [
            {"window_size": s.window_size, "queries_per_window": s.queries_per_window}
            for s in cfg.scales
        ],
    }


def run_config_from_dict(doc: dict, context: str = "run") -> RunConfig:
    _check_schema(doc, context)
    fields = _take(
        doc,
        context,
        required={"model": dict},
        optional={
            "seed": (int, 0),
            "steps": (int, 300),
            "batch_size": (int, 16),
            "optimizer": (dict, None),
            "task_seed": (int, None),
        },
    )
    model_doc = dict(fields["model"])
    model_doc.setdefault("schema", SCHEMA_VERSION)
    model = cos_config_from_dict(model_doc, f"{context}.model")
    opt_doc = fields["optimizer"] or {}
    opt_fields = _take(
        opt_doc,
        f"{context}.optimizer",
        required={},
        optional={
            "learning_rate": (float, 1e-3),
            "beta1": (float, 0.9),
            "beta2": (float, 0.98),
            "weight_decay": (float, 0.1),
            "warmup_steps": (int, None),
            "min_lr": (float, 1e-6),
        },
    )
    return RunConfig(
        model=model,
        seed=fields["seed"],
        steps=fields["steps"],
        batch_size=fields["batch_size"],
        optimizer=OptimizerConfig(**opt_fields),
        task_seed=fields["task_seed"],
    )


def run_config_to_dict(rc: RunConfig) -> dict:
    model = cos_config_to_dict(rc.model)
    model.pop("schema")
    doc = {
        "schema": SCHEMA_VERSION,
        "model": model,
        "seed": rc.seed,
        "steps": rc.steps,
        "batch_size": rc.batch_size,
        "optimizer": {
            "learning_rate": rc.optimizer.learning_rate,
            "beta1": rc.optimizer.beta1,
            "beta2": rc.optimizer.beta2,
            "weight_decay": rc.optimizer.weight_decay,
            "min_lr": rc.optimizer.min_lr,
        },
    }
    if rc.optimizer.warmup_steps is not None:
        doc["optimizer"]["warmup_steps"] = rc.optimizer.warmup_steps
    if rc.task_seed is not None:
        doc["task_seed"] = rc.task_seed
    return doc


def load_cos_config(path: str | Path) -> CosConfig:
    return cos_config_from_dict(_read_json(path), context=str(path))


def load_run_config(path: str | Path) -> RunConfig:
    return run_config_from_dict(_read_json(path), context=str(path))


def save_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from err
