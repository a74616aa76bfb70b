"""Run configuration: a single JSON document with sections ``generator``,
``model``, ``distribution``, ``train``, ``eval`` and ``paths``.

The document is schema-validated before any work happens; unknown keys
are rejected and errors carry a JSON-pointer path to the offending spot.
All paths in the document resolve relative to the config file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import jsonschema

from . import objective
from .datagen import GeneratorSpec
from .model import VocabConfig
from .objective import LossConfig
from .specfn import SeriesConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


_DIST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["variant"],
    "properties": {
        "variant": {"enum": ["dpo", "pointmass", "lognormal", "gamma"]},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "mu": {"type": "number"},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "k": {"type": "number", "exclusiveMinimum": 0},
        "lambda": {"type": "number", "exclusiveMinimum": 0},
        "trainable": {"type": "boolean"},
    },
}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "generator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_pairs": {"type": "integer", "minimum": 0},
                "vocab": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "vocab_size": {"type": "integer", "minimum": 1},
                        "max_prompt_len": {"type": "integer", "minimum": 1},
                        "max_response_len": {"type": "integer", "minimum": 1},
                    },
                },
                "subgroup_dims": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name", "categories", "weights"],
                        "properties": {
                            "name": {"type": "string", "minLength": 1},
                            "categories": {
                                "type": "array", "minItems": 1,
                                "items": {"type": "string"},
                            },
                            "weights": {
                                "type": "array", "minItems": 1,
                                "items": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                    },
                },
                "beta_dim": {"type": "string"},
                "beta_by_category": {
                    "type": "object",
                    "additionalProperties": _DIST_SCHEMA,
                },
                "teacher_delta_scale": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "chunk_size": {"type": "integer", "minimum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_dim": {"type": "integer", "minimum": 1},
                "window": {"type": "integer", "minimum": 1},
                "init_std": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "distribution": _DIST_SCHEMA,
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy_lr": {"type": "number", "minimum": 0},
                "beta_lr": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "grad_clip_max_norm": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["rms", "sgd"]},
                "rms_decay": {"type": "number", "minimum": 0,
                              "exclusiveMaximum": 1},
                "eval_every": {"type": "integer", "minimum": 1},
                "mc_samples": {"type": "integer", "minimum": 1},
                "shared_noise": {"type": "boolean"},
                "series_terms": {"type": "integer", "minimum": 1},
                "paper_exact": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "length_normalize": {"type": "boolean"},
                "use_delta_r_margin": {"type": "boolean"},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {"type": "string"},
                "out_dir": {"type": "string"},
                "baseline_report": {"type": "string"},
            },
        },
    },
}


def _pointer(error: jsonschema.ValidationError) -> str:
    parts = list(error.absolute_path)
    # for unknown-key errors, point at the object that holds the key
    return "/" + "/".join(str(p) for p in parts)


class RunConfig:
    def __init__(self, doc: dict, base_dir: Path):
        self.doc = doc
        self.base_dir = base_dir

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("/", f"cannot read config: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        validator = jsonschema.Draft202012Validator(_SCHEMA)
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            raise ConfigError(_pointer(err), err.message)
        return cls(doc, Path(base_dir))

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    def resolve_path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    # --- section builders -------------------------------------------------

    def generator_spec(self, seed_override: int | None = None) -> GeneratorSpec:
        g = self.section("generator")
        vocab = VocabConfig(**g.get("vocab", {}))
        dims = [(d["name"], list(d["categories"]), list(d["weights"]))
                for d in g.get("subgroup_dims", [])]
        beta_by_cat = {
            cat: build_distribution(spec)
            for cat, spec in g.get("beta_by_category", {}).items()
        }
        kwargs = dict(
            n_pairs=g.get("n_pairs", 1000),
            vocab=vocab,
            beta_dim=g.get("beta_dim"),
            beta_dist_per_category=beta_by_cat,
            teacher_delta_scale=g.get("teacher_delta_scale", 1.0),
            rng_seed=seed_override if seed_override is not None else g.get("seed", 0),
        )
        if dims:
            kwargs["subgroup_dims"] = dims
        try:
            return GeneratorSpec(**kwargs)
        except ValueError as exc:
            raise ConfigError("/generator", str(exc)) from exc

    def chunk_size(self) -> int:
        return self.section("generator").get("chunk_size", 1024)

    def model_settings(self) -> dict:
        m = self.section("model")
        return {
            "hidden_dim": m.get("hidden_dim", 32),
            "window": m.get("window", 4),
            "std": m.get("init_std", 0.1),
            "seed": m.get("seed", 0),
        }

    def distribution(self, variant_override: str | None = None,
                     beta_override: float | None = None,
                     beta_lr: float | None = None) -> objective.StrengthDistribution:
        spec = self.section("distribution") or {"variant": "gamma"}
        if variant_override:
            spec = dict(spec, variant=variant_override)
        if beta_override is not None:
            spec = dict(spec, beta=beta_override)
        trainable = spec.get("trainable")
        if trainable is None:
            trainable = (beta_lr or 0.0) > 0.0
        return build_distribution(dict(spec, trainable=trainable))

    def train_config(self, seed_override: int | None = None,
                     beta_lr_override: float | None = None,
                     paper_exact: bool = False) -> TrainConfig:
        t = self.section("train")
        series = SeriesConfig(
            truncation_terms=t.get("series_terms", 1000),
            tail_correction=not (paper_exact or t.get("paper_exact", False)),
        )
        loss = LossConfig(
            mc_samples=t.get("mc_samples", 16),
            series=series,
            rng_seed=seed_override if seed_override is not None else t.get("seed", 0),
            shared_noise=t.get("shared_noise", False),
        )
        try:
            return TrainConfig(
                policy_lr=t.get("policy_lr", 1e-3),
                beta_lr=beta_lr_override if beta_lr_override is not None
                else t.get("beta_lr", 1e-4),
                batch_size=t.get("batch_size", 64),
                epochs=t.get("epochs", 1),
                grad_clip_max_norm=t.get("grad_clip_max_norm", 1.0),
                optimizer=t.get("optimizer", "rms"),
                rms_decay=t.get("rms_decay", 0.99),
                eval_every=t.get("eval_every", 50),
                rng_seed=seed_override if seed_override is not None
                else t.get("seed", 0),
                loss=loss,
            )
        except ValueError as exc:
            raise ConfigError("/train", str(exc)) from exc


def build_distribution(spec: dict) -> objective.StrengthDistribution:
    """Distribution from an effective-parameter dict (the config format).

    Defaults follow the fixed-parameter baselines: beta 0.1 for the point
    mass, LogNormal(mu=-2.3, sigma=0.6), Gamma(k=2.0, lambda=16.7).
    """
    variant = spec.get("variant", "gamma")
    trainable = bool(spec.get("trainable", False))
    if variant in ("dpo", "pointmass"):
        return objective.PointMass(spec.get("beta", 0.1))
    if variant == "lognormal":
        return objective.LogNormal.from_effective(
            spec.get("mu", -2.3), spec.get("sigma", 0.6), trainable
        )
    if variant == "gamma":
        return objective.Gamma.from_effective(
            spec.get("k", 2.0), spec.get("lambda", 16.7), trainable
        )
    raise ConfigError("/distribution/variant", f"unknown variant {variant!r}")


def thread_cap() -> int:
    """Parallelism cap from MIXLOGIT_THREADS (>=1). The current
    implementation is single-threaded, so the cap is honored trivially,
    but the variable is validated here in one place."""
    raw = os.environ.get("MIXLOGIT_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError("/", f"MIXLOGIT_THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError("/", f"MIXLOGIT_THREADS must be >= 1, got {value}")
    return value
