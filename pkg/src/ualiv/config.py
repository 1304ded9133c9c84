"""Experiment configuration: strict JSON schema with unknown-key rejection.

Typos in hyperparameter names are the costliest failure mode in value
training experiments, so every section validates its field set and
types and names the offending field on failure.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .model import ModelConfig
from .sim import SimConfig

VARIANTS = ("rliv_ua", "ranking_model", "dqn", "random")


@dataclass
class PolicySpec:
    name: str
    variant: str
    weights: tuple = (0.0, 1.0, 0.0, 0.0)  # click, watch, follow, gift
    disable_mt: bool = False
    disable_sl: bool = False
    disable_assist: bool = False


@dataclass
class HarnessConfig:
    eval_sessions: int = 60
    collect_sessions: int = 60
    epsilon_start: float = 0.1
    epsilon_final: float = 0.01
    buffer_capacity: int = 100_000
    feedback_window_seconds: int = 60
    parallel_sessions: int = 1


@dataclass
class ExperimentConfig:
    sim: SimConfig
    model: ModelConfig
    harness: HarnessConfig
    policies: list
    epochs: int
    steps_per_epoch: int
    seeds: list
    output_dir: str

    def to_dict(self) -> dict:
        out = {
            "sim": dataclasses.asdict(self.sim),
            "model": dataclasses.asdict(self.model),
            "harness": dataclasses.asdict(self.harness),
            "policies": [dataclasses.asdict(p) for p in self.policies],
            "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }
        out["model"]["hidden_dims"] = list(self.model.hidden_dims)
        out["model"]["towers"] = list(self.model.towers)
        for p in out["policies"]:
            p["weights"] = list(p["weights"])
        return out


def _check_type(value, kinds, path):
    if kinds is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected a boolean")
        return value
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path}: expected an integer")
        return value
    if kinds is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{path}: expected a number")
        return float(value)
    if kinds is str:
        if not isinstance(value, str):
            raise ValidationError(f"{path}: expected a string")
        return value
    raise ValidationError(f"{path}: unsupported field type")


def _build_section(cls, data: dict, path: str, skip=()):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValidationError(f"{path}: unknown field {sorted(unknown)[0]!r}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        if f.type in ("int",):
            kwargs[name] = _check_type(value, int, f"{path}.{name}")
        elif f.type in ("float",):
            kwargs[name] = _check_type(value, float, f"{path}.{name}")
        elif f.type in ("bool",):
            kwargs[name] = _check_type(value, bool, f"{path}.{name}")
        elif f.type in ("str",):
            kwargs[name] = _check_type(value, str, f"{path}.{name}")
        elif f.type in ("tuple",):
            if not isinstance(value, (list, tuple)):
                raise ValidationError(f"{path}.{name}: expected a list")
            kwargs[name] = tuple(value)
        else:
            raise ValidationError(f"{path}.{name}: unsupported field")
    return cls(**kwargs)


def parse_experiment_config(data: dict) -> ExperimentConfig:
    """Validates a raw JSON object and builds the typed config."""
    if not isinstance(data, dict):
        raise ValidationError("config root must be an object")
    allowed = {"sim", "model", "harness", "policies", "epochs", "steps_per_epoch", "seeds", "output_dir"}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"config: unknown field {sorted(unknown)[0]!r}")
    for required in ("policies", "epochs", "seeds"):
        if required not in data:
            raise ValidationError(f"config: missing required field {required!r}")

    sim = _build_section(SimConfig, data.get("sim", {}), "sim")
    model = _build_section(ModelConfig, data.get("model", {}), "model", skip=("towers",))
    harness = _build_section(HarnessConfig, data.get("harness", {}), "harness")

    epochs = _check_type(data["epochs"], int, "epochs")
    if epochs < 1:
        raise ValidationError("epochs: must be >= 1")
    steps = _check_type(data.get("steps_per_epoch", 10_000), int, "steps_per_epoch")
    if steps < 0:
        raise ValidationError("steps_per_epoch: must be >= 0")
    seeds = data["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise ValidationError("seeds: expected a non-empty list of integers")
    seeds = [_check_type(s, int, "seeds[]") for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ValidationError("seeds: duplicate entries")
    output_dir = _check_type(data.get("output_dir", "runs/experiment"), str, "output_dir")

    raw_policies = data["policies"]
    if not isinstance(raw_policies, list) or not raw_policies:
        raise ValidationError("policies: expected a non-empty list")
    policies = []
    for i, raw in enumerate(raw_policies):
        if not isinstance(raw, dict):
            raise ValidationError(f"policies[{i}]: expected an object")
        if "name" not in raw or "variant" not in raw:
            raise ValidationError(f"policies[{i}]: missing required field 'name' or 'variant'")
        spec = _build_section(PolicySpec, raw, f"policies[{i}]")
        if spec.variant not in VARIANTS:
            raise ValidationError(f"policies[{i}].variant: unknown variant {spec.variant!r}")
        if len(spec.weights) != 4 or any(isinstance(w, bool) or not isinstance(w, (int, float)) for w in spec.weights):
            raise ValidationError(f"policies[{i}].weights: need 4 numbers")
        spec.weights = tuple(float(w) for w in spec.weights)
        if any(w < 0 for w in spec.weights) or not any(w > 0 for w in spec.weights):
            raise ValidationError(f"policies[{i}].weights: need non-negative values, at least one positive")
        policies.append(spec)
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ValidationError("policies: duplicate policy names")

    if sim.top_k > sim.candidate_count:
        raise ValidationError("sim.top_k: must not exceed sim.candidate_count")
    for prob_field in ("base_follow", "base_gift", "quit_base"):
        if not 0.0 <= getattr(sim, prob_field) <= 1.0:
            raise ValidationError(f"sim.{prob_field}: must be a probability in [0, 1]")
    for size_field in ("n_users", "n_authors", "items_per_author", "n_categories", "top_k", "candidate_count",
                       "quit_patience", "max_requests"):
        if getattr(sim, size_field) < 1:
            raise ValidationError(f"sim.{size_field}: must be >= 1")
    if sim.seed < 0:
        raise ValidationError("sim.seed: must be >= 0")
    if harness.parallel_sessions < 1:
        raise ValidationError("harness.parallel_sessions: must be >= 1")

    return ExperimentConfig(
        sim=sim, model=model, harness=harness, policies=policies,
        epochs=epochs, steps_per_epoch=steps, seeds=seeds, output_dir=output_dir,
    )


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    return parse_experiment_config(data)
