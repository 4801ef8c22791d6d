"""Run configuration: presets, JSON overrides, and validation.

A run is fully described by one JSON document.  The ``desk`` preset keeps
the whole pipeline fast enough for a workstation by raising the
exploration fraction to 100% and shrinking the candidate pool and history
dims; ``fidelity`` keeps the reference environment and honors the 1.25%
exploration cap (too sparse to train well, but faithful to the logging
constraints).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .actions import DEFAULT_P2P_RANGE, DEFAULT_REPIN_RANGE, PRODUCTION_WEIGHTS, ActionGrid, build_grid
from .envsim import EnvConfig
from .errors import ConfigError
from .training import TrainConfig
from .valuenet import FEATURE_GROUPS, ModelConfig

PRESETS = ("desk", "fidelity")


@dataclass(frozen=True)
class GridSpec:
    repin_range: tuple[float, float] = DEFAULT_REPIN_RANGE
    p2p_range: tuple[float, float] = DEFAULT_P2P_RANGE
    k: int = 7
    include_baseline: bool = True
    baseline: tuple[float, float] = PRODUCTION_WEIGHTS

    def build(self) -> ActionGrid:
        return build_grid(self.repin_range, self.p2p_range, self.k, self.include_baseline, self.baseline)


@dataclass(frozen=True)
class AbSpec:
    requests_per_arm: int = 30_000
    num_alpha_arms: int = 7  # evaluation policies spanning the frontier
    min_detectable_lift_pct: float = 2.0


@dataclass(frozen=True)
class AblationSpec:
    groups: tuple[str, ...] = FEATURE_GROUPS
    epochs: int = 2
    max_records: int = 60_000


@dataclass(frozen=True)
class AnalysisSpec:
    sample_items: int = 10_000
    curve_points: int = 30


@dataclass(frozen=True)
class RunConfig:
    seed: int
    preset: str
    env: EnvConfig
    grid: GridSpec
    model: ModelConfig
    train: TrainConfig
    exploration_fraction: float
    requests_per_day: int
    train_days: int = 14
    holdout_days: int = 7
    alpha_grid_size: int = 25
    deployed_role: str = "balanced"
    cohort_alpha_maps: dict | None = None
    ab: AbSpec = field(default_factory=AbSpec)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)

    @property
    def total_days(self) -> int:
        return self.train_days + self.holdout_days

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not 0.0 < self.exploration_fraction <= 1.0:
            raise ConfigError("exploration_fraction must be in (0, 1]")
        if self.requests_per_day <= 0:
            raise ConfigError("requests_per_day must be positive")
        if self.train_days <= 0 or self.holdout_days <= 0:
            raise ConfigError("train/holdout day counts must be positive")
        if self.alpha_grid_size < 2:
            raise ConfigError("alpha_grid_size must be >= 2")
        if self.deployed_role not in ("repin_leaning", "balanced", "p2p_leaning"):
            raise ConfigError(f"unknown deployed_role {self.deployed_role!r}")
        self.env.validate()
        self.model.validate()
        self.train.validate()
        # Model input dims must mirror the environment.
        for attr_env, attr_model in (
            ("d_user", "d_user"), ("d_item", "d_item"),
            ("history_len", "history_len"), ("num_age_buckets", "num_age_buckets"),
        ):
            if getattr(self.env, attr_env) != getattr(self.model, attr_model):
                raise ConfigError(f"env.{attr_env} and model.{attr_model} must match")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def preset_dict(name: str, seed: int) -> dict:
    """Raw config dictionary for a preset; deep-merge user overrides on top."""
    if name == "desk":
        env = dict(
            seed=seed, num_users=10_000, candidates_per_request=600,
            d_item=8, history_len=8,
        )
        exploration_fraction = 1.0
    elif name == "fidelity":
        env = dict(seed=seed)
        exploration_fraction = 0.0125
    else:
        raise ConfigError(f"unknown preset {name!r}")
    return {
        "seed": seed,
        "preset": name,
        "env": env,
        "grid": {},
        "model": {},
        "train": {"seed": seed, "epochs": 4},
        "exploration_fraction": exploration_fraction,
        "requests_per_day": 10_000,
        "train_days": 14,
        "holdout_days": 7,
        "alpha_grid_size": 25,
        "deployed_role": "balanced",
        "cohort_alpha_maps": None,
        "ab": {},
        "ablation": {},
        "analysis": {},
    }


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build_dataclass(cls, data: dict, label: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {label} keys: {sorted(unknown)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except TypeError as e:
        raise ConfigError(f"invalid {label} config: {e}") from e


def resolve_config(
    preset: str = "desk",
    config_path: str | Path | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Preset defaults <- config file <- CLI seed override, then validate."""
    overrides: dict = {}
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {config_path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
    preset = overrides.get("preset", preset)
    base_seed = seed if seed is not None else overrides.get("seed", 7)
    raw = _merge(preset_dict(preset, base_seed), overrides)
    if seed is not None:
        raw["seed"] = seed
        raw.setdefault("env", {})["seed"] = seed
        raw.setdefault("train", {})["seed"] = seed
    raw["env"].setdefault("seed", raw["seed"])
    raw["train"].setdefault("seed", raw["seed"])

    env = _build_dataclass(EnvConfig, raw["env"], "env")
    # Model input dims follow the environment unless explicitly overridden.
    model_raw = dict(raw["model"])
    for key in ("d_user", "d_item", "history_len", "num_age_buckets"):
        model_raw.setdefault(key, getattr(env, key))
    cfg = RunConfig(
        seed=int(raw["seed"]),
        preset=preset,
        env=env,
        grid=_build_dataclass(GridSpec, raw["grid"], "grid"),
        model=_build_dataclass(ModelConfig, model_raw, "model"),
        train=_build_dataclass(TrainConfig, raw["train"], "train"),
        exploration_fraction=float(raw["exploration_fraction"]),
        requests_per_day=int(raw["requests_per_day"]),
        train_days=int(raw["train_days"]),
        holdout_days=int(raw["holdout_days"]),
        alpha_grid_size=int(raw["alpha_grid_size"]),
        deployed_role=raw["deployed_role"],
        cohort_alpha_maps=raw["cohort_alpha_maps"],
        ab=_build_dataclass(AbSpec, raw["ab"], "ab"),
        ablation=_build_dataclass(AblationSpec, raw["ablation"], "ablation"),
        analysis=_build_dataclass(AnalysisSpec, raw["analysis"], "analysis"),
    )
    cfg.validate()
    return cfg
