"""Experiment configuration, read from a YAML key/value tree.

Every section mirrors a dataclass; unknown keys are rejected so typos do not
silently fall back to defaults. ``POWERWALL_RL_SEED`` overrides ``base_seed``.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .baselines import QParams, RuleConfig
from .data import DEFAULT_TIERS, DEFAULT_TOU_SCHEDULE, YearSeries, generate_synthetic, load_csv
from .env import EnvConfig
from .ppo import PpoHyperparams

SEED_ENV_VAR = "POWERWALL_RL_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"   # "synthetic" or "csv"
    csv_path: str | None = None
    seed: int = 42
    annual_load_kwh: float = 261_000.0
    pv_capacity_kw: float = 20.0
    tiers: tuple[float, ...] = DEFAULT_TIERS
    tou_schedule: tuple[int, ...] = DEFAULT_TOU_SCHEDULE

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("data.csv_path is required when data.source is 'csv'")

    def load(self, base_dir: Path | None = None) -> YearSeries:
        if self.source == "csv":
            path = Path(self.csv_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return load_csv(path, self.pv_capacity_kw)
        return generate_synthetic(self.seed, self.annual_load_kwh, self.pv_capacity_kw,
                                  self.tiers, self.tou_schedule)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoHyperparams = field(default_factory=PpoHyperparams)
    qlearn: QParams = field(default_factory=QParams)
    rules: RuleConfig = field(default_factory=RuleConfig)
    runs: int = 10
    ppo_episodes: int = 20_000
    q_episodes: int = 50_000
    base_seed: int = 0
    initial_soc_frac: float = 0.5
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.runs < 1 or self.ppo_episodes < 1 or self.q_episodes < 1:
            raise ConfigError("runs, ppo_episodes and q_episodes must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.env.soc_min_frac <= self.initial_soc_frac <= self.env.soc_max_frac:
            raise ConfigError("initial_soc_frac must lie inside the SOC band")

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls: type, raw: Any, where: str) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}".lstrip("."))
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(raw: dict[str, Any] | None) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "")
    seed = os.environ.get(SEED_ENV_VAR)
    if seed is not None:
        try:
            cfg = dataclasses.replace(cfg, base_seed=int(seed))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {seed!r}") from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)


class _Dumper(yaml.SafeDumper):
    pass


# lists (tiers, schedules, layer widths) read best on one line
_Dumper.add_representer(
    list, lambda d, v: d.represent_sequence("tag:yaml.org,2002:seq", v, flow_style=True))


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.dump(cfg.to_dict(), Dumper=_Dumper, sort_keys=False, width=100))
