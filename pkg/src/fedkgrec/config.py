"""Declarative run configuration: one TOML file, flag overrides, hard errors
on unknown keys.

Defaults mirror the published experimental constants (tick schedules, 20
clients with 3-of-20 sampling over 200 rounds at 0.1 local epochs, LoRA rank
16 / alpha 64 at 4-bit).  Seeds are mandatory: nothing falls back to wall
clock."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import parse_iso_date
from .errors import ConfigError
from .federation import ClientMode, RoundConfig
from .prompts import Ablation
from .timeline import Schedule


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # synthetic | csv
    dir: str = ""  # CSV directory when source = csv
    n_users: int = 40
    n_assets: int = 25
    start: date = date(2018, 1, 2)
    end: date = date(2022, 11, 29)
    tx_per_user_year: float = 14.0


@dataclass(frozen=True)
class KgConfig:
    triple_cap: int = 5000


@dataclass(frozen=True)
class PromptsConfig:
    ablation: str = "combined"  # combined | pkg | mkg | nothing


@dataclass(frozen=True)
class ScheduleConfig:
    train_start: date = date(2019, 8, 1)
    train_end: date = date(2021, 6, 1)
    train_step_days: int = 28
    test_start: date = date(2021, 12, 1)
    test_end: date = date(2022, 6, 2)
    test_step_days: int = 14
    horizon_days: int = 180


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 20
    clients_per_round: int = 3
    rounds: int = 200
    epoch_fraction: float = 0.1
    mode: str = "non-iid"  # non-iid | iid
    concentration: float = 0.3
    weighted_aggregation: bool = False


@dataclass(frozen=True)
class TrainerConfig:
    kind: str = "mock"  # mock | external
    eta: float = 1e-3
    command: str = ""  # shell words for kind = external
    timeout_s: float = 600.0


@dataclass(frozen=True)
class AdapterConfig:
    n_layers: int = 2
    hidden_dim: int = 64
    rank: int = 16
    alpha: int = 64
    bits: int = 4


_SECTIONS = {
    "data": DataConfig,
    "kg": KgConfig,
    "prompts": PromptsConfig,
    "schedule": ScheduleConfig,
    "federation": FederationConfig,
    "trainer": TrainerConfig,
    "adapter": AdapterConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: DataConfig = field(default_factory=DataConfig)
    kg: KgConfig = field(default_factory=KgConfig)
    prompts: PromptsConfig = field(default_factory=PromptsConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)

    def train_schedule(self) -> Schedule:
        s = self.schedule
        return Schedule(s.train_start, s.train_end, s.train_step_days)

    def test_schedule(self) -> Schedule:
        s = self.schedule
        return Schedule(s.test_start, s.test_end, s.test_step_days)

    def ablation(self) -> Ablation:
        try:
            return Ablation(self.prompts.ablation)
        except ValueError:
            raise ConfigError(f"prompts.ablation must be one of "
                              f"{[a.value for a in Ablation]}, got {self.prompts.ablation!r}")

    def client_mode(self) -> ClientMode:
        try:
            return ClientMode(self.federation.mode)
        except ValueError:
            raise ConfigError(f"federation.mode must be one of "
                              f"{[m.value for m in ClientMode]}, got {self.federation.mode!r}")

    def round_config(self, seed: int) -> RoundConfig:
        f = self.federation
        return RoundConfig(
            seed=seed,
            rounds=f.rounds,
            clients_per_round=f.clients_per_round,
            n_clients=f.n_clients,
            local_epoch_fraction=f.epoch_fraction,
            weighted_aggregation=f.weighted_aggregation,
        )


def _coerce(section: str, name: str, expected_type, value):
    if expected_type is date:
        if isinstance(value, date):
            return value
        if isinstance(value, str):
            try:
                return parse_iso_date(value)
            except ValueError as exc:
                raise ConfigError(f"{section}.{name}: {exc}")
        raise ConfigError(f"{section}.{name}: expected an ISO date string")
    if expected_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{section}.{name}: expected a boolean")
    if expected_type is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{section}.{name}: expected an integer")
    if not isinstance(value, expected_type):
        raise ConfigError(f"{section}.{name}: expected {expected_type.__name__}, got {type(value).__name__}")
    return value


_TYPES = {"int": int, "float": float, "str": str, "bool": bool, "date": date}


def _field_type(f: dataclasses.Field):
    # annotations are strings under `from __future__ import annotations`
    return _TYPES[f.type] if isinstance(f.type, str) else f.type


def _build_section(section: str, cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    kwargs = {
        name: _coerce(section, name, _field_type(known[name]), value)
        for name, value in raw.items()
    }
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    unknown = sorted(set(doc) - set(_SECTIONS) - {"run"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    run = doc.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("[run] must be a table")
    unknown_run = sorted(set(run) - {"seed"})
    if unknown_run:
        raise ConfigError(f"unknown keys in [run]: {', '.join(unknown_run)}")
    if "seed" not in run:
        raise ConfigError("run.seed is required (seeds never default to wall clock)")
    seed = _coerce("run", "seed", int, run["seed"])
    sections = {
        name: _build_section(name, cls, doc.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(seed=seed, **sections)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings on top of the parsed document."""
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw_value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section == "run":
            cls_fields = {"seed": int}
        else:
            cls = _SECTIONS.get(section)
            if cls is None:
                raise ConfigError(f"unknown config section in override: {section!r}")
            cls_fields = {f.name: _field_type(f) for f in fields(cls)}
        if key not in cls_fields:
            raise ConfigError(f"unknown config key in override: {dotted!r}")
        expected = cls_fields[key]
        try:
            if expected is bool:
                value = {"true": True, "false": False}[raw_value.lower()]
            elif expected is int:
                value = int(raw_value)
            elif expected is float:
                value = float(raw_value)
            elif expected is date:
                value = raw_value  # coerced during section build
            else:
                value = raw_value
        except (ValueError, KeyError):
            raise ConfigError(f"cannot parse override {item!r} as {expected.__name__}")
        out.setdefault(section, {})[key] = value
    return out


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return config_from_dict(doc)


def describe_config_keys() -> str:
    """Every config key with its type and default, for --help output."""
    lines = ["run.seed (int, required)"]
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            default = f.default
            if isinstance(default, date):
                default = default.isoformat()
            ftype = _field_type(f)
            lines.append(f"{section}.{f.name} ({ftype.__name__}, default {default!r})")
    return "\n".join(lines)
