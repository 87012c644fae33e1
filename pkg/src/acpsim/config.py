"""Scenario files: versioned JSON with every default spelled out by ``init``."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Optional

from .engine import Timeouts
from .incentives import EconomyParams
from .netsim import AdversarySpec, NetworkModel, PartitionSpec
from .sortition import CommitteeParams

SCHEMA_VERSION = 1
MIB = 1 << 20


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Workload:
    interval_ms: int = 250
    batch: int = 4
    size_min: int = 200
    size_max: int = 900

    def validate(self) -> None:
        if self.interval_ms <= 0 or self.batch < 0:
            raise ValueError("need interval_ms > 0 and batch >= 0")
        if not 1 <= self.size_min <= self.size_max:
            raise ValueError("need 1 <= size_min <= size_max")


@dataclass(frozen=True)
class Scenario:
    n: int = 4
    seed: int = 1
    rounds: int = 10
    committee: CommitteeParams = None
    timeouts: Timeouts = field(default_factory=Timeouts)
    network: NetworkModel = field(default_factory=NetworkModel)
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    economy: EconomyParams = field(default_factory=EconomyParams)
    workload: Workload = field(default_factory=Workload)
    block_bytes: int = 4 * MIB
    reputations: Optional[tuple] = None
    max_ms: int = 0
    trace_path: str = "trace.jsonl"
    report_dir: str = "report"

    def __post_init__(self):
        if self.committee is None:
            k = min(3, max(self.n, 1))
            object.__setattr__(self, "committee", CommitteeParams(self.n, self.n, k, k))
        if not self.max_ms:
            t = self.timeouts
            budget = (self.rounds + 5) * (t.sbr + t.lambda_all) * 3 + self.network.gst
            if self.adversary.partition is not None:
                budget += self.adversary.partition.heal_ms
            object.__setattr__(self, "max_ms", budget)

    def validate(self) -> None:
        _check("n", self.n >= 0, "must be >= 0")
        _check("seed", 0 <= self.seed < 2**64, "must be an unsigned 64-bit integer")
        _check("rounds", self.rounds >= 1, "must be >= 1")
        _check("block_bytes", self.block_bytes > 0, "must be positive")
        _check("max_ms", self.max_ms > 0, "must be positive")
        if self.n:
            _sub("committee", lambda: self.committee.validate(self.n))
        _sub("timeouts", self.timeouts.validate)
        _sub("network", self.network.validate)
        _sub("adversary", lambda: self.adversary.validate(self.n))
        _sub("economy", self.economy.validate)
        _sub("workload", self.workload.validate)
        if self.reputations is not None:
            _check("reputations", len(self.reputations) == self.n, f"needs {self.n} entries")
            for i, r in enumerate(self.reputations):
                _check(f"reputations[{i}]", r > 0, "must be positive")

    def to_dict(self) -> dict:
        d = {"version": SCHEMA_VERSION}
        for f in fields(self):
            d[f.name] = _plain(getattr(self, f.name))
        return d


def _check(path: str, ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(path, message)


def _sub(path: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _plain(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if hasattr(v, "__dataclass_fields__"):
        return {f.name: _plain(getattr(v, f.name)) for f in fields(v)}
    return v


def _fraction(path: str, v) -> Fraction:
    try:
        return Fraction(v)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(path, f"not a number: {v!r}") from None


def _build(cls, path: str, raw, convert=None):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "must be an object")
    names = {f.name: f for f in fields(cls)}
    kw = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
        if convert and key in convert:
            value = convert[key](f"{path}.{key}", value)
        else:
            expected = type(getattr(cls(), key)) if _has_default(cls) else None
            if expected in (int, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
            if expected is int and isinstance(value, float):
                if value != int(value):
                    raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
                value = int(value)
            if expected is str and not isinstance(value, str):
                raise ConfigError(f"{path}.{key}", f"expected a string, got {value!r}")
        kw[key] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _has_default(cls) -> bool:
    try:
        cls()
        return True
    except TypeError:
        return False


def _int_tuple(path, v):
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(path, "expected a list of integers")
    return tuple(v)


def _partition(path, v):
    if v is None:
        return None
    if not isinstance(v, dict):
        raise ConfigError(path, "must be an object")
    groups = v.get("groups")
    if not isinstance(groups, list) or not groups:
        raise ConfigError(f"{path}.groups", "expected a non-empty list of node-id lists")
    gs = tuple(_int_tuple(f"{path}.groups[{i}]", g) for i, g in enumerate(groups))
    for key in ("start_ms", "heal_ms"):
        if not isinstance(v.get(key), int):
            raise ConfigError(f"{path}.{key}", "expected an integer")
    extra = set(v) - {"groups", "start_ms", "heal_ms"}
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
    return PartitionSpec(gs, v["start_ms"], v["heal_ms"])


_ECONOMY_CONVERT = {
    name: _fraction
    for name in ("n_r_eco_abc", "k", "c_limit", "t_ratio", "freeze_fraction",
                 "rep_gain", "rep_cap", "rep_penalty", "rep_floor")
}
_ECONOMY_CONVERT["ratio"] = _int_tuple


def scenario_from_dict(raw) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("$", "scenario must be a JSON object")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {version!r}, expected {SCHEMA_VERSION}")
    known = {f.name for f in fields(Scenario)} | {"version"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    kw = {}
    for key in ("n", "seed", "rounds", "block_bytes", "max_ms"):
        if key in raw:
            v = raw[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(key, f"expected an integer, got {v!r}")
            kw[key] = v
    for key in ("trace_path", "report_dir"):
        if key in raw:
            if not isinstance(raw[key], str):
                raise ConfigError(key, "expected a string")
            kw[key] = raw[key]
    if "committee" in raw:
        c = raw["committee"]
        if not isinstance(c, dict):
            raise ConfigError("committee", "must be an object")
        for key in ("n_pc", "n_fc"):
            if key not in c:
                raise ConfigError(f"committee.{key}", "required")
        for key, v in c.items():
            if key not in ("n_pc", "n_fc", "n_valid_leaders", "n_empty_leaders"):
                raise ConfigError(f"committee.{key}", "unknown field")
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"committee.{key}", f"expected an integer, got {v!r}")
        kw["committee"] = CommitteeParams(**c)
    if "timeouts" in raw:
        kw["timeouts"] = _build(Timeouts, "timeouts", raw["timeouts"])
    if "network" in raw:
        kw["network"] = _build(NetworkModel, "network", raw["network"])
    if "adversary" in raw:
        kw["adversary"] = _build(AdversarySpec, "adversary", raw["adversary"],
                                 {"corrupted": _int_tuple, "partition": _partition})
    if "economy" in raw:
        kw["economy"] = _build(EconomyParams, "economy", raw["economy"], _ECONOMY_CONVERT)
    if "workload" in raw:
        kw["workload"] = _build(Workload, "workload", raw["workload"])
    if raw.get("reputations") is not None:
        reps = raw["reputations"]
        if not isinstance(reps, list):
            raise ConfigError("reputations", "expected a list")
        kw["reputations"] = tuple(_fraction(f"reputations[{i}]", r) for i, r in enumerate(reps))
    sc = Scenario(**kw)
    sc.validate()
    return sc


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(raw)


def dump_scenario(sc: Scenario) -> str:
    return json.dumps(sc.to_dict(), indent=2, sort_keys=True) + "\n"


def with_overrides(sc: Scenario, **kw) -> Scenario:
    """Copy with top-level fields replaced; recomputes the derived time budget."""
    d = {f.name: getattr(sc, f.name) for f in fields(sc)}
    d.update(kw)
    if "rounds" in kw or "network" in kw or "timeouts" in kw:
        d["max_ms"] = kw.get("max_ms", 0)
    return Scenario(**d)


__all__ = ["ConfigError", "Scenario", "Workload", "SCHEMA_VERSION", "scenario_from_dict",
           "load_scenario", "dump_scenario", "with_overrides", "asdict"]
