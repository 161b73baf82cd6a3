"""Declarative scenario configuration (JSON) and its validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import jsonschema

from .analysis import as_fraction, k_views_for
from .types import Transaction


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


_number = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?\d+(\.\d+)?(\s*/\s*\d+)?\s*$"}]}

SCHEMA = {
    "type": "object",
    "required": ["n", "seed"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "delta": {"type": "integer", "minimum": 1},
        "x": _number,
        "delta_x": _number,
        "tau_al_max": {"type": "integer", "minimum": 0},
        "k_views": {"type": "integer", "minimum": 1},
        "delta_prime": {"type": "integer", "minimum": 1},
        "g": {
            "anyOf": [
                {"type": "integer", "minimum": 1},
                {
                    "type": "object",
                    "properties": {"table": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}}},
                    "required": ["table"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"a": {"type": "number", "exclusiveMinimum": 0}, "b": {"type": "number"}},
                    "required": ["a", "b"],
                    "additionalProperties": False,
                },
            ]
        },
        "seed": {"type": "integer"},
        "horizon": {"type": "integer", "minimum": 0},
        "gst": {"type": ["integer", "null"], "minimum": 0},
        "adversary": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"type": "string"}, "params": {"type": "object"}},
            "additionalProperties": False,
        },
        "tx_schedule": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["round", "txs"],
                "additionalProperties": False,
                "properties": {
                    "round": {"type": "integer", "minimum": 0},
                    "txs": {"type": "array", "items": {"type": "string"}},
                    "recipients": {
                        "anyOf": [
                            {"enum": ["all", "honest"]},
                            {"type": "array", "items": {"type": "integer", "minimum": 0}},
                        ]
                    },
                },
            },
        },
        "conformance_declared": {"type": "boolean"},
        "accountability": {"type": "boolean"},
        "trace_level": {"enum": ["full", "summary"]},
        "save_bundles": {"type": "boolean"},
    },
}


@dataclass
class ScenarioConfig:
    n: int
    seed: int
    delta: int = 1
    x: Fraction = Fraction(0)
    delta_x: Fraction = Fraction(1, 4)
    tau_al_max: int | None = None
    k_views: int = 0
    g: Any = 8
    horizon: int = 240
    gst: int | None = None
    adversary: dict = field(default_factory=lambda: {"kind": "honest"})
    tx_schedule: list = field(default_factory=list)
    conformance_declared: bool = False
    accountability: bool = True
    trace_level: str = "full"
    save_bundles: bool = False
    name: str = ""
    description: str = ""

    def __post_init__(self):
        self.x = as_fraction(self.x)
        self.delta_x = as_fraction(self.delta_x)
        if self.tau_al_max is None:
            self.tau_al_max = max((self.n - 1) // 2, 0)
        if not self.k_views:
            self.k_views = k_views_for(self.delta_x) if self.delta_x > 0 else 1
        self._check()

    def _check(self):
        if self.delta < 1:
            raise ConfigError("delta: must be at least 1")
        if not 0 <= self.x <= 1:
            raise ConfigError("x: must lie in [0, 1]")
        if self.accountability:
            if 2 * self.tau_al_max >= self.n:
                raise ConfigError("tau_al_max: must be below n/2")
            if self.x + self.delta_x >= Fraction(1, 2):
                raise ConfigError("x + delta_x: must be below 1/2")
        self.g_value  # validates the g spec

    @property
    def delta_prime(self) -> int:
        return 12 * self.delta * self.k_views

    @property
    def g_value(self) -> int:
        g = self.g
        dp = self.delta_prime
        if isinstance(g, int):
            return g
        if isinstance(g, dict) and "table" in g:
            try:
                return int(g["table"][str(dp)])
            except KeyError:
                raise ConfigError(f"g.table: no entry for delta_prime={dp}") from None
        if isinstance(g, dict) and "a" in g:
            return max(1, math.ceil(Fraction(repr(float(g["a"]))) * Fraction(repr(float(dp) ** float(g["b"])))))
        raise ConfigError(f"g: unsupported spec {g!r}")

    @property
    def window(self) -> int:
        return self.delta_prime * self.g_value

    def tx_plan(self, corrupt: frozenset = frozenset()) -> dict[int, dict[int, list[Transaction]]]:
        plan: dict[int, dict[int, list[Transaction]]] = {}
        for item in self.tx_schedule:
            rec = item.get("recipients", "all")
            if rec == "all":
                nodes = range(self.n)
            elif rec == "honest":
                nodes = [p for p in range(self.n) if p not in corrupt]
            else:
                nodes = rec
            txs = [Transaction.from_payload(s) for s in item["txs"]]
            slot = plan.setdefault(item["round"], {})
            for p in nodes:
                slot.setdefault(p, []).extend(txs)
        return plan

    def with_overrides(self, seed: int | None = None, horizon: int | None = None) -> "ScenarioConfig":
        cfg = replace(self)
        if seed is not None:
            cfg.seed = seed
        if horizon is not None:
            cfg.horizon = horizon
        return cfg

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "description": self.description,
            "n": self.n,
            "delta": self.delta,
            "x": str(self.x),
            "delta_x": str(self.delta_x),
            "tau_al_max": self.tau_al_max,
            "k_views": self.k_views,
            "g": self.g,
            "seed": self.seed,
            "horizon": self.horizon,
            "gst": self.gst,
            "adversary": self.adversary,
            "tx_schedule": self.tx_schedule,
            "conformance_declared": self.conformance_declared,
            "accountability": self.accountability,
            "trace_level": self.trace_level,
            "save_bundles": self.save_bundles,
        }
        return d


def config_from_dict(data: Any) -> ScenarioConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: {e.message}")
        raise ConfigError("; ".join(lines))
    data = dict(data)
    if "delta_prime" in data:
        dp = data.pop("delta_prime")
        delta = data.get("delta", 1)
        if dp % (12 * delta):
            raise ConfigError("delta_prime: must be a multiple of 12*delta")
        k = dp // (12 * delta)
        if data.get("k_views", k) != k:
            raise ConfigError("k_views: inconsistent with delta_prime")
        data["k_views"] = k
    try:
        return ScenarioConfig(**data)
    except ConfigError:
        raise
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
