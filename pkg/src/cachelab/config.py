"""Experiment and sweep configuration: JSON files checked against a strict schema."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigParse, SchemaViolation
from .toy_dit import BackboneConfig

METHODS = ("nocache", "uniform", "step_only", "block_only", "token_only", "c2f", "phase")
SWEEP_AXES = ("r", "rho_tok", "block_ratio", "gamma", "phase")

_pos_int = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0}

EXPERIMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cachelab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["method"],
    "properties": {
        "backbone": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_blocks": _pos_int,
                "n_tokens": _pos_int,
                "dim": _pos_int,
                "n_heads": _pos_int,
                "mlp_ratio": _pos_int,
                "weight_seed": _seed,
                "weight_scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 2},
                "beta_start": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta_end": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_crit": {"type": "number", "minimum": 0},
                "delta_warn": {"type": ["number", "null"], "minimum": 0},
                "r": {"oneOf": [{"type": "number", "minimum": 0, "maximum": 1}, {"const": "auto"}, {"type": "null"}]},
                "gamma": {"type": "number", "minimum": 0, "maximum": 1},
                "delta_blk": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "block_ratio": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "rho_tok": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_consecutive_skips": _pos_int,
                "force_last_full": {"type": "boolean"},
            },
        },
        "method": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(METHODS)},
                "interval": {"type": "integer", "minimum": 2},
                "phase": {"enum": ["early", "mid", "late"]},
                "skip_count": _pos_int,
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seeds": {"type": "array", "items": _seed, "minItems": 1},
                "curve": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
            },
        },
        "seeds": {"type": "array", "items": _seed, "minItems": 1},
        "output_dir": {"type": "string"},
    },
}

SWEEP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cachelab sweep",
    "type": "object",
    "additionalProperties": False,
    "required": ["base", "axis", "values"],
    "properties": {
        "base": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "axis": {"enum": list(SWEEP_AXES)},
        "values": {"type": "array", "minItems": 1},
        "output_dir": {"type": "string"},
    },
}


@dataclass(frozen=True)
class SamplerSettings:
    """Sampler knobs shared by every seed; the latent seed comes from ``seeds``."""

    steps: int = 20
    beta_start: float = 0.02
    beta_end: float = 0.3


@dataclass(frozen=True)
class ControllerSettings:
    delta_crit: float = 0.5
    delta_warn: float | None = None
    r: float | str | None = "auto"
    gamma: float = 0.0
    delta_blk: float | None = None
    block_ratio: float | None = 0.8
    rho_tok: float = 0.8
    max_consecutive_skips: int = 6
    force_last_full: bool = True


@dataclass(frozen=True)
class MethodSettings:
    name: str = "c2f"
    interval: int | None = None
    phase: str | None = None
    skip_count: int | None = None


@dataclass(frozen=True)
class CalibrationSettings:
    seeds: tuple[int, ...] = (1000, 1001, 1002, 1003)
    curve: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    controller: ControllerSettings = field(default_factory=ControllerSettings)
    method: MethodSettings = field(default_factory=MethodSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["calibration"]["seeds"] = list(self.calibration.seeds)
        if self.calibration.curve is not None:
            d["calibration"]["curve"] = list(self.calibration.curve)
        d["method"] = {k: v for k, v in d["method"].items() if v is not None}
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, overrides: dict) -> ExperimentConfig:
        raw = self.to_dict()
        for key, val in overrides.items():
            set_dotted(raw, key, val)
        return from_dict(raw)


def _validate(raw, schema, source):
    try:
        jsonschema.validate(raw, schema)
    except jsonschema.ValidationError as e:
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaViolation(e.message, path=f"{source}:{where}") from None


def _check_method(m: MethodSettings, source):
    if m.name == "uniform" and m.interval is None:
        raise SchemaViolation("uniform needs method.interval >= 2", path=f"{source}:method.interval")
    if m.name == "phase" and (m.phase is None or m.skip_count is None):
        raise SchemaViolation("phase needs method.phase and method.skip_count", path=f"{source}:method")


def from_dict(raw: dict, source: str = "<config>") -> ExperimentConfig:
    _validate(raw, EXPERIMENT_SCHEMA, source)
    ctrl = dict(raw.get("controller", {}))
    if ctrl.get("delta_warn") is not None:
        # an explicit delta_warn beats the default r = "auto"
        if ctrl.get("r", "auto") not in ("auto", None):
            raise SchemaViolation("set either delta_warn or a numeric r, not both", path=f"{source}:controller")
        ctrl["r"] = None
        if ctrl["delta_warn"] > ctrl.get("delta_crit", ControllerSettings.delta_crit):
            raise SchemaViolation("delta_warn must not exceed delta_crit", path=f"{source}:controller.delta_warn")
    cal = dict(raw.get("calibration", {}))
    if "seeds" in cal:
        cal["seeds"] = tuple(cal["seeds"])
    if cal.get("curve") is not None:
        cal["curve"] = tuple(float(v) for v in cal["curve"])
    try:
        cfg = ExperimentConfig(
            backbone=BackboneConfig(**raw.get("backbone", {})),
            sampler=SamplerSettings(**raw.get("sampler", {})),
            controller=ControllerSettings(**ctrl),
            method=MethodSettings(**raw["method"]),
            calibration=CalibrationSettings(**cal),
            seeds=tuple(raw.get("seeds", (0,))),
            output_dir=raw.get("output_dir", "out"),
        )
    except ValueError as e:
        raise SchemaViolation(str(e), path=source) from None
    _check_method(cfg.method, source)
    if cfg.calibration.curve is not None and len(cfg.calibration.curve) != cfg.sampler.steps - 1:
        raise SchemaViolation(f"curve needs {cfg.sampler.steps - 1} entries", path=f"{source}:calibration.curve")
    return cfg


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParse(f"cannot read: {e.strerror}", path=str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParse(f"line {e.lineno} col {e.colno}: {e.msg}", path=str(path)) from None


def load(path, overrides: dict | None = None) -> ExperimentConfig:
    raw = read_json(path)
    for key, val in (overrides or {}).items():
        set_dotted(raw, key, val)
    return from_dict(raw, source=str(path))


def set_dotted(raw: dict, key: str, value) -> None:
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise SchemaViolation(f"cannot descend into non-object at {p}", path=key)
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``a.b=1.5`` -> ("a.b", 1.5); values parse as JSON, else stay strings."""
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise ConfigParse(f"override must look like key=value, got {text!r}")
    try:
        return key.strip(), json.loads(val)
    except json.JSONDecodeError:
        return key.strip(), val


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: tuple
    output_dir: str | None = None

    def __post_init__(self):
        for v in self.values:
            _check_axis_value(self.axis, v)


def _check_axis_value(axis, v):
    if axis == "phase":
        ok = v in ("early", "mid", "late")
    elif axis in ("r", "gamma", "block_ratio"):
        ok = isinstance(v, (int, float)) and 0.0 <= v <= 1.0
    else:
        ok = isinstance(v, (int, float)) and 0.0 < v <= 1.0
    if not ok:
        raise SchemaViolation(f"value {v!r} outside the domain of axis {axis}", path="values")


def load_sweep(path, overrides: dict | None = None) -> SweepSpec:
    raw = read_json(path)
    _validate(raw, SWEEP_SCHEMA, str(path))
    base = raw["base"]
    if isinstance(base, str):
        base_path = (Path(path).parent / base)
        base_raw = read_json(base_path)
        source = str(base_path)
    else:
        base_raw = copy.deepcopy(base)
        source = f"{path}:base"
    for key, val in (overrides or {}).items():
        set_dotted(base_raw, key, val)
    cfg = from_dict(base_raw, source=source)
    return SweepSpec(cfg, raw["axis"], tuple(raw["values"]), raw.get("output_dir"))
