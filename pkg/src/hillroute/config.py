"""Run configuration files (YAML or JSON) with line-anchored validation errors."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import jsonschema
import yaml

from .core import ContractViolation, NetworkConfig, PathModel

SEED_ENV = "HILLROUTE_SEED"
MECHANISM_NAMES = ("sharing", "hiding", "deterministic", "upr", "optimum")

_PATH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["c_L", "c_H", "q_LH", "q_HH"],
    "properties": {
        "c_L": {"type": "number"},
        "c_H": {"type": "number"},
        "q_LH": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "q_HH": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "congestion": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network", "run"],
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["c0", "paths"],
            "properties": {
                "c0": {"type": "number"},
                "congestion0": {"type": "number", "exclusiveMinimum": 0},
                "paths": {"type": "array", "minItems": 1, "items": _PATH_SCHEMA},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho", "epsilon", "x0"],
            "properties": {
                "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "x0": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "T": {"type": ["integer", "null"], "minimum": 1},
                "M": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "discounted": {"type": "boolean"},
            },
        },
        "mechanisms": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": list(MECHANISM_NAMES)},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "summary": {"type": "string"},
                "traces": {"type": ["string", "null"]},
                "figures": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Raised for unreadable or invalid run configurations."""


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig
    x0: Tuple[float, ...]
    T: Optional[int] = None
    M: int = 100
    seed: int = 0
    discounted: bool = True
    mechanisms: Tuple[str, ...] = ("sharing", "hiding", "upr", "optimum")
    summary: str = "summary.csv"
    traces: Optional[str] = None
    figures: bool = True
    source: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        net = self.network
        return {
            "network": {
                "c0": net.c0,
                "congestion0": net.deterministic_path.congestion,
                "paths": [
                    {"c_L": p.c_L, "c_H": p.c_H, "q_LH": p.q_LH, "q_HH": p.q_HH, "congestion": p.congestion}
                    for p in net.stochastic_paths
                ],
            },
            "run": {
                "rho": net.rho,
                "epsilon": net.epsilon,
                "x0": list(self.x0),
                "T": self.T,
                "M": self.M,
                "seed": self.seed,
                "discounted": self.discounted,
            },
            "mechanisms": list(self.mechanisms),
            "output": {"summary": self.summary, "traces": self.traces, "figures": self.figures},
        }


def _line_marks(node, path=(), marks=None) -> dict:
    """Map each key path in a composed YAML tree to its 1-based line number."""
    if marks is None:
        marks = {}
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            sub = path + (key.value,)
            marks[sub] = key.start_mark.line + 1
            _line_marks(value, sub, marks)
            marks[sub] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_marks(item, path + (i,), marks)
    return marks


def _anchor(marks: dict, path) -> int:
    path = tuple(path)
    while path not in marks and path:
        path = path[:-1]
    return marks.get(path, 1)


def _describe(err: jsonschema.ValidationError) -> str:
    where = ".".join(str(p) for p in err.absolute_path) or "<top>"
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in (err.instance or {})]
        return f"{where}: missing required field {missing[0]!r}" if missing else f"{where}: {err.message}"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"{where}: unknown key {extra[0]!r}" if extra else f"{where}: {err.message}"
    return f"{where}: {err.message}"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: cannot parse: {getattr(exc, 'problem', exc)}") from None
    if node is None or not isinstance(data, dict):
        raise ConfigError(f"{source}:1: expected a mapping with 'network' and 'run' blocks")
    marks = _line_marks(node)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (_anchor(marks, e.absolute_path), e.path))
    if errors:
        lines = [f"{source}:{_anchor(marks, e.absolute_path)}: {_describe(e)}" for e in errors]
        raise ConfigError("\n".join(lines))
    net, run = data["network"], data["run"]
    try:
        paths = [PathModel.stochastic(p["c_L"], p["c_H"], p["q_LH"], p["q_HH"], p.get("congestion", 1.0))
                 for p in net["paths"]]
        config = NetworkConfig(PathModel.deterministic(net["c0"], net.get("congestion0", 1.0)),
                               paths, run["rho"], run["epsilon"])
    except ContractViolation as exc:
        raise ConfigError(f"{source}:{_anchor(marks, ('network',))}: network: {exc}") from None
    x0 = tuple(float(v) for v in run["x0"])
    if len(x0) != config.N:
        raise ConfigError(f"{source}:{_anchor(marks, ('run', 'x0'))}: run.x0: need {config.N} entries, got {len(x0)}")
    seed = run.get("seed")
    if seed is None:
        seed = default_seed()
    out = data.get("output", {})
    return RunConfig(
        config, x0, run.get("T"), run.get("M", 100), int(seed), run.get("discounted", True),
        tuple(data.get("mechanisms", RunConfig.mechanisms)),
        out.get("summary", "summary.csv"), out.get("traces"), out.get("figures", True), source,
    )


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be nonnegative")
    return seed


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig, path=None) -> str:
    """YAML text for ``cfg`` (JSON when ``path`` ends in .json); written if a path is given."""
    data = cfg.to_dict()
    if path is not None and str(path).endswith(".json"):
        text = json.dumps(data, indent=2) + "\n"
    else:
        text = yaml.safe_dump(data, sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
