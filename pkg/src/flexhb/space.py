"""Hyperparameter space definitions, sampling, and unit-cube encoding.

A ``ConfigSpace`` is an ordered collection of ``ParamSpec`` entries. Sampled
points are carried around as immutable ``Configuration`` values; surrogate
models only ever see the ``encode``d form, a vector in [0, 1]^d where numeric
parameters are mapped affinely (in log-domain when requested) and categoricals
map to ``index / (n_choices - 1)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

KIND_CONTINUOUS = "continuous"
KIND_INTEGER = "integer"
KIND_CATEGORICAL = "categorical"
_KINDS = (KIND_CONTINUOUS, KIND_INTEGER, KIND_CATEGORICAL)

ORIGIN_RANDOM = "random"
ORIGIN_MODEL = "model"
ORIGIN_REVIVED = "revived"


class SpaceError(ValueError):
    """Invalid parameter definition or out-of-bounds configuration."""


@dataclass(frozen=True)
class ParamSpec:
    """One hyperparameter: numeric range or categorical choice list."""

    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    log_scale: bool = False
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise SpaceError(f"unknown parameter kind {self.kind!r}")
        if self.kind == KIND_CATEGORICAL:
            if not self.choices or len(self.choices) < 2:
                raise SpaceError(f"{self.name}: categorical needs >= 2 choices")
            if len(set(self.choices)) != len(self.choices):
                raise SpaceError(f"{self.name}: duplicate choices")
            object.__setattr__(self, "choices", tuple(self.choices))
        else:
            if self.lower is None or self.upper is None:
                raise SpaceError(f"{self.name}: numeric parameter needs bounds")
            if not (self.lower < self.upper):
                raise SpaceError(f"{self.name}: lower must be < upper")
            if self.log_scale and self.lower <= 0:
                raise SpaceError(f"{self.name}: log scale requires lower > 0")

    def contains(self, value: Any) -> bool:
        if self.kind == KIND_CATEGORICAL:
            return value in self.choices
        if self.kind == KIND_INTEGER and round(value) != value:
            return False
        return self.lower <= value <= self.upper

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind == KIND_CATEGORICAL:
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.log_scale:
            value = math.exp(rng.uniform(math.log(self.lower), math.log(self.upper)))
        else:
            value = rng.uniform(self.lower, self.upper)
        if self.kind == KIND_INTEGER:
            return int(min(self.upper, max(self.lower, round(value))))
        return float(value)

    def encode(self, value: Any) -> float:
        if not self.contains(value):
            raise SpaceError(f"{self.name}: value {value!r} out of bounds")
        if self.kind == KIND_CATEGORICAL:
            return self.choices.index(value) / (len(self.choices) - 1)
        lo, hi, v = self.lower, self.upper, value
        if self.log_scale:
            lo, hi, v = math.log(lo), math.log(hi), math.log(v)
        return (v - lo) / (hi - lo)

    def decode(self, unit: float) -> Any:
        unit = min(1.0, max(0.0, float(unit)))
        if self.kind == KIND_CATEGORICAL:
            return self.choices[int(round(unit * (len(self.choices) - 1)))]
        if self.log_scale:
            value = math.exp(math.log(self.lower) + unit * (math.log(self.upper) - math.log(self.lower)))
        else:
            value = self.lower + unit * (self.upper - self.lower)
        if self.kind == KIND_INTEGER:
            return int(min(self.upper, max(self.lower, round(value))))
        return float(value)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == KIND_CATEGORICAL:
            out["choices"] = list(self.choices)
        else:
            out.update(lower=self.lower, upper=self.upper, log=self.log_scale)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParamSpec":
        choices = data.get("choices")
        return cls(
            name=data["name"],
            kind=data["kind"],
            lower=data.get("lower"),
            upper=data.get("upper"),
            log_scale=bool(data.get("log", data.get("log_scale", False))),
            choices=tuple(choices) if choices else None,
        )


@dataclass(frozen=True)
class Configuration:
    """A sampled point: values for every parameter plus an audit origin."""

    id: str
    values: Mapping[str, Any] = field(compare=False)
    origin: str = ORIGIN_RANDOM

    def with_origin(self, origin: str) -> "Configuration":
        return replace(self, origin=origin)


def _config_id(values: Mapping[str, Any]) -> str:
    blob = json.dumps({k: values[k] for k in sorted(values)}, sort_keys=True)
    return "c" + hashlib.sha1(blob.encode()).hexdigest()[:12]


class ConfigSpace:
    """Ordered, immutable set of parameters with encode/decode helpers."""

    def __init__(self, params: Sequence[ParamSpec]):
        if not params:
            raise SpaceError("space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate parameter names")
        self.params: tuple[ParamSpec, ...] = tuple(params)
        self.names: tuple[str, ...] = tuple(names)
        self.dim = len(params)

    def validate(self, config: Configuration) -> None:
        missing = set(self.names) - set(config.values)
        if missing:
            raise SpaceError(f"configuration missing parameters {sorted(missing)}")
        for spec in self.params:
            if not spec.contains(config.values[spec.name]):
                raise SpaceError(f"{spec.name}: value {config.values[spec.name]!r} out of bounds")

    def make_config(self, values: Mapping[str, Any], origin: str = ORIGIN_RANDOM,
                    config_id: str | None = None) -> Configuration:
        config = Configuration(config_id or _config_id(values), dict(values), origin)
        self.validate(config)
        return config

    def sample_random(self, rng: np.random.Generator) -> Configuration:
        values = {spec.name: spec.sample(rng) for spec in self.params}
        return Configuration(_config_id(values), values, ORIGIN_RANDOM)

    def encode(self, config: Configuration) -> np.ndarray:
        return np.array([spec.encode(config.values[spec.name]) for spec in self.params])

    def decode(self, vector: np.ndarray) -> dict[str, Any]:
        if len(vector) != self.dim:
            raise SpaceError(f"expected {self.dim} coordinates, got {len(vector)}")
        return {spec.name: spec.decode(v) for spec, v in zip(self.params, vector)}

    def config_from_vector(self, vector: np.ndarray, origin: str = ORIGIN_MODEL) -> Configuration:
        values = self.decode(vector)
        return Configuration(_config_id(values), values, origin)

    def space_hash(self) -> str:
        blob = json.dumps([p.to_dict() for p in self.params], sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def to_dict(self) -> dict[str, Any]:
        return {"params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConfigSpace":
        try:
            entries = data["params"]
        except (KeyError, TypeError):
            raise SpaceError("space definition needs a 'params' list") from None
        return cls([ParamSpec.from_dict(e) for e in entries])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ConfigSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))
