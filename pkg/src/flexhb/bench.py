"""Objective functions with virtual cost models.

Two benchmark families: a fabricated 3-hyperparameter objective whose metric
improves with epochs and carries epoch-dependent Gaussian noise, and a tabular
benchmark that replays stored learning curves (one metric per epoch, lower is
better) with a per-epoch virtual cost.

Noise is a pure function of (noise seed, configuration, epoch), so replaying
the same evaluation reproduces the same metric regardless of evaluation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.special import ndtr

from .space import ConfigSpace, Configuration, ParamSpec

TOY_X_MAX = 10.0
TOY_Y_MAX = 20.0
TOY_Z_MAX = 10.0
_TOY_DENOM = TOY_X_MAX**2 + (TOY_Y_MAX / 4.0) ** 2 + TOY_Z_MAX

DEFAULT_COST_RANGE = (0.3, 0.7)


class BenchmarkError(ValueError):
    """Bad benchmark definition or out-of-range evaluation."""


def toy_bias(epoch: float) -> float:
    """Learning-progress offset: grows with epochs toward saturation."""
    if epoch <= 0:
        raise BenchmarkError("epoch must be positive")
    return -20.02 / (1.0 + (epoch / 2.569) ** 1.171) + 32.935


def toy_eval(x: float, y: float, z: float, epoch: int, phi: float,
             rng: np.random.Generator, max_epoch: int = 27,
             amplitude: float = 10.0) -> float:
    """Fabricated validation error: quality term minus bias plus noise.

    The quality term min-max scales x^2 + (y/4)^2 + z over its range and
    multiplies by ``amplitude``; the noise is N(0, sigma^2) with
    sigma = phi * max_epoch / epoch, so low fidelities are noisy and high
    noise levels drown the signal entirely at epoch 1.
    """
    if not (-TOY_X_MAX <= x <= TOY_X_MAX and 0 <= y <= TOY_Y_MAX and 0 <= z <= TOY_Z_MAX):
        raise BenchmarkError("configuration out of range")
    if not 1 <= epoch <= max_epoch:
        raise BenchmarkError(f"epoch {epoch} outside [1, {max_epoch}]")
    q = (x * x + (y / 4.0) ** 2 + z) / _TOY_DENOM
    noise = rng.normal(0.0, phi * max_epoch / epoch) if phi > 0 else 0.0
    return -amplitude * q - toy_bias(epoch) + noise


def toy_sigma(epoch: int, phi: float, max_epoch: int = 27) -> float:
    return phi * max_epoch / epoch


def toy_space() -> ConfigSpace:
    return ConfigSpace([
        ParamSpec("x", "continuous", -TOY_X_MAX, TOY_X_MAX),
        ParamSpec("y", "continuous", 0.0, TOY_Y_MAX),
        ParamSpec("z", "continuous", 0.0, TOY_Z_MAX),
    ])


@dataclass(frozen=True)
class ToySpec:
    phi: float
    max_epoch: int = 27
    amplitude: float = 10.0
    cost_per_unit: float = 1.0

    def __post_init__(self) -> None:
        if self.phi < 0:
            raise BenchmarkError("noise level must be >= 0")
        if self.amplitude <= 0:
            raise BenchmarkError("amplitude must be > 0")


def _config_entropy(config_id: str) -> int:
    try:
        return int(config_id.lstrip("c"), 16)
    except ValueError:
        return abs(hash(config_id)) & 0xFFFFFFFFFFFF


class ToyBenchmark:
    """Formula benchmark; every epoch of training costs a fixed virtual time."""

    def __init__(self, spec: ToySpec, noise_seed: int = 0):
        self.spec = spec
        self.noise_seed = noise_seed
        self.space = toy_space()
        self.max_resource = spec.max_epoch

    def evaluate(self, config: Configuration, epoch: int) -> float:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.noise_seed, _config_entropy(config.id), epoch]))
        v = config.values
        return toy_eval(v["x"], v["y"], v["z"], epoch, self.spec.phi, rng,
                        max_epoch=self.spec.max_epoch, amplitude=self.spec.amplitude)

    def noiseless(self, config: Configuration, epoch: int) -> float:
        v = config.values
        q = (v["x"] ** 2 + (v["y"] / 4.0) ** 2 + v["z"]) / _TOY_DENOM
        return -self.spec.amplitude * q - toy_bias(epoch)

    def incremental_cost(self, config: Configuration, r_from: int, r_to: int) -> float:
        return (r_to - r_from) * self.spec.cost_per_unit


class TabularBenchmark:
    """Stored learning curves indexed by exact parameter tuple."""

    def __init__(self, space: ConfigSpace, rows: list[dict[str, Any]],
                 cost_rng: np.random.Generator | None = None):
        if not rows:
            raise BenchmarkError("tabular benchmark needs at least one row")
        cost_rng = cost_rng or np.random.default_rng(0)
        self.space = space
        self.configs: list[Configuration] = []
        self.curves: list[tuple[float, ...]] = []
        self.costs: list[float] = []
        seen: set[str] = set()
        curve_len = None
        for i, row in enumerate(rows):
            try:
                params = row["params"]
                curve = tuple(float(v) for v in row["curve"])
            except (KeyError, TypeError, ValueError) as exc:
                raise BenchmarkError(f"row {i}: {exc}") from None
            if curve_len is None:
                curve_len = len(curve)
            elif len(curve) != curve_len:
                raise BenchmarkError(f"row {i}: curve length {len(curve)} != {curve_len}")
            if not curve:
                raise BenchmarkError(f"row {i}: empty curve")
            cost = row.get("cost_per_epoch")
            if cost is None:
                cost = float(cost_rng.uniform(*DEFAULT_COST_RANGE))
            elif cost <= 0:
                raise BenchmarkError(f"row {i}: cost_per_epoch must be > 0")
            try:
                config = space.make_config(params)
            except Exception as exc:
                raise BenchmarkError(f"row {i}: {exc}") from None
            if config.id in seen:
                raise BenchmarkError(f"row {i}: duplicate parameter tuple")
            seen.add(config.id)
            self.configs.append(config)
            self.curves.append(curve)
            self.costs.append(float(cost))
        self.max_resource = curve_len
        self._index = {c.id: i for i, c in enumerate(self.configs)}
        self._encoded = np.array([space.encode(c) for c in self.configs])

    def __len__(self) -> int:
        return len(self.configs)

    def row_of(self, config: Configuration) -> int:
        try:
            return self._index[config.id]
        except KeyError:
            raise BenchmarkError(f"configuration {config.id} is not tabulated") from None

    def snap(self, config: Configuration) -> Configuration:
        """Nearest tabulated row in encoded space; keeps the proposal origin."""
        if config.id in self._index:
            return config
        x = self.space.encode(config)
        dist = np.linalg.norm(self._encoded - x, axis=1)
        return self.configs[int(np.argmin(dist))].with_origin(config.origin)

    def sample_rows(self, rng: np.random.Generator, k: int) -> list[Configuration]:
        """Uniform draw of k distinct rows (all rows when k exceeds the table)."""
        k = min(k, len(self.configs))
        picks = rng.choice(len(self.configs), size=k, replace=False)
        return [self.configs[int(i)] for i in picks]

    def sample_random(self, rng: np.random.Generator) -> Configuration:
        return self.configs[int(rng.integers(len(self.configs)))]

    def evaluate(self, config: Configuration, epoch: int) -> float:
        row = self.row_of(config)
        curve = self.curves[row]
        if not 1 <= epoch <= len(curve):
            raise BenchmarkError(f"epoch {epoch} outside curve of length {len(curve)}")
        return curve[epoch - 1]

    def incremental_cost(self, config: Configuration, r_from: int, r_to: int) -> float:
        return self.costs[self.row_of(config)] * (r_to - r_from)

    def final_metrics(self) -> dict[str, float]:
        return {c.id: curve[-1] for c, curve in zip(self.configs, self.curves)}


def tabular_eval(bench: TabularBenchmark, config: Configuration, epoch: int,
                 resume_from: int = 0) -> tuple[float, float]:
    """Metric at ``epoch`` plus the virtual cost of the newly trained epochs."""
    metric = bench.evaluate(config, epoch)
    return metric, bench.incremental_cost(config, resume_from, epoch)


def load_tabular(path: str | Path, cost_rng: np.random.Generator | None = None) -> TabularBenchmark:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BenchmarkError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, Mapping) or "space" not in data or "rows" not in data:
        raise BenchmarkError(f"{path}: expected an object with 'space' and 'rows'")
    space = ConfigSpace.from_dict(data["space"])
    return TabularBenchmark(space, data["rows"], cost_rng)


def generate_tabular(n_configs: int = 200, max_epoch: int = 27, seed: int = 0,
                     low_tau: float = -0.3, shape: float = 3.0,
                     with_costs: bool = False) -> dict[str, Any]:
    """Synthetic learning-curve grid with controllable early/late rank agreement.

    Final errors and first-epoch errors are coupled through a Gaussian copula
    so that the Kendall correlation between epoch-1 and final rankings lands
    near ``low_tau`` (negative values give crossing curves: configurations
    that look bad early finish well). Curves interpolate between the two
    anchors with decay exponent ``shape``.
    """
    if not -1.0 < low_tau < 1.0:
        raise BenchmarkError("low_tau must lie in (-1, 1)")
    rng = np.random.default_rng(seed)
    rho = math.sin(low_tau * math.pi / 2.0)
    z_final = rng.normal(size=n_configs)
    z_early = rho * z_final + math.sqrt(1.0 - rho * rho) * rng.normal(size=n_configs)
    final = 0.05 + 0.4 * ndtr(z_final)
    early = 0.55 + 0.4 * ndtr(z_early)
    u = rng.random(n_configs)
    v = rng.random(n_configs)
    rows = []
    epochs = np.arange(1, max_epoch + 1)
    decay = ((max_epoch - epochs) / (max_epoch - 1.0)) ** shape
    for i in range(n_configs):
        curve = final[i] + (early[i] - final[i]) * decay
        row: dict[str, Any] = {
            "params": {"u": round(float(u[i]), 6), "v": round(float(v[i]), 6)},
            "curve": [round(float(c), 6) for c in curve],
        }
        if with_costs:
            row["cost_per_epoch"] = round(float(rng.uniform(*DEFAULT_COST_RANGE)), 3)
        rows.append(row)
    space = {"params": [
        {"name": "u", "kind": "continuous", "lower": 0.0, "upper": 1.0, "log": False},
        {"name": "v", "kind": "continuous", "lower": 0.0, "upper": 1.0, "log": False},
    ]}
    return {"space": space, "rows": rows}


def build_benchmark(spec: Mapping[str, Any], noise_seed: int = 0,
                    cost_rng: np.random.Generator | None = None):
    """Instantiate a benchmark from its JSON description."""
    kind = spec.get("kind")
    if kind == "toy":
        toy = ToySpec(phi=float(spec.get("phi", 0.0)),
                      max_epoch=int(spec.get("max_epoch", 27)),
                      amplitude=float(spec.get("amplitude", 10.0)),
                      cost_per_unit=float(spec.get("cost_per_unit", 1.0)))
        return ToyBenchmark(toy, noise_seed=noise_seed)
    if kind == "tabular":
        if "path" in spec:
            return load_tabular(spec["path"], cost_rng)
        return TabularBenchmark(ConfigSpace.from_dict(spec["space"]), spec["rows"], cost_rng)
    raise BenchmarkError(f"unknown benchmark kind {kind!r}")
