"""Measurement bookkeeping: per-fidelity datasets, incumbent, archive, history file.

The store is the single owner of everything observed during a run. Metrics are
minimized everywhere; callers negate maximization objectives before recording.
A (config, resource) pair holds at most one metric -- re-evaluations replace.
The incumbent is defined at full fidelity only.

History files are JSON lines: one header object, then one object per record.
Measurement lines carry exactly the documented keys; configuration and archive
lines use disjoint key sets so a reload can rebuild the full store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np

from .space import ConfigSpace, Configuration


class HistoryError(ValueError):
    """Malformed or truncated history file."""


@dataclass(frozen=True)
class Measurement:
    config_id: str
    resource: int
    metric: float
    virtual_time: float
    bracket_id: str
    is_checkpoint: bool

    def __post_init__(self) -> None:
        if self.resource < 1:
            raise ValueError("resource must be >= 1")
        if not np.isfinite(self.metric):
            raise ValueError("metric must be finite")


class EliminationArchive:
    """Stopped configurations per fidelity level, awaiting possible revival."""

    def __init__(self) -> None:
        self._levels: dict[int, dict[str, float]] = {}

    def entries(self, resource: int) -> list[tuple[str, float]]:
        level = self._levels.get(resource, {})
        return sorted(level.items())

    def replace_level(self, resource: int, entries: Mapping[str, float]) -> None:
        self._levels[resource] = dict(entries)

    def contains(self, config_id: str) -> bool:
        return any(config_id in level for level in self._levels.values())

    def size(self) -> int:
        return sum(len(level) for level in self._levels.values())

    def as_dict(self) -> dict[int, dict[str, float]]:
        return {r: dict(level) for r, level in self._levels.items() if level}


class FidelityView:
    """Immutable snapshot of the per-level datasets, ready for surrogate fits."""

    def __init__(self, store: "RunStore"):
        self.version = store.version
        self.max_resource = store.max_resource
        self._space = store.space
        self._levels: dict[int, tuple[tuple[Configuration, ...], np.ndarray]] = {}
        for r in store.levels():
            ids = sorted(store._by_level[r])
            configs = tuple(store._configs[i] for i in ids)
            ys = np.array([store._by_level[r][i] for i in ids])
            self._levels[r] = (configs, ys)

    @property
    def levels(self) -> list[int]:
        return sorted(self._levels)

    def size(self, resource: int) -> int:
        return len(self._levels[resource][1]) if resource in self._levels else 0

    def points(self, resource: int) -> tuple[tuple[Configuration, ...], np.ndarray]:
        return self._levels[resource]

    def encoded(self, resource: int) -> tuple[np.ndarray, np.ndarray]:
        configs, ys = self._levels[resource]
        X = np.array([self._space.encode(c) for c in configs])
        return X, ys

    def best_target(self) -> float | None:
        """Incumbent metric at full fidelity, else best at highest populated level."""
        if not self._levels:
            return None
        r = self.max_resource if self.max_resource in self._levels else self.levels[-1]
        return float(self._levels[r][1].min())


class RunStore:
    """Single-writer container for all measurements of one run."""

    def __init__(self, space: ConfigSpace, max_resource: int, metadata: Mapping[str, Any] | None = None):
        self.space = space
        self.max_resource = int(max_resource)
        self.metadata = dict(metadata or {})
        self.archive = EliminationArchive()
        self.version = 0
        self._configs: dict[str, Configuration] = {}
        self._by_level: dict[int, dict[str, float]] = {}
        self._log: list[Measurement] = []
        self._incumbent: tuple[str, float] | None = None
        self._trajectory: list[tuple[float, float, str]] = []

    # ------------------------------------------------------------------ write

    def record(self, config: Configuration, measurement: Measurement) -> None:
        if config.id != measurement.config_id:
            raise ValueError("measurement does not belong to this configuration")
        known = self._configs.get(config.id)
        if known is None or known.origin != config.origin:
            self._configs[config.id] = config  # origin audit follows the latest state
        self._by_level.setdefault(measurement.resource, {})[config.id] = measurement.metric
        self._log.append(measurement)
        self.version += 1
        if measurement.resource == self.max_resource:
            if self._incumbent is None or measurement.metric < self._incumbent[1]:
                self._incumbent = (config.id, measurement.metric)
                t, y = measurement.virtual_time, measurement.metric
                if self._trajectory and self._trajectory[-1][0] == t:
                    self._trajectory[-1] = (t, y, config.id)
                else:
                    self._trajectory.append((t, y, config.id))

    # ----------------------------------------------------------------- queries

    def levels(self) -> list[int]:
        return sorted(r for r, level in self._by_level.items() if level)

    def dataset_sizes(self) -> dict[int, int]:
        return {r: len(self._by_level[r]) for r in self.levels()}

    def metric_at(self, config_id: str, resource: int) -> float | None:
        return self._by_level.get(resource, {}).get(config_id)

    def config(self, config_id: str) -> Configuration:
        return self._configs[config_id]

    def paired_metrics(self, r_low: int, r_high: int) -> list[tuple[float, float]]:
        if r_low >= r_high:
            raise ValueError("r_low must be < r_high")
        low = self._by_level.get(r_low, {})
        high = self._by_level.get(r_high, {})
        return [(low[i], high[i]) for i in sorted(set(low) & set(high))]

    @property
    def incumbent(self) -> tuple[str, float] | None:
        return self._incumbent

    @property
    def trajectory(self) -> list[tuple[float, float, str]]:
        return list(self._trajectory)

    @property
    def measurements(self) -> list[Measurement]:
        return list(self._log)

    def fidelity_view(self) -> FidelityView:
        return FidelityView(self)

    # ------------------------------------------------------------- persistence

    def persist(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            header = {"max_resource": self.max_resource, "space_hash": self.space.space_hash()}
            header.update(self.metadata)
            fh.write(json.dumps(header) + "\n")
            for config in sorted(self._configs.values(), key=lambda c: c.id):
                fh.write(json.dumps({"config": config.id, "values": config.values,
                                     "origin": config.origin}) + "\n")
            for m in self._log:
                fh.write(json.dumps({"config_id": m.config_id, "resource": m.resource,
                                     "metric": m.metric, "vtime": m.virtual_time,
                                     "bracket": m.bracket_id, "checkpoint": m.is_checkpoint}) + "\n")
            for r, level in sorted(self.archive.as_dict().items()):
                fh.write(json.dumps({"archive_level": r, "entries": level}) + "\n")

    @classmethod
    def load(cls, path: str | Path, space: ConfigSpace) -> "RunStore":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise HistoryError(f"{path}: empty history file")
        records = list(_parse_lines(path, lines))
        header = records[0]
        if "max_resource" not in header:
            raise HistoryError(f"{path}: line 1: missing header record")
        metadata = {k: v for k, v in header.items() if k not in ("max_resource", "space_hash")}
        store = cls(space, header["max_resource"], metadata)
        for lineno, rec in enumerate(records[1:], start=2):
            if "config" in rec:
                config = Configuration(rec["config"], rec["values"], rec.get("origin", "random"))
                store._configs[config.id] = config
            elif "config_id" in rec:
                try:
                    m = Measurement(rec["config_id"], rec["resource"], rec["metric"],
                                    rec["vtime"], rec["bracket"], rec["checkpoint"])
                    store.record(store._configs[m.config_id], m)
                except (KeyError, ValueError) as exc:
                    raise HistoryError(f"{path}: line {lineno}: bad measurement ({exc})") from None
            elif "archive_level" in rec:
                store.archive.replace_level(rec["archive_level"], rec["entries"])
            else:
                raise HistoryError(f"{path}: line {lineno}: unrecognized record")
        return store


def _parse_lines(path: str | Path, lines: list[str]) -> Iterator[dict]:
    last_valid = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError:
            raise HistoryError(
                f"{path}: line {lineno}: invalid JSON (last valid line: {last_valid})") from None
        last_valid = lineno
