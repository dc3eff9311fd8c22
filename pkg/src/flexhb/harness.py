"""Experiment orchestration: named methods, run directories, speed-up tables.

A method is a preset over the engine knobs (arrangement, selection rule,
fine-grained measurement, sampler); explicit overrides in the experiment
config can reshape any preset, which is how the degeneration chains used in
testing are expressed. Runs are fully deterministic per seed under the
virtual clock.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .bench import build_benchmark
from .engine import (ARRANGEMENT_ALL_EXPLOIT, ARRANGEMENT_ALL_EXPLORE,
                     ARRANGEMENT_FLEXBAND, ARRANGEMENT_HB, SAMPLER_MODEL,
                     SAMPLER_MODEL_TOP, SAMPLER_RANDOM, SELECT_GLOSH, SELECT_SH,
                     Engine, EngineOptions, seed_streams, seed_int)
from .executor import InprocEvaluator, SubprocessEvaluator, VirtualClock
from .records import RunStore
from .sched import MODE_FORMULA, LambdaSchedule
from .space import ConfigSpace

logger = logging.getLogger(__name__)

METHOD_PRESETS: dict[str, dict[str, Any]] = {
    "rs": {},
    "hb": dict(arrangement=ARRANGEMENT_HB, selection=SELECT_SH, fgf=False,
               sampler=SAMPLER_RANDOM),
    "bohb_lite": dict(arrangement=ARRANGEMENT_HB, selection=SELECT_SH, fgf=False,
                      sampler=SAMPLER_MODEL_TOP),
    "mfes_lite": dict(arrangement=ARRANGEMENT_HB, selection=SELECT_SH, fgf=False,
                      sampler=SAMPLER_MODEL),
    "flexhb": dict(arrangement=ARRANGEMENT_FLEXBAND, selection=SELECT_GLOSH, fgf=True,
                   sampler=SAMPLER_MODEL),
    "flexhb_no_fgf": dict(arrangement=ARRANGEMENT_FLEXBAND, selection=SELECT_GLOSH,
                          fgf=False, sampler=SAMPLER_MODEL),
    "flexhb_no_glosh": dict(arrangement=ARRANGEMENT_FLEXBAND, selection=SELECT_SH,
                            fgf=True, sampler=SAMPLER_MODEL),
    "flexhb_no_flexband": dict(arrangement=ARRANGEMENT_HB, selection=SELECT_GLOSH,
                               fgf=True, sampler=SAMPLER_MODEL),
    "all_explore": dict(arrangement=ARRANGEMENT_ALL_EXPLORE, selection=SELECT_SH,
                        fgf=False, sampler=SAMPLER_RANDOM),
    "all_exploit": dict(arrangement=ARRANGEMENT_ALL_EXPLOIT, selection=SELECT_SH,
                        fgf=False, sampler=SAMPLER_RANDOM),
}

_MODEL_KNOBS = {"p_r", "gamma", "combine_mode", "n_cand", "min_points", "n_trees",
                "min_leaf", "invert_top_ratio"}
_FLEXBAND_KNOBS = {"K_thres", "warmup"}
_GLOSH_KNOBS = {"lam"}
_FGF_KNOBS = {"g", "fgf_levels"}
_BRACKET_KNOBS = {"bracket_mode", "arrangement", "selection", "fgf"}


class HarnessError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str
    benchmark: dict[str, Any] | str
    seed: int = 0
    max_resource: int | None = None
    eta: int = 3
    time_limit: float | None = None
    max_loops: int | None = None
    bracket_mode: str = MODE_FORMULA
    arrangement: str | None = None
    selection: str | None = None
    fgf: bool | None = None
    lam: Mapping[int, float] | float | None = None
    K_thres: float = 0.55
    warmup: int = 25
    g: int | None = None
    fgf_levels: Sequence[int] | None = None
    p_r: float = 0.2
    gamma: float = 3.0
    combine_mode: str = "weighted_sum"
    n_cand: int = 5000
    min_points: int = 5
    n_trees: int = 24
    min_leaf: int = 3
    invert_top_ratio: bool = False
    proposal_overhead: float = 0.05
    provided: frozenset[str] = field(default_factory=frozenset, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.method not in METHOD_PRESETS:
            raise HarnessError(f"unknown method {self.method!r}; "
                               f"choose from {sorted(METHOD_PRESETS)}")
        if self.time_limit is None and self.max_loops is None:
            raise HarnessError("config needs a time_limit or max_loops")
        self._warn_inapplicable()

    def effective(self) -> dict[str, Any]:
        """Method preset merged with explicit overrides."""
        preset = dict(METHOD_PRESETS[self.method])
        for knob in ("arrangement", "selection", "fgf"):
            value = getattr(self, knob)
            if value is not None:
                preset[knob] = value
        return preset

    def _warn_inapplicable(self) -> None:
        eff = self.effective()
        irrelevant: set[str] = set()
        if self.method == "rs":
            irrelevant |= _BRACKET_KNOBS | _FLEXBAND_KNOBS | _GLOSH_KNOBS | _FGF_KNOBS
        else:
            if eff.get("arrangement") != ARRANGEMENT_FLEXBAND:
                irrelevant |= _FLEXBAND_KNOBS
            if eff.get("selection") != SELECT_GLOSH:
                irrelevant |= _GLOSH_KNOBS
            if not eff.get("fgf"):
                irrelevant |= _FGF_KNOBS
        if eff.get("sampler", SAMPLER_RANDOM) == SAMPLER_RANDOM or self.method == "rs":
            irrelevant |= _MODEL_KNOBS
        for knob in sorted(irrelevant & self.provided):
            logger.warning("method %s ignores knob %r", self.method, knob)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"provided"}
        unknown = set(data) - known
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data, provided=frozenset(data) - {"method", "benchmark", "seed"})

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out.pop("provided")
        if isinstance(out.get("lam"), Mapping):
            out["lam"] = {str(k): v for k, v in out["lam"].items()}
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


@dataclass
class RunResult:
    method: str
    seed: int
    config_hash: str
    trajectory: list[tuple[float, float, str]]
    final_metric: float
    level_counts: dict[int, int]
    bracket_log: list[dict]
    weights_log: list[tuple[int, int, float]]
    elapsed_vtime: float
    training_units: int
    n_measurements: int
    store: RunStore | None = field(default=None, repr=False, compare=False)

    def summary(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            # null rather than NaN so the file stays strict JSON
            "final_metric": self.final_metric if math.isfinite(self.final_metric) else None,
            "elapsed_vtime": self.elapsed_vtime,
            "level_counts": {str(k): v for k, v in sorted(self.level_counts.items())},
            "training_units": self.training_units,
            "n_measurements": self.n_measurements,
        }


def _resolve_lambda(config: ExperimentConfig, R: int, eta: int) -> LambdaSchedule:
    if config.lam is None:
        return LambdaSchedule.default(R, eta)
    if isinstance(config.lam, Mapping):
        return LambdaSchedule.from_mapping({int(k): float(v) for k, v in config.lam.items()})
    return LambdaSchedule.constant(R, eta, float(config.lam))


def _load_benchmark_spec(benchmark: dict[str, Any] | str) -> dict[str, Any]:
    if isinstance(benchmark, str):
        return json.loads(Path(benchmark).read_text())
    return dict(benchmark)


def run(config: ExperimentConfig) -> RunResult:
    """Execute one seeded experiment and collect its result artifacts."""
    streams = seed_streams(config.seed)
    spec = _load_benchmark_spec(config.benchmark)
    clock = VirtualClock()
    subprocess_mode = spec.get("kind") == "subprocess"
    if subprocess_mode:
        if config.max_resource is None:
            raise HarnessError("subprocess benchmarks need max_resource in the config")
        space = ConfigSpace.from_dict(spec["space"])
        R = config.max_resource
        benchmark = None
        evaluator = SubprocessEvaluator(spec["command"], clock,
                                        spec.get("checkpoint_dir", "."))
    else:
        if spec.get("kind") == "toy" and config.max_resource is not None:
            spec["max_epoch"] = config.max_resource
        benchmark = build_benchmark(spec, noise_seed=seed_int(streams["noise"]),
                                    cost_rng=np.random.default_rng(streams["cost"]))
        space = benchmark.space
        R = config.max_resource or benchmark.max_resource
        if R > benchmark.max_resource:
            raise HarnessError(f"max_resource {R} exceeds benchmark's "
                               f"{benchmark.max_resource}")
        evaluator = InprocEvaluator(benchmark, clock)

    eff = config.effective()
    opts = EngineOptions(
        R=R, eta=config.eta,
        arrangement=eff.get("arrangement", ARRANGEMENT_HB),
        bracket_mode=config.bracket_mode,
        selection=eff.get("selection", SELECT_SH),
        lam=_resolve_lambda(config, R, config.eta),
        fgf=bool(eff.get("fgf", False)),
        g=config.g,
        fgf_levels=tuple(config.fgf_levels) if config.fgf_levels else None,
        sampler=eff.get("sampler", SAMPLER_RANDOM),
        p_r=config.p_r, gamma=config.gamma, combine_mode=config.combine_mode,
        n_cand=config.n_cand, min_points=config.min_points,
        n_trees=config.n_trees, min_leaf=config.min_leaf,
        invert_top_ratio=config.invert_top_ratio,
        K_thres=config.K_thres, warmup=config.warmup,
        proposal_overhead=config.proposal_overhead,
        time_limit=config.time_limit, max_loops=config.max_loops)
    metadata = {"seed": config.seed, "method": config.method}
    engine = Engine(space, evaluator, opts, config.seed, benchmark=benchmark,
                    clock=clock, metadata=metadata)
    if config.method == "rs":
        store = engine.run_random_search(max_evals=config.max_loops)
    else:
        store = engine.run()
    trajectory = store.trajectory
    final = trajectory[-1][1] if trajectory else math.nan
    return RunResult(
        method=config.method, seed=config.seed, config_hash=config.config_hash(),
        trajectory=trajectory, final_metric=final, level_counts=store.dataset_sizes(),
        bracket_log=engine.bracket_log, weights_log=engine.weights_log,
        elapsed_vtime=clock.now, training_units=engine.training_units,
        n_measurements=len(store.measurements), store=store)


# ------------------------------------------------------------------ analysis

def time_to_target(trajectory: Sequence[tuple[float, float, str]], target: float) -> float:
    """Virtual time of the first incumbent at or below the target; inf if never."""
    for t, y, _ in trajectory:
        if y <= target:
            return t
    return math.inf


def compare(groups: Mapping[str, Sequence[RunResult]], reference: str) -> list[dict[str, Any]]:
    """Speed-up table: time to reach the reference's mean converged metric.

    Per method the median time-to-target across runs is compared against the
    reference's median; methods that never reach the target get "F".
    """
    if reference not in groups or not groups[reference]:
        raise HarnessError(f"no runs for reference method {reference!r}")
    finals = [r.final_metric for r in groups[reference]]
    if not all(math.isfinite(f) for f in finals):
        raise HarnessError(f"reference {reference!r} has runs without a "
                           "full-fidelity result; cannot derive a target")
    target = float(np.mean(finals))
    ref_ttt = float(np.median([time_to_target(r.trajectory, target)
                               for r in groups[reference]]))
    rows = []
    for method in sorted(groups):
        runs = groups[method]
        method_finals = [r.final_metric for r in runs]
        ttts = [time_to_target(r.trajectory, target) for r in runs]
        med = float(np.median(ttts))
        if method == reference:
            speedup: float | str = 1.0
        elif not math.isfinite(med):
            speedup = "F"
        else:
            speedup = round(ref_ttt / med, 4)
        rows.append({
            "method": method,
            "runs": len(runs),
            "mean_final": float(np.mean(method_finals)),
            "sem_final": float(np.std(method_finals, ddof=1) / math.sqrt(len(runs)))
            if len(runs) > 1 else 0.0,
            "median_time_to_target": med,
            "target": target,
            "speedup": speedup,
        })
    return rows


def write_compare_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def export_trajectory(result: RunResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vtime", "best_metric", "config_id"])
        for t, y, cid in result.trajectory:
            writer.writerow([t, y, cid])


def export_trajectories(results: Sequence[RunResult], path: str | Path) -> None:
    """Merged multi-seed export; adds a seed column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "vtime", "best_metric", "config_id"])
        for result in results:
            for t, y, cid in result.trajectory:
                writer.writerow([result.seed, t, y, cid])


def report_weights(result: RunResult) -> list[tuple[int, int, float]]:
    return list(result.weights_log)


def write_weights_csv(result: RunResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "resource", "weight"])
        writer.writerows(result.weights_log)


# ------------------------------------------------------------ run directories

def write_run_dir(result: RunResult, config: ExperimentConfig, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    if result.store is not None:
        result.store.persist(out / "history.jsonl")
    export_trajectory(result, out / "trajectory.csv")
    write_weights_csv(result, out / "weights.csv")
    with open(out / "brackets.log", "w") as fh:
        for entry in result.bracket_log:
            fh.write(json.dumps(entry) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    return out


def load_run_dir(path: str | Path) -> RunResult:
    """Rehydrate the analysis-facing parts of a run directory."""
    path = Path(path)
    summary = json.loads((path / "summary.json").read_text())
    trajectory = []
    with open(path / "trajectory.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            trajectory.append((float(row["vtime"]), float(row["best_metric"]),
                               row["config_id"]))
    weights = []
    weights_path = path / "weights.csv"
    if weights_path.exists():
        with open(weights_path, newline="") as fh:
            for row in csv.DictReader(fh):
                weights.append((int(row["iteration"]), int(row["resource"]),
                                float(row["weight"])))
    brackets = []
    brackets_path = path / "brackets.log"
    if brackets_path.exists():
        brackets = [json.loads(line) for line in brackets_path.read_text().splitlines()
                    if line.strip()]
    final = summary["final_metric"]
    return RunResult(
        method=summary["method"], seed=summary["seed"],
        config_hash=summary["config_hash"], trajectory=trajectory,
        final_metric=math.nan if final is None else final,
        level_counts={int(k): v for k, v in summary["level_counts"].items()},
        bracket_log=brackets, weights_log=weights,
        elapsed_vtime=summary["elapsed_vtime"],
        training_units=summary["training_units"],
        n_measurements=summary["n_measurements"])
