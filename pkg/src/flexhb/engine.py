"""Deterministic execution of bracket schedules against an evaluator.

The engine owns the run state: the measurement store, the elimination
archive, the virtual clock, the per-configuration trained-to ledger, and the
independent random streams. Streams are split by purpose (config sampling,
model decisions, revival rolls) so that disabling one component cannot shift
the draws of another; with the model fraction at zero, revival probabilities
at zero, fine-grained measurement off, and the canonical arrangement, a run
makes decisions identical to plain random-sampling HyperBand under the same
seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bench import TabularBenchmark
from .ensemble import MultiFidelityEnsemble
from .executor import EvaluationRequest, VirtualClock
from .records import Measurement, RunStore
from .sched import (MODE_FORMULA, BracketPlan, BracketSpec, LambdaSchedule,
                    flexband_adjust, fgf_schedule, glosh_select, hb_brackets,
                    uniform_plan)
from .space import ConfigSpace, Configuration, ORIGIN_REVIVED

logger = logging.getLogger(__name__)

ARRANGEMENT_HB = "hb"
ARRANGEMENT_FLEXBAND = "flexband"
ARRANGEMENT_ALL_EXPLORE = "all_explore"
ARRANGEMENT_ALL_EXPLOIT = "all_exploit"

SAMPLER_RANDOM = "random"
SAMPLER_MODEL = "model"
SAMPLER_MODEL_TOP = "model_top"

SELECT_SH = "sh"
SELECT_GLOSH = "glosh"


class EngineError(RuntimeError):
    pass


@dataclass
class EngineOptions:
    R: int
    eta: int = 3
    arrangement: str = ARRANGEMENT_HB
    bracket_mode: str = MODE_FORMULA
    selection: str = SELECT_SH
    lam: LambdaSchedule | None = None
    fgf: bool = False
    g: int | None = None
    fgf_levels: tuple[int, ...] | None = None
    sampler: str = SAMPLER_RANDOM
    p_r: float = 0.2
    gamma: float = 3.0
    combine_mode: str = "weighted_sum"
    n_cand: int = 5000
    min_points: int = 5
    n_trees: int = 24
    min_leaf: int = 3
    invert_top_ratio: bool = False
    K_thres: float = 0.55
    warmup: int = 25
    proposal_overhead: float = 0.05
    time_limit: float | None = None
    max_loops: int | None = None

    def __post_init__(self) -> None:
        if self.time_limit is None and self.max_loops is None:
            raise EngineError("need a time limit or a loop cap")
        if self.g is None:
            self.g = self.eta
        if self.lam is None:
            self.lam = LambdaSchedule.default(self.R, self.eta)


def seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    """Named, independent random streams for one run."""
    children = np.random.SeedSequence(seed).spawn(6)
    names = ("sample", "model", "revive", "surrogate", "cost", "noise")
    return dict(zip(names, children))


def seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


class Engine:
    """Runs one experiment: outer loops of brackets, or plain random search."""

    def __init__(self, space: ConfigSpace, evaluator, opts: EngineOptions, seed: int,
                 benchmark=None, clock: VirtualClock | None = None,
                 metadata: dict | None = None):
        self.space = space
        self.evaluator = evaluator
        self.opts = opts
        self.benchmark = benchmark
        self.clock = clock if clock is not None else getattr(evaluator, "clock", VirtualClock())
        self.store = RunStore(space, opts.R, metadata)
        streams = seed_streams(seed)
        self.sample_rng = np.random.default_rng(streams["sample"])
        self.model_rng = np.random.default_rng(streams["model"])
        self.revive_rng = np.random.default_rng(streams["revive"])
        self._surrogate_base = seed_int(streams["surrogate"])
        self.trained_to: dict[str, int] = {}
        self.failed: set[str] = set()
        self.training_units = 0
        self.n_proposals = 0
        self.loops_completed = 0
        self.weights_log: list[tuple[int, int, float]] = []
        self.bracket_log: list[dict] = []
        self._weights_iteration = 0
        self._logged_version: int | None = None
        self.ensemble: MultiFidelityEnsemble | None = None
        if opts.sampler in (SAMPLER_MODEL, SAMPLER_MODEL_TOP):
            self.ensemble = MultiFidelityEnsemble(
                space, gamma=opts.gamma, p_r=opts.p_r, combine_mode=opts.combine_mode,
                n_cand=opts.n_cand, min_points=opts.min_points, n_trees=opts.n_trees,
                min_leaf=opts.min_leaf, top_level_only=opts.sampler == SAMPLER_MODEL_TOP,
                invert_top_ratio=opts.invert_top_ratio)

    # ------------------------------------------------------------------- run

    def run(self) -> RunStore:
        loop = 0
        while not self._time_up() and not self._loops_done(loop):
            plan, audit = self._make_plan()
            self.bracket_log.append({
                "loop": loop,
                "provenance": plan.provenance,
                "brackets": [(b.n0, b.r0) for b in plan.brackets],
                "taus": audit,
            })
            for index, bracket in enumerate(plan.brackets):
                if self._time_up():
                    break
                self._run_bracket(bracket, f"{loop}.{index}")
            loop += 1
        self.loops_completed = loop
        return self.store

    def run_random_search(self, max_evals: int | None = None) -> RunStore:
        """Full-fidelity random evaluations until the clock or count runs out."""
        count = 0
        while not self._time_up() and (max_evals is None or count < max_evals):
            config = self._sample_cohort(1)[0]
            self._ensure_evaluated(config, self.opts.R, {self.opts.R}, f"rs.{count}",
                                   fgf_enabled=False)
            count += 1
        return self.store

    # ------------------------------------------------------------- internals

    def _time_up(self) -> bool:
        return self.opts.time_limit is not None and self.clock.now >= self.opts.time_limit

    def _loops_done(self, loop: int) -> bool:
        return self.opts.max_loops is not None and loop >= self.opts.max_loops

    def _make_plan(self) -> tuple[BracketPlan, list[dict]]:
        opts = self.opts
        if opts.arrangement == ARRANGEMENT_ALL_EXPLORE:
            return uniform_plan(opts.R, opts.eta, exploit=False, mode=opts.bracket_mode), []
        if opts.arrangement == ARRANGEMENT_ALL_EXPLOIT:
            return uniform_plan(opts.R, opts.eta, exploit=True, mode=opts.bracket_mode), []
        plan = hb_brackets(opts.R, opts.eta, opts.bracket_mode)
        if opts.arrangement == ARRANGEMENT_FLEXBAND:
            return flexband_adjust(plan, self.store, opts.K_thres, opts.warmup)
        if opts.arrangement == ARRANGEMENT_HB:
            return plan, []
        raise EngineError(f"unknown arrangement {opts.arrangement!r}")

    def _sample_cohort(self, k: int) -> list[Configuration]:
        self.clock.advance(k * self.opts.proposal_overhead)
        self.n_proposals += k
        tabular = self.benchmark if isinstance(self.benchmark, TabularBenchmark) else None
        if self.ensemble is None:
            if tabular is not None:
                return tabular.sample_rows(self.sample_rng, k)
            return [self.space.sample_random(self.sample_rng) for _ in range(k)]
        view = self.store.fidelity_view()
        surrogate_seed = self._surrogate_base ^ (view.version * 0x9E3779B9)
        proposals = self.ensemble.propose_batch(view, k, self.sample_rng,
                                                self.model_rng, surrogate_seed)
        self._log_weights(view.version)
        cohort: list[Configuration] = []
        seen: set[str] = set()
        for config in proposals:
            if tabular is not None:
                config = tabular.snap(config)
                tries = 0
                while config.id in seen and tries < len(tabular):
                    config = tabular.sample_random(self.sample_rng)
                    tries += 1
            if config.id in seen:
                continue
            seen.add(config.id)
            cohort.append(config)
        return cohort

    def _log_weights(self, version: int) -> None:
        if self.ensemble is None or not self.ensemble.ready:
            return
        if self.ensemble.fitted_version != version or version == self._logged_version:
            return
        self._weights_iteration += 1
        self._logged_version = version
        for r, w in zip(self.ensemble.levels, self.ensemble.weights):
            self.weights_log.append((self._weights_iteration, r, float(w)))

    def _ensure_evaluated(self, config: Configuration, r_target: int,
                          checkpoints: set[int], bracket_id: str,
                          fgf_enabled: bool | None = None) -> float:
        if config.id in self.failed:
            return math.inf
        if fgf_enabled is None:
            fgf_enabled = self.opts.fgf
        prev = self.trained_to.get(config.id, 0)
        if prev >= r_target:
            existing = self.store.metric_at(config.id, r_target)
            if existing is not None:
                return existing
            if not hasattr(self.evaluator, "measure_only"):
                raise EngineError("evaluator cannot re-measure an already-trained resource")
            metric = self.evaluator.measure_only(config, r_target)
            self.store.record(config, Measurement(config.id, r_target, metric,
                                                  self.clock.now, bracket_id,
                                                  r_target in checkpoints))
            return metric
        report_at = fgf_schedule(prev, r_target, self.opts.g, checkpoints,
                                 explicit_levels=self.opts.fgf_levels,
                                 enabled=fgf_enabled)
        outcome = self.evaluator.evaluate(
            EvaluationRequest(config, prev, r_target, tuple(report_at)))
        if outcome.failed:
            logger.warning("evaluation of %s failed: %s", config.id, outcome.error)
            self.failed.add(config.id)
            return math.inf
        self.trained_to[config.id] = r_target
        self.training_units += r_target - prev
        result = math.inf
        for r, y, t in outcome.reports:
            self.store.record(config, Measurement(config.id, r, y, t, bracket_id,
                                                  r in checkpoints))
            if r == r_target:
                result = y
        return result

    def run_bracket(self, bracket: BracketSpec, bracket_id: str = "solo") -> None:
        """Execute one bracket outside the outer loop (audits, tests)."""
        self._run_bracket(bracket, bracket_id)

    def _run_bracket(self, bracket: BracketSpec, bracket_id: str) -> None:
        checkpoints = set(bracket.checkpoint_levels)
        cohort = self._sample_cohort(bracket.n0)
        rounds = bracket.rounds
        for index, (n_i, r_i) in enumerate(rounds):
            metrics: dict[str, float] = {}
            for config in cohort:
                if self._time_up():
                    return
                metrics[config.id] = self._ensure_evaluated(config, r_i, checkpoints,
                                                            bracket_id)
            if index == len(rounds) - 1:
                return  # final round: survivors are done, nothing to eliminate
            by_config = {c.id: c for c in cohort}
            finite = [(cid, y) for cid, y in metrics.items() if math.isfinite(y)]
            n_keep = min(rounds[index + 1][0], len(finite))
            if n_keep == 0:
                return
            if self.opts.selection == SELECT_GLOSH:
                revivable = [e for e in self.store.archive.entries(r_i)
                             if e[0] not in self.failed]
                keep, new_archive = glosh_select(finite, revivable, n_keep,
                                                 self.opts.lam(r_i), self.revive_rng)
                self.store.archive.replace_level(r_i, new_archive)
                cohort = []
                for cid, _, revived in keep:
                    if revived:
                        cohort.append(self.store.config(cid).with_origin(ORIGIN_REVIVED))
                    else:
                        cohort.append(by_config[cid])
            else:
                finite.sort(key=lambda t: (t[1], t[0]))
                cohort = [by_config[cid] for cid, _ in finite[:n_keep]]
