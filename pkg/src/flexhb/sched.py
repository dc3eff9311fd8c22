"""Resource-allocation primitives for successive-halving schedules.

Pure functions and small value types only: bracket geometry, the per-round
elimination walk with a global archive, rank correlation between fidelity
levels, the adaptive bracket substitution that rank correlation drives, and
the fine-grained measurement schedule. Execution lives in ``engine``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

PLAN_HYPERBAND = "hyperband"
PLAN_TABLE = "table-preset"
PLAN_FLEX = "flexband-adjusted"
PLAN_ALL_EXPLORE = "all-explore"
PLAN_ALL_EXPLOIT = "all-exploit"

MODE_FORMULA = "formula"
MODE_TABLE = "table-preset"


class ScheduleError(ValueError):
    """Invalid bracket geometry or selection arguments."""


def sh_rounds(n0: int, r0: int, R: int, eta: int) -> list[tuple[int, int]]:
    """Successive-halving rounds (n_i, r_i) from (n0, r0) up to budget R."""
    if n0 < 1:
        raise ScheduleError("n0 must be >= 1")
    if r0 < 1 or r0 > R:
        raise ScheduleError(f"initial resource {r0} outside [1, {R}]")
    rounds = []
    n, b = n0, r0
    while b <= R:
        rounds.append((n, b))
        n = max(1, n // eta)
        b = b * eta
    return rounds


@dataclass(frozen=True)
class BracketSpec:
    """One SH bracket: initial cohort size, entry resource, derived rounds."""

    n0: int
    r0: int
    rounds: tuple[tuple[int, int], ...]

    @classmethod
    def create(cls, n0: int, r0: int, R: int, eta: int) -> "BracketSpec":
        return cls(n0, r0, tuple(sh_rounds(n0, r0, R, eta)))

    @property
    def checkpoint_levels(self) -> tuple[int, ...]:
        return tuple(r for _, r in self.rounds)


@dataclass(frozen=True)
class BracketPlan:
    """Ordered brackets of one outer loop plus how the arrangement was made."""

    brackets: tuple[BracketSpec, ...]
    provenance: str

    @property
    def entry_levels(self) -> tuple[int, ...]:
        return tuple(b.r0 for b in self.brackets)


def s_max_for(R: int, eta: int) -> int:
    return int(math.floor(round(math.log(R) / math.log(eta), 10)))


def hb_brackets(R: int, eta: int, mode: str = MODE_FORMULA) -> BracketPlan:
    """Canonical bracket arrangement for one outer loop.

    ``formula`` evaluates n = ceil((s_max+1) * eta^s / (s+1)) per bracket,
    i.e. the budget-balanced rule with B = (s_max+1)*R. ``table-preset``
    reproduces the widely-quoted arrangement instead (n = eta^s for s >= 2,
    then 2*eta and s_max+1 for the two most exploiting brackets), which for
    R=81, eta=3 gives n = 81, 27, 9, 6, 5.
    """
    if eta < 2:
        raise ScheduleError("eta must be >= 2")
    if R < eta:
        raise ScheduleError("R must be >= eta")
    if mode not in (MODE_FORMULA, MODE_TABLE):
        raise ScheduleError(f"unknown bracket mode {mode!r}")
    s_max = s_max_for(R, eta)
    brackets = []
    for s in range(s_max, -1, -1):
        r = max(1, round(R * eta ** (-s)))
        if mode == MODE_FORMULA:
            n = math.ceil((s_max + 1) * eta**s / (s + 1))
        else:
            n = eta**s if s >= 2 else (2 * eta if s == 1 else s_max + 1)
        brackets.append(BracketSpec.create(n, r, R, eta))
    provenance = PLAN_HYPERBAND if mode == MODE_FORMULA else PLAN_TABLE
    return BracketPlan(tuple(brackets), provenance)


def uniform_plan(R: int, eta: int, exploit: bool, mode: str = MODE_FORMULA) -> BracketPlan:
    """All brackets copies of the most exploring (or most exploiting) one."""
    base = hb_brackets(R, eta, mode)
    pick = base.brackets[-1] if exploit else base.brackets[0]
    provenance = PLAN_ALL_EXPLOIT if exploit else PLAN_ALL_EXPLORE
    return BracketPlan((pick,) * len(base.brackets), provenance)


def kendall_tau(pairs: Sequence[tuple[float, float]]) -> float:
    """Rank correlation with the full C(n,2) denominator; ties count neither."""
    n = len(pairs)
    if n < 2:
        raise ScheduleError("kendall tau needs at least 2 pairs")
    arr = np.asarray(pairs, dtype=float)
    dx = np.sign(arr[:, 0][:, None] - arr[:, 0][None, :])
    dy = np.sign(arr[:, 1][:, None] - arr[:, 1][None, :])
    prod = np.triu(dx * dy, k=1)
    concordant = int((prod > 0).sum())
    discordant = int((prod < 0).sum())
    return (concordant - discordant) / (n * (n - 1) / 2)


def flexband_adjust(plan: BracketPlan, store, K_thres: float = 0.55,
                    h: int = 25) -> tuple[BracketPlan, list[dict]]:
    """Substitute exploiting brackets with exploring ones where adjacent
    fidelity levels rank configurations consistently.

    Substitution only starts once every bracket-entry fidelity has collected
    at least ``h`` measurements. Each substituted bracket copies the (n, r) of
    the next more exploring bracket, always reading from the unmodified input
    plan, so a chain of high correlations yields the right-shifted arrangement.
    Returns the (possibly new) plan plus one audit entry per adjacent pair.
    """
    levels = sorted(set(plan.entry_levels))
    sizes = store.dataset_sizes()
    if min((sizes.get(r, 0) for r in levels), default=0) < h:
        return plan, []
    taus: dict[tuple[int, int], float | None] = {}
    audit = []
    for lo, hi in zip(levels, levels[1:]):
        pairs = store.paired_metrics(lo, hi)
        tau = kendall_tau(pairs) if len(pairs) >= 2 else None
        taus[(lo, hi)] = tau
        audit.append({"low": lo, "high": hi, "tau": tau, "n_pairs": len(pairs)})
    original = plan.brackets
    adjusted = list(original)
    changed = False
    for j in range(len(original) - 1, 0, -1):
        r_low, r_high = original[j - 1].r0, original[j].r0
        tau = taus.get((r_low, r_high))
        if tau is not None and tau > K_thres:
            adjusted[j] = original[j - 1]
            changed = True
    if not changed:
        return plan, audit
    return BracketPlan(tuple(adjusted), PLAN_FLEX), audit


def fgf_schedule(r_from: int, r_to: int, g: int, checkpoints: Iterable[int],
                 explicit_levels: Iterable[int] | None = None,
                 enabled: bool = True) -> list[int]:
    """Resources at which to measure while training from r_from to r_to.

    With fine-grained measurement enabled this is every multiple of ``g`` in
    (r_from, r_to] plus any early-stopping checkpoint in that range; an
    explicit level set replaces the multiples-of-g rule (reduced mode for
    benchmarks where intermediate evaluation is expensive). The training
    target itself is always reported.
    """
    if r_from < 0 or r_to <= r_from:
        raise ScheduleError("need 0 <= r_from < r_to")
    points = {r_to}
    points.update(c for c in checkpoints if r_from < c <= r_to)
    if enabled:
        if explicit_levels is not None:
            points.update(l for l in explicit_levels if r_from < l <= r_to)
        else:
            points.update(m for m in range(g, r_to + 1, g) if m > r_from)
    return sorted(points)


@dataclass(frozen=True)
class LambdaSchedule:
    """Revival probability per early-stopping level; higher fidelity, higher odds."""

    values: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.values))
        object.__setattr__(self, "values", ordered)
        lams = [lam for _, lam in ordered]
        if any(not 0.0 <= lam <= 1.0 for lam in lams):
            raise ScheduleError("lambda values must lie in [0, 1]")
        if any(b < a for a, b in zip(lams, lams[1:])):
            raise ScheduleError("lambda must be non-decreasing in fidelity")

    def __call__(self, resource: int) -> float:
        return dict(self.values).get(resource, 0.0)

    @classmethod
    def default(cls, R: int, eta: int) -> "LambdaSchedule":
        """1/m, ..., 1/2, 1 over the m elimination levels below R."""
        m = s_max_for(R, eta)
        levels = [eta**i for i in range(m)]
        return cls(tuple((r, 1.0 / (m - i)) for i, r in enumerate(levels)))

    @classmethod
    def constant(cls, R: int, eta: int, lam: float) -> "LambdaSchedule":
        m = s_max_for(R, eta)
        return cls(tuple((eta**i, lam) for i in range(m)))

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float]) -> "LambdaSchedule":
        return cls(tuple((int(r), float(lam)) for r, lam in mapping.items()))


def glosh_select(local: Sequence[tuple[str, float]], archive: Sequence[tuple[str, float]],
                 n_keep: int, lam: float, rng: np.random.Generator,
                 ) -> tuple[list[tuple[str, float, bool]], dict[str, float]]:
    """Rank current and previously-stopped configurations together and walk
    from the best: local entries are always kept, archived ones pass a
    probability gate, until ``n_keep`` are kept.

    An archived entry whose id is also local is dropped from the merge (the
    fresh copy supersedes it). Returns the kept entries, flagged with whether
    they were revived from the archive, and the new archive content for this
    level: everything merged but not kept.
    """
    local_ids = {cid for cid, _ in local}
    if n_keep > len(local):
        raise ScheduleError("n_keep cannot exceed the local cohort size")
    merged = [(y, cid, False) for cid, y in local]
    merged += [(y, cid, True) for cid, y in archive if cid not in local_ids]
    if not merged and n_keep > 0:
        raise ScheduleError("nothing to select from")
    merged.sort(key=lambda t: (t[0], t[1]))
    keep: list[tuple[str, float, bool]] = []
    kept_ids: set[str] = set()
    for y, cid, from_archive in merged:
        if len(keep) >= n_keep:
            break
        if from_archive:
            if rng.random() < lam:
                keep.append((cid, y, True))
                kept_ids.add(cid)
        else:
            keep.append((cid, y, False))
            kept_ids.add(cid)
    new_archive = {cid: y for y, cid, _ in merged if cid not in kept_ids}
    return keep, new_archive
