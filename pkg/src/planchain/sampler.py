"""Annealed Metropolis sampling of contiguous districting plans.

The chain state is a valid plan.  A proposal picks one (ward, neighboring
district) pair uniformly from the conflicted-pair set and moves the ward,
provided the donor district stays nonempty and contiguous.  Acceptance uses
the Metropolis rule for the target exp(-beta * total_score) with a proposal
correction c_old / c_new, the sizes of the conflicted-pair sets before and
after the move.  The inverse temperature advances with accepted steps only:
a hot phase at beta 0, a linear ramp, then a cold phase at beta 1.

Component scores are maintained incrementally; tests check the running
values against full recomputation.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import os
import random
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from planchain.geography import (
    Geography,
    Plan,
    ValidationError,
    canonical_assignment,
    check_plan,
    conflicted_wards,
    district_aggregates,
    is_contiguous,
)
from planchain.scores import (
    ScoreBreakdown,
    ScoreWeights,
    compactness_score_from_aggregates,
    total_score,
    vra_shortfall,
)


class ChainStallError(Exception):
    """The chain cannot make progress (no conflicted pairs, or too many rejects)."""


class EnsembleBudgetError(Exception):
    """The attempt budget ran out before enough plans passed the filters."""

    def __init__(self, requested: int, produced: int, attempts: int, failures: dict[str, int]):
        self.requested = requested
        self.produced = produced
        self.attempts = attempts
        self.failures = dict(failures)
        super().__init__(
            f"produced {produced} of {requested} plans in {attempts} attempts; "
            f"filter failures: {self.failures}"
        )


@dataclass(frozen=True)
class AnnealingSchedule:
    """Accepted-step counts for the three temperature phases."""

    steps_beta0: int = 20000
    steps_ramp: int = 80000
    steps_beta1: int = 20000

    def __post_init__(self) -> None:
        for name in ("steps_beta0", "steps_ramp", "steps_beta1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.total_steps == 0:
            raise ValueError("schedule must contain at least one accepted step")

    @property
    def total_steps(self) -> int:
        return self.steps_beta0 + self.steps_ramp + self.steps_beta1

    def beta_at(self, accepted: int) -> float:
        """Inverse temperature in force for the step after ``accepted`` acceptances."""
        if accepted < self.steps_beta0:
            return 0.0
        ramped = accepted - self.steps_beta0
        if ramped < self.steps_ramp:
            return (ramped + 1) / self.steps_ramp
        return 1.0


@dataclass(frozen=True)
class FilterCriteria:
    """Hard constraints an ensemble plan must satisfy."""

    max_pop_deviation: float = 0.05
    vra_black_districts: int = 6
    vra_black_threshold: float = 0.40
    vra_hispanic_districts: int = 1
    vra_hispanic_threshold: float = 0.40
    max_compactness: float | None = None


class FilterResult(NamedTuple):
    passed: bool
    reasons: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.passed


@dataclass(frozen=True)
class PlanRecord:
    plan_id: int
    seed: int
    scores: ScoreBreakdown
    plan: Plan


@dataclass(frozen=True)
class EnsembleMeta:
    master_seed: int
    requested: int
    attempts: int
    proposals: int
    accepted_steps: int
    filter_failures: dict[str, int]
    schedule: AnnealingSchedule
    weights: ScoreWeights
    criteria: FilterCriteria
    num_wards: int
    num_districts: int
    source_ids: tuple[str, ...]


@dataclass(frozen=True)
class Ensemble:
    records: tuple[PlanRecord, ...]
    meta: EnsembleMeta

    @property
    def plans(self) -> tuple[Plan, ...]:
        return tuple(r.plan for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class ChainResult:
    plan: Plan
    scores: ScoreBreakdown
    accepted_steps: int
    proposals: int
    seed: int


def derive_chain_seed(master_seed: int, index: int) -> int:
    """Stable per-run seed stream: hash of the master seed and run index."""
    digest = hashlib.sha256(f"{master_seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def random_initial_plan(g: Geography, seed: int | random.Random) -> Plan:
    """Grow a valid plan from k random seed wards, one uniform attachment at a time."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    n, k = g.num_wards, g.num_districts
    labels = [-1] * n
    frontier: set[int] = set()
    for d, w in enumerate(rng.sample(range(n), k)):
        labels[w] = d
    for w in range(n):
        if labels[w] >= 0:
            for nbr, _ in g.neighbors[w]:
                if labels[nbr] < 0:
                    frontier.add(nbr)
    assigned = k
    while frontier:
        w = rng.choice(sorted(frontier))
        districts = sorted({labels[nbr] for nbr, _ in g.neighbors[w] if labels[nbr] >= 0})
        labels[w] = districts[0] if len(districts) == 1 else rng.choice(districts)
        assigned += 1
        frontier.discard(w)
        for nbr, _ in g.neighbors[w]:
            if labels[nbr] < 0:
                frontier.add(nbr)
    if assigned != n:
        raise ValidationError("initial plan growth stalled; ward graph is not connected")
    return Plan.from_labels(labels)


def _donor_contiguous(g: Geography, labels: Sequence[int], ward: int) -> bool:
    """True when the ward's district stays nonempty and connected without it."""
    d = labels[ward]
    members = [i for i in range(g.num_wards) if labels[i] == d and i != ward]
    if not members:
        return False
    seen = {members[0]}
    stack = [members[0]]
    while stack:
        x = stack.pop()
        for nbr, _ in g.neighbors[x]:
            if labels[nbr] == d and nbr != ward and nbr not in seen:
                seen.add(nbr)
                stack.append(nbr)
    return len(seen) == len(members)


def propose_move(g: Geography, plan: Plan, rng: random.Random) -> tuple[int, int] | None:
    """Draw one candidate move; ``None`` signals a rejected proposal."""
    moves = conflicted_wards(g, plan)
    if not moves:
        return None
    ward, district = moves[rng.randrange(len(moves))]
    if not _donor_contiguous(g, plan.assignment, ward):
        return None
    return ward, district


def accept_move(
    j_old: float,
    j_new: float,
    beta: float,
    c_old: int,
    c_new: int,
    rng: random.Random,
) -> bool:
    """Metropolis test with the proposal correction c_old / c_new."""
    if c_old <= 0 or c_new <= 0:
        raise ValueError("conflicted-pair counts must be positive")
    log_ratio = math.log(c_old / c_new) - beta * (j_new - j_old)
    if log_ratio >= 0.0:
        return True
    return rng.random() < math.exp(log_ratio)


class _Move(NamedTuple):
    ward: int
    d_old: int
    d_new: int
    pop_old: int
    pop_new: int
    black_old: int
    black_new: int
    hisp_old: int
    hisp_new: int
    area_old: float
    area_new: float
    perim_old: float
    perim_new: float
    pop_term_old: float
    pop_term_new: float
    comp_term_old: float
    comp_term_new: float
    pop_sumsq: float
    comp_sum: float
    county_extra: int
    town_extra: int
    vra: float
    total: float


class _ScoreTracker:
    """Incremental component scores for a mutable label vector."""

    def __init__(
        self,
        g: Geography,
        labels: Sequence[int],
        weights: ScoreWeights,
        vra_black_districts: int,
        vra_hispanic_districts: int,
        vra_threshold: float,
    ):
        k = g.num_districts
        self.k = k
        self.weights = weights
        self.vra_black_districts = vra_black_districts
        self.vra_hispanic_districts = vra_hispanic_districts
        self.vra_threshold = vra_threshold
        self.ideal = g.ideal_population
        self.ward_pop = g.populations
        self.ward_black = g.black_populations
        self.ward_hisp = g.hispanic_populations
        self.ward_area = g.areas
        self.ward_outer = g.outer_boundaries
        self.neighbors = g.neighbors
        self.county_codes = g.county_codes
        self.town_codes = g.town_codes
        n_counties = len(g.county_names)
        n_towns = len(g.town_names)

        self.pop = [0] * k
        self.black = [0] * k
        self.hisp = [0] * k
        self.area = [0.0] * k
        self.perim = [0.0] * k
        self.ward_count = [0] * k
        self.county_counts = [0] * (n_counties * k)
        self.town_counts = [0] * (n_towns * k)
        for i, d in enumerate(labels):
            self.pop[d] += self.ward_pop[i]
            self.black[d] += self.ward_black[i]
            self.hisp[d] += self.ward_hisp[i]
            self.area[d] += self.ward_area[i]
            self.perim[d] += self.ward_outer[i]
            self.ward_count[d] += 1
            self.county_counts[self.county_codes[i] * k + d] += 1
            self.town_counts[self.town_codes[i] * k + d] += 1
        for a, b, length in g.edges:
            la, lb = labels[a], labels[b]
            if la != lb:
                self.perim[la] += length
                self.perim[lb] += length
        self.county_extra = sum(1 for c in self.county_counts if c > 0) - n_counties
        self.town_extra = sum(1 for c in self.town_counts if c > 0) - n_towns
        self.pop_terms = [((p - self.ideal) / self.ideal) ** 2 for p in self.pop]
        self.pop_sumsq = sum(self.pop_terms)
        self.comp_terms = [p * p / a for p, a in zip(self.perim, self.area)]
        self.comp_sum = sum(self.comp_terms)
        self.vra = self._vra_current()
        self.total = self._weighted_total(
            self.pop_sumsq, self.comp_sum, self.county_extra, self.town_extra, self.vra
        )

    def _weighted_total(
        self, pop_sumsq: float, comp_sum: float, county_extra: int, town_extra: int, vra: float
    ) -> float:
        w = self.weights
        return (
            w.population * math.sqrt(max(0.0, pop_sumsq))
            + w.compactness * comp_sum
            + w.county * county_extra
            + w.vra * vra
            + w.town * town_extra
        )

    def _vra_current(self) -> float:
        black = [b / p if p > 0 else 0.0 for b, p in zip(self.black, self.pop)]
        hisp = [h / p if p > 0 else 0.0 for h, p in zip(self.hisp, self.pop)]
        return vra_shortfall(
            black,
            hisp,
            self.vra_black_districts,
            self.vra_hispanic_districts,
            self.vra_threshold,
        )

    def preview(self, ward: int, d_old: int, d_new: int, labels: Sequence[int]) -> _Move:
        """Component scores after moving ``ward``, without committing."""
        pw = self.ward_pop[ward]
        bw = self.ward_black[ward]
        hw = self.ward_hisp[ward]
        aw = self.ward_area[ward]
        pop_old = self.pop[d_old] - pw
        pop_new = self.pop[d_new] + pw
        black_old = self.black[d_old] - bw
        black_new = self.black[d_new] + bw
        hisp_old = self.hisp[d_old] - hw
        hisp_new = self.hisp[d_new] + hw
        area_old = self.area[d_old] - aw
        area_new = self.area[d_new] + aw

        outer = self.ward_outer[ward]
        perim_old = self.perim[d_old] - outer
        perim_new = self.perim[d_new] + outer
        for nbr, length in self.neighbors[ward]:
            lab = labels[nbr]
            if lab == d_old:
                perim_old += length
            else:
                perim_old -= length
            if lab == d_new:
                perim_new -= length
            else:
                perim_new += length

        ideal = self.ideal
        pop_term_old = ((pop_old - ideal) / ideal) ** 2
        pop_term_new = ((pop_new - ideal) / ideal) ** 2
        pop_sumsq = (
            self.pop_sumsq
            - self.pop_terms[d_old]
            - self.pop_terms[d_new]
            + pop_term_old
            + pop_term_new
        )
        comp_term_old = perim_old * perim_old / area_old
        comp_term_new = perim_new * perim_new / area_new
        comp_sum = (
            self.comp_sum
            - self.comp_terms[d_old]
            - self.comp_terms[d_new]
            + comp_term_old
            + comp_term_new
        )

        k = self.k
        county_extra = self.county_extra
        idx = self.county_codes[ward] * k
        if self.county_counts[idx + d_old] == 1:
            county_extra -= 1
        if self.county_counts[idx + d_new] == 0:
            county_extra += 1
        town_extra = self.town_extra
        idx = self.town_codes[ward] * k
        if self.town_counts[idx + d_old] == 1:
            town_extra -= 1
        if self.town_counts[idx + d_new] == 0:
            town_extra += 1

        black_fracs = []
        hisp_fracs = []
        for d in range(k):
            if d == d_old:
                p, b, h = pop_old, black_old, hisp_old
            elif d == d_new:
                p, b, h = pop_new, black_new, hisp_new
            else:
                p, b, h = self.pop[d], self.black[d], self.hisp[d]
            black_fracs.append(b / p if p > 0 else 0.0)
            hisp_fracs.append(h / p if p > 0 else 0.0)
        vra = vra_shortfall(
            black_fracs,
            hisp_fracs,
            self.vra_black_districts,
            self.vra_hispanic_districts,
            self.vra_threshold,
        )

        total = self._weighted_total(pop_sumsq, comp_sum, county_extra, town_extra, vra)
        return _Move(
            ward,
            d_old,
            d_new,
            pop_old,
            pop_new,
            black_old,
            black_new,
            hisp_old,
            hisp_new,
            area_old,
            area_new,
            perim_old,
            perim_new,
            pop_term_old,
            pop_term_new,
            comp_term_old,
            comp_term_new,
            pop_sumsq,
            comp_sum,
            county_extra,
            town_extra,
            vra,
            total,
        )

    def commit(self, m: _Move) -> None:
        d_old, d_new = m.d_old, m.d_new
        self.pop[d_old] = m.pop_old
        self.pop[d_new] = m.pop_new
        self.black[d_old] = m.black_old
        self.black[d_new] = m.black_new
        self.hisp[d_old] = m.hisp_old
        self.hisp[d_new] = m.hisp_new
        self.area[d_old] = m.area_old
        self.area[d_new] = m.area_new
        self.perim[d_old] = m.perim_old
        self.perim[d_new] = m.perim_new
        self.pop_terms[d_old] = m.pop_term_old
        self.pop_terms[d_new] = m.pop_term_new
        self.comp_terms[d_old] = m.comp_term_old
        self.comp_terms[d_new] = m.comp_term_new
        self.pop_sumsq = m.pop_sumsq
        self.comp_sum = m.comp_sum
        self.county_extra = m.county_extra
        self.town_extra = m.town_extra
        self.vra = m.vra
        self.total = m.total
        self.ward_count[d_old] -= 1
        self.ward_count[d_new] += 1
        k = self.k
        self.county_counts[self.county_codes[m.ward] * k + d_old] -= 1
        self.county_counts[self.county_codes[m.ward] * k + d_new] += 1
        self.town_counts[self.town_codes[m.ward] * k + d_old] -= 1
        self.town_counts[self.town_codes[m.ward] * k + d_new] += 1

    def breakdown(self) -> ScoreBreakdown:
        return ScoreBreakdown(
            population=math.sqrt(max(0.0, self.pop_sumsq)),
            compactness=self.comp_sum,
            county=float(self.county_extra),
            vra=self.vra,
            town=float(self.town_extra),
            total=self.total,
        )


class _Chain:
    """Mutable chain state: labels plus incremental scores and scratch buffers."""

    def __init__(
        self,
        g: Geography,
        weights: ScoreWeights,
        labels: list[int],
        rng: random.Random,
        vra_black_districts: int = 6,
        vra_hispanic_districts: int = 1,
        vra_threshold: float = 0.40,
    ):
        self.g = g
        self.labels = labels
        self.rng = rng
        self.edge_pairs = [(a, b) for a, b, _ in g.edges]
        self.tracker = _ScoreTracker(
            g, labels, weights, vra_black_districts, vra_hispanic_districts, vra_threshold
        )
        self.seen = [0] * g.num_wards
        self.stamp = 0
        self.proposals = 0
        self.accepted = 0
        self.consecutive_rejects = 0
        self._moves: list[tuple[int, int]] | None = None

    def conflict_moves(self) -> list[tuple[int, int]]:
        # Rebuilt only after an accepted move; rejections leave it intact.
        if self._moves is None:
            labels = self.labels
            pairs: set[tuple[int, int]] = set()
            for a, b in self.edge_pairs:
                la = labels[a]
                lb = labels[b]
                if la != lb:
                    pairs.add((a, lb))
                    pairs.add((b, la))
            self._moves = sorted(pairs)
        return self._moves

    def conflict_count(self) -> int:
        labels = self.labels
        pairs: set[tuple[int, int]] = set()
        for a, b in self.edge_pairs:
            la = labels[a]
            lb = labels[b]
            if la != lb:
                pairs.add((a, lb))
                pairs.add((b, la))
        return len(pairs)

    def _conflict_delta(self, ward: int, d_old: int, d_new: int) -> int:
        """Change in the conflicted-pair count if ward moved d_old -> d_new.

        Only pairs anchored at the ward or its neighbors can change, so the
        full-graph rescan is avoided.  Must agree exactly with flipping the
        label and calling ``conflict_count``; a property test enforces that.
        """
        labels = self.labels
        neighbors = self.g.neighbors
        in_a = in_b = False
        for v, _ in neighbors[ward]:
            lv = labels[v]
            if lv == d_old:
                in_a = True
            elif lv == d_new:
                in_b = True
        delta = int(in_a) - int(in_b)
        for u, _ in neighbors[ward]:
            lu = labels[u]
            a_cnt = b_cnt = 0
            for v, _ in neighbors[u]:
                lv = labels[v]
                if lv == d_old:
                    a_cnt += 1
                elif lv == d_new:
                    b_cnt += 1
            if lu != d_old and a_cnt == 1:
                delta -= 1
            if lu != d_new and b_cnt == 0:
                delta += 1
        return delta

    def donor_ok(self, ward: int, d_old: int) -> bool:
        count_after = self.tracker.ward_count[d_old] - 1
        if count_after < 1:
            return False
        labels = self.labels
        neighbors = self.g.neighbors
        start = -1
        for nbr, _ in neighbors[ward]:
            if labels[nbr] == d_old:
                start = nbr
                break
        if start < 0:
            return False
        self.stamp += 1
        stamp = self.stamp
        seen = self.seen
        seen[ward] = stamp
        seen[start] = stamp
        stack = [start]
        reached = 1
        while stack:
            x = stack.pop()
            for nbr, _ in neighbors[x]:
                if labels[nbr] == d_old and seen[nbr] != stamp:
                    seen[nbr] = stamp
                    reached += 1
                    stack.append(nbr)
        return reached == count_after

    def step(self, beta: float, stall_cap: int) -> bool:
        """One proposal at the given temperature; True when it was accepted."""
        self.proposals += 1
        moves = self.conflict_moves()
        c_old = len(moves)
        if c_old == 0:
            raise ChainStallError(
                "conflicted-pair set is empty; no move can ever be accepted"
            )
        ward, d_new = moves[self.rng.randrange(c_old)]
        d_old = self.labels[ward]
        if not self.donor_ok(ward, d_old):
            self._count_reject(stall_cap)
            return False
        move = self.tracker.preview(ward, d_old, d_new, self.labels)
        c_new = c_old + self._conflict_delta(ward, d_old, d_new)
        if accept_move(self.tracker.total, move.total, beta, c_old, c_new, self.rng):
            self.tracker.commit(move)
            self.labels[ward] = d_new
            self._moves = None
            self.accepted += 1
            self.consecutive_rejects = 0
            return True
        self._count_reject(stall_cap)
        return False

    def _count_reject(self, stall_cap: int) -> None:
        self.consecutive_rejects += 1
        if self.consecutive_rejects > stall_cap:
            raise ChainStallError(
                f"{self.consecutive_rejects} consecutive rejected proposals "
                f"(cap {stall_cap})"
            )

    def check_invariants(self) -> None:
        """Debug-mode consistency: valid plan and scores matching full recompute."""
        plan = Plan.from_labels(self.labels)
        for d in range(self.g.num_districts):
            if self.tracker.ward_count[d] < 1:
                raise AssertionError(f"district {d} is empty")
            if not is_contiguous(self.g, plan, d):
                raise AssertionError(f"district {d} lost contiguity")
        fresh = total_score(
            self.g,
            plan,
            self.tracker.weights,
            vra_black_districts=self.tracker.vra_black_districts,
            vra_hispanic_districts=self.tracker.vra_hispanic_districts,
            vra_threshold=self.tracker.vra_threshold,
        )
        drift = abs(fresh.total - self.tracker.total)
        scale = max(1.0, abs(fresh.total))
        if drift / scale > 1e-9:
            raise AssertionError(
                f"incremental total {self.tracker.total} drifted from {fresh.total}"
            )


DEFAULT_STALL_CAP = 10_000_000


def run_annealed_chain(
    g: Geography,
    weights: ScoreWeights,
    schedule: AnnealingSchedule,
    seed: int,
    vra_black_districts: int = 6,
    vra_hispanic_districts: int = 1,
    vra_threshold: float = 0.40,
    stall_cap: int = DEFAULT_STALL_CAP,
    debug: bool = False,
    initial_plan: Plan | None = None,
) -> ChainResult:
    """Run one independent annealed chain and return its final plan.

    Consumes exactly ``schedule.total_steps`` accepted steps.  Deterministic
    given the seed.  ``debug`` revalidates contiguity and scores after every
    accepted step.
    """
    rng = random.Random(seed)
    if initial_plan is None:
        initial_plan = random_initial_plan(g, rng)
    else:
        check_plan(g, initial_plan)
    chain = _Chain(
        g,
        weights,
        list(initial_plan.assignment),
        rng,
        vra_black_districts,
        vra_hispanic_districts,
        vra_threshold,
    )
    total = schedule.total_steps
    while chain.accepted < total:
        if chain.step(schedule.beta_at(chain.accepted), stall_cap) and debug:
            chain.check_invariants()
    return ChainResult(
        plan=Plan.from_labels(chain.labels),
        scores=chain.tracker.breakdown(),
        accepted_steps=chain.accepted,
        proposals=chain.proposals,
        seed=seed,
    )


def fixed_beta_visit_counts(
    g: Geography,
    weights: ScoreWeights,
    beta: float,
    accepted_steps: int,
    seed: int,
    vra_black_districts: int = 6,
    vra_hispanic_districts: int = 1,
    vra_threshold: float = 0.40,
    stall_cap: int = DEFAULT_STALL_CAP,
    accept_bias: float = 0.0,
) -> dict[tuple[int, ...], int]:
    """Occupation counts over canonical plans for a fixed-temperature run.

    The state is tallied at every proposal, accepted or not, which is the
    occupation measure the Metropolis chain leaves invariant.  The run ends
    after ``accepted_steps`` acceptances.  ``accept_bias`` deliberately breaks
    the acceptance rule (added to the acceptance probability) so validation
    harnesses can prove they would catch a faulty sampler.
    """
    rng = random.Random(seed)
    initial = random_initial_plan(g, rng)
    chain = _Chain(
        g,
        weights,
        list(initial.assignment),
        rng,
        vra_black_districts,
        vra_hispanic_districts,
        vra_threshold,
    )
    counts: dict[tuple[int, ...], int] = {}
    while chain.accepted < accepted_steps:
        key = canonical_assignment(chain.labels)
        counts[key] = counts.get(key, 0) + 1
        if accept_bias == 0.0:
            chain.step(beta, stall_cap)
        else:
            _biased_step(chain, beta, stall_cap, accept_bias)
    return counts


def _biased_step(chain: _Chain, beta: float, stall_cap: int, bias: float) -> None:
    """Chain step with a deliberately wrong acceptance probability."""
    chain.proposals += 1
    moves = chain.conflict_moves()
    c_old = len(moves)
    if c_old == 0:
        raise ChainStallError("conflicted-pair set is empty")
    ward, d_new = moves[chain.rng.randrange(c_old)]
    d_old = chain.labels[ward]
    if not chain.donor_ok(ward, d_old):
        chain._count_reject(stall_cap)
        return
    move = chain.tracker.preview(ward, d_old, d_new, chain.labels)
    c_new = c_old + chain._conflict_delta(ward, d_old, d_new)
    log_ratio = math.log(c_old / c_new) - beta * (move.total - chain.tracker.total)
    prob = min(1.0, math.exp(min(0.0, log_ratio))) + bias
    if chain.rng.random() < prob:
        chain.tracker.commit(move)
        chain.labels[ward] = d_new
        chain._moves = None
        chain.accepted += 1
        chain.consecutive_rejects = 0
    else:
        chain._count_reject(stall_cap)


def passes_filter(g: Geography, plan: Plan, criteria: FilterCriteria) -> FilterResult:
    """Hard ensemble membership test; reasons name each violated constraint."""
    agg = district_aggregates(g, plan)
    reasons: list[str] = []
    ideal = g.ideal_population
    deviation = max(abs(p - ideal) / ideal for p in agg.population)
    if not deviation < criteria.max_pop_deviation:
        reasons.append("population_deviation")
    black_ok = sum(
        1
        for b, p in zip(agg.black_population, agg.population)
        if p > 0 and b / p >= criteria.vra_black_threshold
    )
    if black_ok < criteria.vra_black_districts:
        reasons.append("vra_black")
    hisp_ok = sum(
        1
        for h, p in zip(agg.hispanic_population, agg.population)
        if p > 0 and h / p >= criteria.vra_hispanic_threshold
    )
    if hisp_ok < criteria.vra_hispanic_districts:
        reasons.append("vra_hispanic")
    if criteria.max_compactness is not None:
        if compactness_score_from_aggregates(agg) > criteria.max_compactness:
            reasons.append("compactness")
    return FilterResult(passed=not reasons, reasons=tuple(reasons))


_WORKER_STATE: dict | None = None


def _init_worker(g, weights, schedule, criteria, master_seed, stall_cap) -> None:
    global _WORKER_STATE
    _WORKER_STATE = {
        "g": g,
        "weights": weights,
        "schedule": schedule,
        "criteria": criteria,
        "master_seed": master_seed,
        "stall_cap": stall_cap,
    }


def _run_attempt_in_worker(index: int):
    s = _WORKER_STATE
    return _run_attempt(
        s["g"], s["weights"], s["schedule"], s["criteria"], s["master_seed"], s["stall_cap"], index
    )


def _run_attempt(g, weights, schedule, criteria, master_seed, stall_cap, index: int):
    seed = derive_chain_seed(master_seed, index)
    result = run_annealed_chain(
        g,
        weights,
        schedule,
        seed,
        vra_black_districts=criteria.vra_black_districts,
        vra_hispanic_districts=criteria.vra_hispanic_districts,
        vra_threshold=criteria.vra_black_threshold,
        stall_cap=stall_cap,
    )
    verdict = passes_filter(g, result.plan, criteria)
    return (
        index,
        seed,
        result.plan.assignment,
        result.scores,
        result.proposals,
        result.accepted_steps,
        verdict.passed,
        verdict.reasons,
    )


def generate_ensemble(
    g: Geography,
    weights: ScoreWeights,
    schedule: AnnealingSchedule,
    criteria: FilterCriteria,
    n_plans: int,
    seed: int,
    workers: int = 1,
    attempt_budget: int | None = None,
    stall_cap: int = DEFAULT_STALL_CAP,
) -> Ensemble:
    """Sample ``n_plans`` filtered plans from independent annealed chains.

    Attempt i runs a chain seeded from (seed, i); attempts are examined in
    index order and the first ``n_plans`` passing the filters form the
    ensemble, so the result is identical for any worker count.  Raises
    ``EnsembleBudgetError`` when the attempt budget runs out first.
    """
    if n_plans < 1:
        raise ValueError("n_plans must be positive")
    if attempt_budget is None:
        attempt_budget = max(20 * n_plans, n_plans + 16)
    if attempt_budget < n_plans:
        raise ValueError("attempt budget smaller than the requested ensemble")

    records: list[PlanRecord] = []
    failures: Counter[str] = Counter()
    attempts = 0
    proposals = 0
    accepted_steps = 0

    def consume(result) -> bool:
        nonlocal attempts, proposals, accepted_steps
        (index, chain_seed, assignment, scores, n_prop, n_acc, passed, reasons) = result
        attempts = index + 1
        proposals += n_prop
        accepted_steps += n_acc
        if passed:
            records.append(
                PlanRecord(
                    plan_id=len(records),
                    seed=chain_seed,
                    scores=scores,
                    plan=Plan(assignment),
                )
            )
        else:
            for reason in reasons:
                failures[reason] += 1
        return len(records) >= n_plans

    done = False
    if workers <= 1:
        for index in range(attempt_budget):
            result = _run_attempt(g, weights, schedule, criteria, seed, stall_cap, index)
            if consume(result):
                done = True
                break
    else:
        batch = max(4 * workers, 8)
        with multiprocessing.Pool(
            workers,
            initializer=_init_worker,
            initargs=(g, weights, schedule, criteria, seed, stall_cap),
        ) as pool:
            start = 0
            while not done and start < attempt_budget:
                stop = min(start + batch, attempt_budget)
                for result in pool.map(_run_attempt_in_worker, range(start, stop)):
                    if consume(result):
                        done = True
                        break
                start = stop
    if not done:
        raise EnsembleBudgetError(n_plans, len(records), attempts, dict(failures))

    meta = EnsembleMeta(
        master_seed=seed,
        requested=n_plans,
        attempts=attempts,
        proposals=proposals,
        accepted_steps=accepted_steps,
        filter_failures=dict(sorted(failures.items())),
        schedule=schedule,
        weights=weights,
        criteria=criteria,
        num_wards=g.num_wards,
        num_districts=g.num_districts,
        source_ids=g.source_ids,
    )
    return Ensemble(records=tuple(records), meta=meta)


def _meta_sidecar_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".meta.json"


def save_ensemble(path: str, ensemble: Ensemble) -> None:
    """Write plans as JSON lines plus a sidecar meta file next to them."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in ensemble.records:
            line = {
                "plan_id": record.plan_id,
                "seed": record.seed,
                "scores": record.scores.as_dict(),
                "assignment": list(record.plan.assignment),
            }
            handle.write(json.dumps(line, sort_keys=True, separators=(",", ":")))
            handle.write("\n")
    meta = ensemble.meta
    payload = {
        "master_seed": meta.master_seed,
        "requested": meta.requested,
        "attempts": meta.attempts,
        "proposals": meta.proposals,
        "accepted_steps": meta.accepted_steps,
        "acceptance_rate": meta.accepted_steps / meta.proposals if meta.proposals else 0.0,
        "filter_failures": meta.filter_failures,
        "schedule": {
            "steps_beta0": meta.schedule.steps_beta0,
            "steps_ramp": meta.schedule.steps_ramp,
            "steps_beta1": meta.schedule.steps_beta1,
        },
        "weights": {
            "w_pop": meta.weights.population,
            "w_comp": meta.weights.compactness,
            "w_county": meta.weights.county,
            "w_vra": meta.weights.vra,
            "w_town": meta.weights.town,
        },
        "criteria": {
            "max_pop_deviation": meta.criteria.max_pop_deviation,
            "vra_black_districts": meta.criteria.vra_black_districts,
            "vra_black_threshold": meta.criteria.vra_black_threshold,
            "vra_hispanic_districts": meta.criteria.vra_hispanic_districts,
            "vra_hispanic_threshold": meta.criteria.vra_hispanic_threshold,
            "max_compactness": meta.criteria.max_compactness,
        },
        "num_wards": meta.num_wards,
        "num_districts": meta.num_districts,
        "source_ids": list(meta.source_ids),
    }
    with open(_meta_sidecar_path(path), "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def load_ensemble(path: str) -> Ensemble:
    """Read an ensemble written by ``save_ensemble``."""
    try:
        with open(_meta_sidecar_path(path), encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ValidationError(f"cannot read ensemble meta for {path}: {exc}") from exc
    meta = EnsembleMeta(
        master_seed=raw["master_seed"],
        requested=raw["requested"],
        attempts=raw["attempts"],
        proposals=raw["proposals"],
        accepted_steps=raw["accepted_steps"],
        filter_failures=dict(raw["filter_failures"]),
        schedule=AnnealingSchedule(**raw["schedule"]),
        weights=ScoreWeights(
            population=raw["weights"]["w_pop"],
            compactness=raw["weights"]["w_comp"],
            county=raw["weights"]["w_county"],
            vra=raw["weights"]["w_vra"],
            town=raw["weights"]["w_town"],
        ),
        criteria=FilterCriteria(**raw["criteria"]),
        num_wards=raw["num_wards"],
        num_districts=raw["num_districts"],
        source_ids=tuple(raw["source_ids"]),
    )
    records: list[PlanRecord] = []
    try:
        handle = open(path, encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read ensemble {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: bad JSON line: {exc}") from exc
            scores = entry["scores"]
            records.append(
                PlanRecord(
                    plan_id=entry["plan_id"],
                    seed=entry["seed"],
                    scores=ScoreBreakdown(
                        population=scores["pop"],
                        compactness=scores["comp"],
                        county=scores["county"],
                        vra=scores["vra"],
                        town=scores["town"],
                        total=scores["total"],
                    ),
                    plan=Plan(tuple(entry["assignment"])),
                )
            )
    return Ensemble(records=tuple(records), meta=meta)
