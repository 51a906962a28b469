"""Exact small-instance machinery for validating the sampler.

Builds synthetic grid geographies with controllable population, demographic,
county and vote structure, enumerates every contiguous partition of a small
instance, and computes the exact score-weighted distribution those partitions
should follow.  The sampler's empirical visit frequencies can then be compared
against ground truth with a total variation distance.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

from planchain.elections import Election
from planchain.geography import (
    Geography,
    Plan,
    Ward,
    build_geography,
    canonical_assignment,
)
from planchain.scores import ScoreWeights, total_score


class OracleError(RuntimeError):
    """Raised when an exact computation is infeasible or inconsistent."""


MAX_ENUMERATED_WARDS = 16
MAX_PARTITIONS = 2_000_000


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a rectangular test instance.

    Wards are grid cells in row-major order with unit-length edges.  The
    population, area, demographic and county fields are switchable so a test
    can dial the score landscape from flat to rugged.
    """

    width: int
    height: int
    num_districts: int
    seed: int = 0
    population: str = "uniform"  # uniform | urban
    area: str = "unit"  # unit | varied
    county_rows: int = 0  # rows per county band; 0 = single county
    town_cols: int = 0  # columns per town band; 0 = single town
    demographics: str = "none"  # none | clustered
    base_population: int = 100
    pop_falloff: float = 0.6  # urban field: center-to-edge drop as a fraction
    pop_noise: float = 0.05  # urban field: uniform noise amplitude
    num_elections: int = 2
    with_unopposed: bool = False

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise OracleError("grid dimensions must be positive")
        if not 1 <= self.num_districts <= self.width * self.height:
            raise OracleError("district count out of range")
        if self.population not in ("uniform", "urban"):
            raise OracleError(f"unknown population field {self.population!r}")
        if self.area not in ("unit", "varied"):
            raise OracleError(f"unknown area field {self.area!r}")
        if self.demographics not in ("none", "clustered"):
            raise OracleError(f"unknown demographic field {self.demographics!r}")


def _grid_populations(spec: SyntheticSpec) -> list[int]:
    n = spec.width * spec.height
    if spec.population == "uniform":
        return [spec.base_population] * n
    rng = random.Random(f"{spec.seed}:population")
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    span = max(math.hypot(cx, cy), 1.0)
    pops = []
    for y in range(spec.height):
        for x in range(spec.width):
            falloff = 1.0 - spec.pop_falloff * math.hypot(x - cx, y - cy) / span
            noisy = spec.base_population * (
                falloff + rng.uniform(-spec.pop_noise, spec.pop_noise)
            )
            pops.append(max(1, round(noisy)))
    return pops


def _grid_demographics(spec: SyntheticSpec, pops: Sequence[int]) -> tuple[list[int], list[int]]:
    n = spec.width * spec.height
    if spec.demographics == "none":
        return [0] * n, [0] * n
    bw = max(1, math.ceil(spec.width / 3))
    bh = max(1, math.ceil(spec.height / 3))
    black, hisp = [], []
    for y in range(spec.height):
        for x in range(spec.width):
            i = y * spec.width + x
            bfrac = 0.8 if (x < bw and y < bh) else 0.05
            hfrac = 0.3 if (x >= spec.width - bw and y >= spec.height - bh) else 0.02
            black.append(min(pops[i], round(bfrac * pops[i])))
            hisp.append(min(pops[i], round(hfrac * pops[i])))
    return black, hisp


def synth_geography(spec: SyntheticSpec) -> Geography:
    """Build the grid geography for a synthetic spec."""
    w, h = spec.width, spec.height
    pops = _grid_populations(spec)
    black, hisp = _grid_demographics(spec, pops)
    area_rng = random.Random(f"{spec.seed}:area")
    wards = []
    for y in range(h):
        for x in range(w):
            i = y * w + x
            county = f"C{y // spec.county_rows:02d}" if spec.county_rows else "C00"
            town = f"T{x // spec.town_cols:02d}" if spec.town_cols else "T00"
            area = area_rng.uniform(9.0, 16.0) if spec.area == "varied" else 1.0
            outer = float((x == 0) + (x == w - 1) + (y == 0) + (y == h - 1))
            wards.append(
                Ward(
                    id=i,
                    county=county,
                    town=town,
                    population=pops[i],
                    black_population=black[i],
                    hispanic_population=hisp[i],
                    area=area,
                    outer_boundary=outer,
                )
            )
    edges = []
    for y in range(h):
        for x in range(w):
            i = y * w + x
            if x + 1 < w:
                edges.append((i, i + 1, 1.0))
            if y + 1 < h:
                edges.append((i, i + w, 1.0))
    return build_geography(wards, edges, spec.num_districts)


def synth_elections(spec: SyntheticSpec, g: Geography) -> dict[str, Election]:
    """Synthesize plausible two-party elections over a synthetic geography.

    Republican support follows a left-to-right gradient plus noise, with the
    statewide split kept near even.  With ``with_unopposed`` set, the final
    election leaves a band of columns uncontested: the winner takes
    the (reduced) recorded turnout and the loser records zero.
    """
    out: dict[str, Election] = {}
    for e_idx in range(spec.num_elections):
        rng = random.Random(f"{spec.seed}:votes:{e_idx}")
        gradient = 0.18 + 0.05 * e_idx
        unopposed_cols: set[int] = set()
        if spec.with_unopposed and e_idx == spec.num_elections - 1 and spec.width > 2:
            unopposed_cols = {spec.width - 1, spec.width - 2}
        totals, dems, reps, opposed = [], [], [], []
        half = (spec.width - 1) / 2.0
        for ward in range(g.num_wards):
            x = ward % spec.width
            share = 0.5 + gradient * (x - half) / max(spec.width - 1, 1)
            share = min(0.95, max(0.05, share + rng.uniform(-0.06, 0.06)))
            pop = g.populations[ward]
            if x in unopposed_cols:
                recorded = max(1, round(pop * 0.45))
                win_votes = max(1, round(recorded * 0.9))
                rep_v, dem_v = (win_votes, 0) if share >= 0.5 else (0, win_votes)
                totals.append(recorded)
                reps.append(rep_v)
                dems.append(dem_v)
                opposed.append(False)
            else:
                total = max(2, round(pop * 0.6))
                two_party = max(2, round(total * 0.97))
                rep_v = min(two_party, round(two_party * share))
                totals.append(total)
                reps.append(rep_v)
                dems.append(two_party - rep_v)
                opposed.append(True)
        eid = f"E{e_idx}"
        out[eid] = Election(
            id=eid,
            total=tuple(totals),
            dem=tuple(dems),
            rep=tuple(reps),
            opposed=tuple(opposed),
        )
    return out


def synth_instance(spec: SyntheticSpec) -> tuple[Geography, dict[str, Election]]:
    g = synth_geography(spec)
    return g, synth_elections(spec, g)


def _connected_subsets(
    neighbors: Sequence[Sequence[int]],
    allowed: frozenset[int],
    pivot: int,
    max_size: int,
) -> Iterator[frozenset[int]]:
    """All subsets of `allowed` that contain `pivot` and induce a connected
    subgraph, each yielded exactly once."""

    def grow(current: set[int], forbidden: set[int]) -> Iterator[frozenset[int]]:
        yield frozenset(current)
        if len(current) == max_size:
            return
        frontier = set()
        for u in current:
            for v in neighbors[u]:
                if v in allowed and v not in current and v not in forbidden:
                    frontier.add(v)
        blocked = set(forbidden)
        for v in sorted(frontier):
            current.add(v)
            yield from grow(current, blocked)
            current.remove(v)
            blocked.add(v)

    yield from grow({pivot}, set())


def _is_connected_subset(neighbors: Sequence[Sequence[int]], nodes: frozenset[int]) -> bool:
    if not nodes:
        return False
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in neighbors[u]:
            if v in nodes and v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def _component_count(neighbors: Sequence[Sequence[int]], nodes: frozenset[int]) -> int:
    remaining = set(nodes)
    count = 0
    while remaining:
        count += 1
        start = remaining.pop()
        stack = [start]
        while stack:
            u = stack.pop()
            for v in neighbors[u]:
                if v in remaining:
                    remaining.remove(v)
                    stack.append(v)
    return count


def enumerate_partitions(g: Geography, limit: int = MAX_PARTITIONS) -> list[tuple[int, ...]]:
    """Every contiguous partition of the wards into the configured number of
    districts, as canonical assignment tuples.

    Districts are unlabeled, so each partition appears once, in the canonical
    labeling where district numbers follow first appearance in ward order.
    Refuses instances that are too large to enumerate exactly.
    """
    if g.num_wards > MAX_ENUMERATED_WARDS:
        raise OracleError(
            f"exact enumeration supports at most {MAX_ENUMERATED_WARDS} wards, "
            f"got {g.num_wards}"
        )
    neighbors = [[nbr for nbr, _ in g.neighbors[i]] for i in range(g.num_wards)]
    results: list[tuple[int, ...]] = []

    def split(remaining: frozenset[int], k: int, parts: list[frozenset[int]]) -> None:
        if k == 1:
            if _is_connected_subset(neighbors, remaining):
                labels = [0] * g.num_wards
                for d, part in enumerate(parts + [remaining]):
                    for ward in part:
                        labels[ward] = d
                results.append(tuple(labels))
                if len(results) > limit:
                    raise OracleError(f"more than {limit} partitions")
            return
        pivot = min(remaining)
        max_size = len(remaining) - (k - 1)
        for subset in _connected_subsets(neighbors, remaining, pivot, max_size):
            rest = remaining - subset
            if len(rest) < k - 1:
                continue
            if _component_count(neighbors, rest) > k - 1:
                continue
            parts.append(subset)
            split(rest, k - 1, parts)
            parts.pop()

    split(frozenset(range(g.num_wards)), g.num_districts, [])
    return results


def exact_boltzmann(
    g: Geography,
    weights: ScoreWeights | None = None,
    beta: float = 1.0,
    partitions: Sequence[tuple[int, ...]] | None = None,
    **score_kwargs,
) -> dict[tuple[int, ...], float]:
    """Exact stationary distribution over all contiguous partitions.

    Probability of a partition is proportional to exp(-beta * J) with J the
    weighted total score.  The minimum score is subtracted before
    exponentiating so rugged landscapes stay in floating range.
    """
    if partitions is None:
        partitions = enumerate_partitions(g)
    if not partitions:
        raise OracleError("no contiguous partitions to weight")
    scores = [
        total_score(g, Plan(assignment=a), weights, **score_kwargs).total
        for a in partitions
    ]
    j_min = min(scores)
    raw = [math.exp(-beta * (j - j_min)) for j in scores]
    z = sum(raw)
    return {a: r / z for a, r in zip(partitions, raw)}


def uniform_distribution(partitions: Sequence[tuple[int, ...]]) -> dict[tuple[int, ...], float]:
    if not partitions:
        raise OracleError("no partitions")
    p = 1.0 / len(partitions)
    return {a: p for a in partitions}


def tv_distance(
    visits: Mapping[tuple[int, ...], int | float],
    exact: Mapping[tuple[int, ...], float],
) -> float:
    """Total variation distance between empirical visit counts and an exact
    distribution.  A visited state outside the exact support is a hard error:
    it means the sampler produced an invalid partition."""
    total = float(sum(visits.values()))
    if total <= 0:
        raise OracleError("no visits tallied")
    unknown = [a for a in visits if a not in exact]
    if unknown:
        raise OracleError(f"{len(unknown)} visited states outside the exact support")
    acc = 0.0
    for a, p in exact.items():
        acc += abs(visits.get(a, 0) / total - p)
    return 0.5 * acc


def move_neighbors(g: Geography, assignment: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Canonical assignments reachable by one valid single-ward move."""
    labels = list(assignment)
    district_sizes = [0] * g.num_districts
    for d in labels:
        district_sizes[d] += 1
    nbrs = [[n for n, _ in g.neighbors[i]] for i in range(g.num_wards)]
    out = []
    seen_pairs = set()
    for ward in range(g.num_wards):
        for nbr, _ in g.neighbors[ward]:
            new_d = labels[nbr]
            old_d = labels[ward]
            if new_d == old_d or (ward, new_d) in seen_pairs:
                continue
            seen_pairs.add((ward, new_d))
            if district_sizes[old_d] == 1:
                continue
            donor = frozenset(
                i for i in range(g.num_wards) if labels[i] == old_d and i != ward
            )
            if not _is_connected_subset(nbrs, donor):
                continue
            labels[ward] = new_d
            out.append(canonical_assignment(labels))
            labels[ward] = old_d
    return out


def is_move_connected(g: Geography, assignments: Sequence[tuple[int, ...]]) -> bool:
    """True when single-ward moves connect the given set of partitions.

    Used to confirm that a test landscape's high-probability states form one
    communicating class, so finite-run visit frequencies can converge.
    """
    if not assignments:
        return False
    index = {a: i for i, a in enumerate(assignments)}
    start = assignments[0]
    seen = {start}
    stack = [start]
    while stack:
        a = stack.pop()
        for b in move_neighbors(g, a):
            if b in index and b not in seen:
                seen.add(b)
                stack.append(b)
    return len(seen) == len(assignments)
