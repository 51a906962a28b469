"""Plan score function: weighted sum of population, shape, split, and VRA terms.

Lower is better everywhere.  The sampler targets exp(-beta * total), so only
score differences matter; every component is computed from district
aggregates and is invariant under relabeling the districts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from planchain.geography import DistrictAggregates, Geography, Plan, district_aggregates


@dataclass(frozen=True)
class ScoreWeights:
    """Component weights; defaults give a production-scale statewide run."""

    population: float = 2200.0
    compactness: float = 0.8
    county: float = 0.6
    vra: float = 100.0
    town: float = 0.0


@dataclass(frozen=True)
class ScoreBreakdown:
    """Raw component scores plus the weighted total."""

    population: float
    compactness: float
    county: float
    vra: float
    town: float
    total: float

    def as_dict(self) -> dict[str, float]:
        """Wire-format keys used in ensemble files."""
        return {
            "pop": self.population,
            "comp": self.compactness,
            "county": self.county,
            "vra": self.vra,
            "town": self.town,
            "total": self.total,
        }


def population_score_from_aggregates(agg: DistrictAggregates, ideal: float) -> float:
    """Root of summed squared relative deviations from the ideal population."""
    return math.sqrt(sum(((p - ideal) / ideal) ** 2 for p in agg.population))


def compactness_score_from_aggregates(agg: DistrictAggregates) -> float:
    """Sum over districts of perimeter squared over area (isoperimetric ratio)."""
    return sum(p * p / a for p, a in zip(agg.perimeter, agg.area))


def vra_shortfall(
    black_fractions: Sequence[float],
    hispanic_fractions: Sequence[float],
    black_districts: int = 6,
    hispanic_districts: int = 1,
    threshold: float = 0.40,
) -> float:
    """Square-root shortfall below the target minority fraction.

    Sums sqrt(max(0, threshold - f)) over the ``black_districts`` largest
    district Black fractions and the ``hispanic_districts`` largest Hispanic
    fractions.  When fewer districts exist than required, the missing entries
    count as fraction zero.  Zero exactly when the corresponding hard filter
    with the same counts and threshold is satisfied.
    """
    black = sorted(black_fractions, reverse=True)
    hisp = sorted(hispanic_fractions, reverse=True)
    total = 0.0
    for j in range(black_districts):
        f = black[j] if j < len(black) else 0.0
        total += math.sqrt(max(0.0, threshold - f))
    for j in range(hispanic_districts):
        f = hisp[j] if j < len(hisp) else 0.0
        total += math.sqrt(max(0.0, threshold - f))
    return total


def vra_score_from_aggregates(
    agg: DistrictAggregates,
    black_districts: int = 6,
    hispanic_districts: int = 1,
    threshold: float = 0.40,
) -> float:
    black = [b / p if p > 0 else 0.0 for b, p in zip(agg.black_population, agg.population)]
    hisp = [h / p if p > 0 else 0.0 for h, p in zip(agg.hispanic_population, agg.population)]
    return vra_shortfall(black, hisp, black_districts, hispanic_districts, threshold)


def split_score(codes: tuple[int, ...], labels: tuple[int, ...]) -> float:
    """Number of extra pieces: sum over units of (districts touched - 1)."""
    pairs = {(c, d) for c, d in zip(codes, labels)}
    return float(len(pairs) - len(set(codes)))


def score_population(g: Geography, plan: Plan) -> float:
    return population_score_from_aggregates(district_aggregates(g, plan), g.ideal_population)


def score_compactness(g: Geography, plan: Plan) -> float:
    return compactness_score_from_aggregates(district_aggregates(g, plan))


def score_county_splits(g: Geography, plan: Plan) -> float:
    return split_score(g.county_codes, plan.assignment)


def score_town_splits(g: Geography, plan: Plan) -> float:
    return split_score(g.town_codes, plan.assignment)


def score_vra(
    g: Geography,
    plan: Plan,
    black_districts: int = 6,
    hispanic_districts: int = 1,
    threshold: float = 0.40,
) -> float:
    return vra_score_from_aggregates(
        district_aggregates(g, plan), black_districts, hispanic_districts, threshold
    )


def total_score(
    g: Geography,
    plan: Plan,
    weights: ScoreWeights | None = None,
    vra_black_districts: int = 6,
    vra_hispanic_districts: int = 1,
    vra_threshold: float = 0.40,
) -> ScoreBreakdown:
    """All component scores and their weighted total for one plan."""
    if weights is None:
        weights = ScoreWeights()
    agg = district_aggregates(g, plan)
    pop = population_score_from_aggregates(agg, g.ideal_population)
    comp = compactness_score_from_aggregates(agg)
    county = split_score(g.county_codes, plan.assignment)
    town = split_score(g.town_codes, plan.assignment)
    vra = vra_score_from_aggregates(
        agg, vra_black_districts, vra_hispanic_districts, vra_threshold
    )
    total = (
        weights.population * pop
        + weights.compactness * comp
        + weights.county * county
        + weights.vra * vra
        + weights.town * town
    )
    return ScoreBreakdown(
        population=pop, compactness=comp, county=county, vra=vra, town=town, total=total
    )
