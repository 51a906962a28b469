"""Partisan outlier statistics of a plan against a sampled ensemble.

Everything here compares one plan's district-level two-party outcomes with
the distribution of the same quantities over an ensemble of sampled plans,
under uniform vote shifts that sweep the statewide Republican percentage
through a grid of targets.  Percentile-type results are reported in percent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from planchain.elections import Election, district_shares, statewide_rep_fraction
from planchain.geography import Geography, Plan, ValidationError


def _plan_list(plans) -> Sequence[Plan]:
    return plans.plans if hasattr(plans, "plans") else plans


@dataclass(frozen=True)
class ShiftGrid:
    """Statewide Republican percentage targets for the shift sweep."""

    targets: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.targets:
            raise ValidationError("shift grid is empty")
        if any(b <= a for a, b in zip(self.targets, self.targets[1:])):
            raise ValidationError("shift grid targets must be strictly increasing")

    @classmethod
    def default(cls) -> "ShiftGrid":
        return cls.spanning(45.0, 55.0, 0.5)

    @classmethod
    def spanning(cls, low: float, high: float, step: float = 0.5) -> "ShiftGrid":
        count = int(round((high - low) / step))
        return cls(tuple(low + i * step for i in range(count + 1)))

    @classmethod
    def centered(cls, center: float, half_width: float = 7.5, step: float = 0.5) -> "ShiftGrid":
        return cls.spanning(center - half_width, center + half_width, step)

    def __len__(self) -> int:
        return len(self.targets)


def shares_matrix(g: Geography, plans, e: Election) -> np.ndarray:
    """District Republican shares, one ensemble plan per row."""
    plans = _plan_list(plans)
    rows = [district_shares(g, p, e).rep_shares for p in plans]
    return np.asarray(rows, dtype=float)


def _seats_for_shares(shares: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Seat counts for every (row, shift) pair; exact halves go Democratic."""
    shifted = shares[:, None, :] + deltas[None, :, None] / 100.0
    return np.count_nonzero(shifted > 0.5, axis=2)


@dataclass(frozen=True)
class SeatHistogram:
    """Ensemble seat counts at one uniform shift, with a Gaussian tail model."""

    election_id: str
    delta_points: float
    counts: Mapping[int, int]
    n: int
    mean: float
    sd: float

    @classmethod
    def from_seats(
        cls, election_id: str, delta_points: float, seat_counts: Sequence[int]
    ) -> "SeatHistogram":
        arr = np.asarray(seat_counts, dtype=float)
        values, freq = np.unique(np.asarray(seat_counts, dtype=int), return_counts=True)
        return cls(
            election_id=election_id,
            delta_points=delta_points,
            counts={int(v): int(c) for v, c in zip(values, freq)},
            n=len(seat_counts),
            mean=float(arr.mean()),
            sd=float(arr.std()),
        )

    def prob(self, seats: int) -> float:
        """Empirical frequency, or Gaussian unit-bin mass outside the support."""
        count = self.counts.get(seats, 0)
        if count > 0:
            return count / self.n
        if self.sd == 0.0:
            return 1.0 / (10.0 * self.n)
        lo = (seats - 0.5 - self.mean) / self.sd
        hi = (seats + 0.5 - self.mean) / self.sd
        mass = 0.5 * (math.erf(hi / math.sqrt(2.0)) - math.erf(lo / math.sqrt(2.0)))
        return max(mass, 1e-300)


def seat_histogram(
    g: Geography, plans, e: Election, delta_points: float = 0.0
) -> SeatHistogram:
    """Histogram of ensemble Republican seat counts at one uniform shift."""
    shares = shares_matrix(g, plans, e)
    seat_counts = _seats_for_shares(shares, np.array([delta_points]))[:, 0]
    return SeatHistogram.from_seats(e.id, delta_points, [int(s) for s in seat_counts])


def sorted_shares(g: Geography, plan: Plan, e: Election) -> tuple[float, ...]:
    """District Republican shares in ascending order (rank 1 = most Democratic)."""
    return tuple(sorted(district_shares(g, plan, e).rep_shares))


def _median_sorted(values: Sequence[float]) -> float:
    n = len(values)
    mid = n // 2
    if n % 2:
        return float(values[mid])
    return 0.5 * (values[mid - 1] + values[mid])


def _hinges(values: Sequence[float]) -> tuple[float, float]:
    """Quartiles as medians of the lower and upper halves, excluding the
    middle element when the count is odd."""
    n = len(values)
    half = n // 2
    return _median_sorted(values[:half]), _median_sorted(values[n - half :])


@dataclass(frozen=True)
class MarginalBoxStats:
    """Box-plot statistics of the rank-sorted share marginals."""

    election_id: str
    n: int
    mean: tuple[float, ...]
    q1: tuple[float, ...]
    median: tuple[float, ...]
    q3: tuple[float, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def num_ranks(self) -> int:
        return len(self.mean)


def marginal_box_stats(g: Geography, plans, e: Election) -> MarginalBoxStats:
    """Across the ensemble, box stats of the r-th most Democratic share.

    Whiskers reach the furthest observation within 1.5 interquartile ranges
    of the nearer quartile.
    """
    shares = np.sort(shares_matrix(g, plans, e), axis=1)
    n, k = shares.shape
    means, q1s, meds, q3s, los, his = [], [], [], [], [], []
    for r in range(k):
        col = np.sort(shares[:, r])
        q1, q3 = _hinges(col)
        iqr = q3 - q1
        inside = col[(col >= q1 - 1.5 * iqr) & (col <= q3 + 1.5 * iqr)]
        means.append(float(col.mean()))
        q1s.append(float(q1))
        meds.append(float(_median_sorted(col)))
        q3s.append(float(q3))
        los.append(float(inside.min()))
        his.append(float(inside.max()))
    return MarginalBoxStats(
        election_id=e.id,
        n=n,
        mean=tuple(means),
        q1=tuple(q1s),
        median=tuple(meds),
        q3=tuple(q3s),
        lo=tuple(los),
        hi=tuple(his),
    )


def gerrymandering_index(
    g: Geography, plan: Plan, plans, e: Election
) -> tuple[float, float]:
    """Distance of the plan's sorted shares from the ensemble rank means.

    Returns (index, percentile): the root of summed squared deviations, and
    the percent of ensemble plans with a strictly larger index.
    """
    matrix = np.sort(shares_matrix(g, plans, e), axis=1)
    means = matrix.mean(axis=0)
    devs = matrix - means[None, :]
    member_gi = np.sqrt((devs * devs).sum(axis=1))
    own = np.asarray(sorted_shares(g, plan, e)) - means
    gi = float(math.sqrt(float((own * own).sum())))
    pct = 100.0 * float(np.count_nonzero(member_gi > gi)) / len(member_gi)
    return gi, pct


def _ramp(shares: np.ndarray, width: float) -> np.ndarray:
    return np.clip((shares - 0.5) / width + 0.5, 0.0, 1.0)


def representativeness_index(
    g: Geography, plan: Plan, plans, e: Election, ramp_width: float = 0.02
) -> tuple[float, float]:
    """Deviation of continuous seats from the ensemble mean, with percentile.

    Continuous seats replace the seat step function with a linear ramp of the
    given half-window, so a 52-48 district counts fully and a 50.6-49.4
    district counts fractionally.
    """
    matrix = shares_matrix(g, plans, e)
    member_cont = _ramp(matrix, ramp_width).sum(axis=1)
    center = float(member_cont.mean())
    own = float(_ramp(np.asarray(sorted_shares(g, plan, e)), ramp_width).sum())
    ri = abs(own - center)
    member_ri = np.abs(member_cont - center)
    pct = 100.0 * float(np.count_nonzero(member_ri > ri)) / len(member_ri)
    return ri, pct


class ShiftTable:
    """Precomputed ensemble seat distributions across a shift grid.

    The shift for each grid target is shared by every plan: it moves the
    election's statewide Republican percentage to the target, and each
    district share moves by the same amount.
    """

    def __init__(self, g: Geography, plans, e: Election, grid: ShiftGrid):
        plans = _plan_list(plans)
        self.grid = grid
        self.election = e
        self.statewide = statewide_rep_fraction(e)
        self.deltas = np.asarray([t - 100.0 * self.statewide for t in grid.targets])
        self.num_districts = g.num_districts
        self.n = len(plans)
        self._g = g
        shares = shares_matrix(g, plans, e)
        self.seats = _seats_for_shares(shares, self.deltas)
        k = g.num_districts
        t = len(grid.targets)
        counts = np.zeros((t, k + 1), dtype=np.int64)
        for j in range(t):
            counts[j] = np.bincount(self.seats[:, j], minlength=k + 1)
        self.counts = counts
        # fraction of members with seats >= v (and <= v), indexed [shift, v]
        suffix = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]
        prefix = np.cumsum(counts, axis=1)
        self.ge_frac = suffix / self.n
        self.le_frac = prefix / self.n
        self.histograms = [
            SeatHistogram(
                election_id=e.id,
                delta_points=float(self.deltas[j]),
                counts={int(v): int(c) for v, c in enumerate(counts[j]) if c > 0},
                n=self.n,
                mean=float(self.seats[:, j].mean()),
                sd=float(self.seats[:, j].std()),
            )
            for j in range(t)
        ]
        self.log_prob = np.asarray(
            [[math.log(h.prob(v)) for v in range(k + 1)] for h in self.histograms]
        )

    def plan_seats(self, plan: Plan) -> np.ndarray:
        shares = np.asarray(district_shares(self._g, plan, self.election).rep_shares)
        return _seats_for_shares(shares[None, :], self.deltas)[0]

    def min_exceedance(self, plan_seats: np.ndarray) -> tuple[float, float]:
        """Worst-case tail probabilities over the grid, Republican and Democratic."""
        cols = np.arange(len(self.deltas))
        rep = float(self.ge_frac[cols, plan_seats].min())
        dem = float(self.le_frac[cols, plan_seats].min())
        return rep, dem

    def member_min_exceedance(self) -> tuple[np.ndarray, np.ndarray]:
        cols = np.arange(len(self.deltas))
        rep = self.ge_frac[cols[None, :], self.seats].min(axis=1)
        dem = self.le_frac[cols[None, :], self.seats].min(axis=1)
        return rep, dem

    def surprisal(self, plan_seats: np.ndarray) -> float:
        cols = np.arange(len(self.deltas))
        return float(-self.log_prob[cols, plan_seats].mean())

    def member_surprisal(self) -> np.ndarray:
        cols = np.arange(len(self.deltas))
        return -self.log_prob[cols[None, :], self.seats].mean(axis=1)


def seat_surprisal(
    g: Geography, plan: Plan, plans, e: Election, grid: ShiftGrid | None = None
) -> tuple[float, float]:
    """Mean negative log probability of the plan's seat counts over the grid.

    Returns (surprisal, percentile): the percentile is the percent of
    ensemble plans whose own surprisal is at most the plan's.
    """
    table = ShiftTable(g, plans, e, grid or ShiftGrid.default())
    h = table.surprisal(table.plan_seats(plan))
    member = table.member_surprisal()
    pct = 100.0 * float(np.count_nonzero(member <= h)) / len(member)
    return h, pct


@dataclass(frozen=True)
class EnvelopeRow:
    shift: float
    mean: float
    sd: float
    p5: float
    p95: float
    min: int
    max: int
    ref_seats: int


def shift_envelope(
    g: Geography,
    plans,
    e: Election,
    reference_plan: Plan,
    half_range: float = 10.0,
    step: float = 0.5,
) -> list[EnvelopeRow]:
    """Ensemble seat spread and the reference plan's seats across shifts.

    Shifts are deltas in percentage points relative to the actual outcome,
    from -half_range to +half_range inclusive.
    """
    count = int(round(2 * half_range / step))
    deltas = np.asarray([-half_range + i * step for i in range(count + 1)])
    shares = shares_matrix(g, plans, e)
    seats = _seats_for_shares(shares, deltas)
    ref_shares = np.asarray(district_shares(g, reference_plan, e).rep_shares)
    ref_seats = _seats_for_shares(ref_shares[None, :], deltas)[0]
    rows = []
    for j, delta in enumerate(deltas):
        col = seats[:, j]
        rows.append(
            EnvelopeRow(
                shift=float(delta),
                mean=float(col.mean()),
                sd=float(col.std()),
                p5=float(np.percentile(col, 5)),
                p95=float(np.percentile(col, 95)),
                min=int(col.min()),
                max=int(col.max()),
                ref_seats=int(ref_seats[j]),
            )
        )
    return rows


def _majority_thresholds(g: Geography, plans, e: Election) -> np.ndarray:
    """Per-plan smallest delta (exclusive) giving a Republican seat majority."""
    if g.num_districts % 2 == 0:
        raise ValidationError("parity analysis needs an odd number of districts")
    m = (g.num_districts + 1) // 2
    shares = np.sort(shares_matrix(g, plans, e), axis=1)
    pivot = shares[:, g.num_districts - m]
    return 100.0 * (0.5 - pivot)


def ensemble_parity_shift(
    g: Geography,
    plans,
    e: Election,
    grid_step: float = 0.01,
    max_delta: float = 50.0,
) -> float:
    """Delta that balances Republican and Democratic majorities in the ensemble.

    Returns the largest delta on the grid at which no more than half the
    ensemble plans have a Republican seat majority; one grid step higher,
    more than half do (unless the crossing lies beyond the grid).
    """
    thresholds = np.sort(_majority_thresholds(g, plans, e))
    n = len(thresholds)
    steps = int(round(max_delta / grid_step))

    def majorities(delta: float) -> int:
        return int(np.searchsorted(thresholds, delta, side="left"))

    lo, hi = -steps, steps
    if majorities(lo * grid_step) > n / 2:
        raise ValidationError(f"parity shift lies below -{max_delta} points")
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if majorities(mid * grid_step) <= n / 2:
            lo = mid
        else:
            hi = mid - 1
    return lo * grid_step


def plan_parity_fraction(g: Geography, plan: Plan, e: Election) -> float:
    """Statewide Republican fraction at which the plan's majority flips.

    Closed form: the actual statewide fraction plus the pivotal district's
    distance from one half, where the pivotal district is the median by
    Republican share.
    """
    if g.num_districts % 2 == 0:
        raise ValidationError("parity analysis needs an odd number of districts")
    m = (g.num_districts + 1) // 2
    shares = sorted_shares(g, plan, e)
    pivot = shares[g.num_districts - m]
    return statewide_rep_fraction(e) + (0.5 - pivot)


@dataclass(frozen=True)
class IndexReport:
    """All outlier statistics for one plan against one ensemble and election."""

    election_id: str
    rep_seats: int
    dem_seats: int
    gerrymandering_index: float
    gerrymandering_percentile: float
    representativeness_index: float
    representativeness_percentile: float
    min_exceedance_rep: float
    min_exceedance_dem: float
    rep_favoritism_percentile: float
    dem_favoritism_percentile: float
    seat_surprisal: float
    surprisal_percentile: float
    centered_surprisal_percentile: float
    centered_rep_favoritism_percentile: float
    centered_dem_favoritism_percentile: float
    parity_fraction: float | None

    def as_dict(self) -> dict:
        return {
            "election_id": self.election_id,
            "rep_seats": self.rep_seats,
            "dem_seats": self.dem_seats,
            "gerrymandering_index": self.gerrymandering_index,
            "gerrymandering_percentile": self.gerrymandering_percentile,
            "representativeness_index": self.representativeness_index,
            "representativeness_percentile": self.representativeness_percentile,
            "min_exceedance_rep": self.min_exceedance_rep,
            "min_exceedance_dem": self.min_exceedance_dem,
            "rep_favoritism_percentile": self.rep_favoritism_percentile,
            "dem_favoritism_percentile": self.dem_favoritism_percentile,
            "seat_surprisal": self.seat_surprisal,
            "surprisal_percentile": self.surprisal_percentile,
            "centered_surprisal_percentile": self.centered_surprisal_percentile,
            "centered_rep_favoritism_percentile": self.centered_rep_favoritism_percentile,
            "centered_dem_favoritism_percentile": self.centered_dem_favoritism_percentile,
            "parity_fraction": self.parity_fraction,
        }


def _favoritism(table: ShiftTable, plan_seats: np.ndarray) -> tuple[float, float, float, float]:
    """(ell_rep, ell_dem, percent with larger ell_rep, percent with larger ell_dem)."""
    ell_rep, ell_dem = table.min_exceedance(plan_seats)
    member_rep, member_dem = table.member_min_exceedance()
    n = table.n
    l_rep = 100.0 * float(np.count_nonzero(member_rep > ell_rep)) / n
    l_dem = 100.0 * float(np.count_nonzero(member_dem > ell_dem)) / n
    return ell_rep, ell_dem, l_rep, l_dem


def index_report(
    g: Geography,
    plan: Plan,
    plans,
    e: Election,
    grid: ShiftGrid | None = None,
    ramp_width: float = 0.02,
    variant_half_width: float = 7.5,
    variant_step: float = 0.5,
) -> IndexReport:
    """Assemble the full outlier report for one plan."""
    plans = _plan_list(plans)
    grid = grid or ShiftGrid.default()
    gi, gi_pct = gerrymandering_index(g, plan, plans, e)
    ri, ri_pct = representativeness_index(g, plan, plans, e, ramp_width)

    table = ShiftTable(g, plans, e, grid)
    own_seats = table.plan_seats(plan)
    ell_rep, ell_dem, l_rep, l_dem = _favoritism(table, own_seats)
    h = table.surprisal(own_seats)
    member_h = table.member_surprisal()
    h_pct = 100.0 * float(np.count_nonzero(member_h <= h)) / table.n

    centered_grid = ShiftGrid.centered(
        100.0 * statewide_rep_fraction(e), variant_half_width, variant_step
    )
    centered = ShiftTable(g, plans, e, centered_grid)
    c_seats = centered.plan_seats(plan)
    _, _, c_l_rep, c_l_dem = _favoritism(centered, c_seats)
    c_h = centered.surprisal(c_seats)
    c_member_h = centered.member_surprisal()
    c_h_pct = 100.0 * float(np.count_nonzero(c_member_h <= c_h)) / centered.n

    shares = district_shares(g, plan, e).rep_shares
    rep = sum(1 for s in shares if s > 0.5)
    parity = (
        plan_parity_fraction(g, plan, e) if g.num_districts % 2 == 1 else None
    )
    return IndexReport(
        election_id=e.id,
        rep_seats=rep,
        dem_seats=g.num_districts - rep,
        gerrymandering_index=gi,
        gerrymandering_percentile=gi_pct,
        representativeness_index=ri,
        representativeness_percentile=ri_pct,
        min_exceedance_rep=ell_rep,
        min_exceedance_dem=ell_dem,
        rep_favoritism_percentile=l_rep,
        dem_favoritism_percentile=l_dem,
        seat_surprisal=h,
        surprisal_percentile=h_pct,
        centered_surprisal_percentile=c_h_pct,
        centered_rep_favoritism_percentile=c_l_rep,
        centered_dem_favoritism_percentile=c_l_dem,
        parity_fraction=parity,
    )
