"""Ward-level election data: tallies, uniform shifts, and vote interpolation.

Wards whose race was unopposed carry no usable two-party signal; their vote
counts are reconstructed from opposed wards using reference elections held on
the same wards.  For each unopposed ward and reference, three short local
regressions are fit over up to four neighboring opposed wards: turnout
against reference turnout, and each party's vote share against its reference
share.  Estimates are averaged across references, rounded, and clamped.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from planchain.geography import Geography, ParseError, Plan, ValidationError


class InterpolationError(Exception):
    """Interpolation preconditions violated (bad flags, unusable data)."""


@dataclass(frozen=True)
class Election:
    """Per-ward totals and two-party counts for one contest.

    ``opposed[i]`` is True when ward i had a contested race, i.e. its counts
    are trustworthy.  ``interpolated`` marks wards whose counts were filled in
    by ``interpolate_election``.
    """

    id: str
    total: tuple[int, ...]
    dem: tuple[int, ...]
    rep: tuple[int, ...]
    opposed: tuple[bool, ...]
    interpolated: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        n = len(self.total)
        if not (len(self.dem) == len(self.rep) == len(self.opposed) == n):
            raise ValidationError(f"election {self.id}: ragged columns")
        if self.interpolated is not None and len(self.interpolated) != n:
            raise ValidationError(f"election {self.id}: ragged interpolated mask")
        for i in range(n):
            if min(self.total[i], self.dem[i], self.rep[i]) < 0:
                raise ValidationError(f"election {self.id}, ward {i}: negative votes")
            if self.dem[i] + self.rep[i] > self.total[i]:
                raise ValidationError(
                    f"election {self.id}, ward {i}: two-party votes exceed total"
                )

    @property
    def num_wards(self) -> int:
        return len(self.total)

    @property
    def unopposed_wards(self) -> tuple[int, ...]:
        return tuple(i for i, ok in enumerate(self.opposed) if not ok)


@dataclass(frozen=True)
class DistrictTally:
    """Two-party vote totals per district for one election under one plan."""

    election_id: str
    rep_votes: tuple[int, ...]
    dem_votes: tuple[int, ...]

    @cached_property
    def rep_shares(self) -> tuple[float, ...]:
        shares = []
        for d, (r, m) in enumerate(zip(self.rep_votes, self.dem_votes)):
            pair = r + m
            if pair == 0:
                raise ValidationError(
                    f"election {self.election_id}: district {d} has no two-party votes"
                )
            shares.append(r / pair)
        return tuple(shares)


@dataclass(frozen=True)
class ShiftedElection:
    """District Republican shares after a uniform shift of ``delta_points``."""

    election_id: str
    delta_points: float
    rep_shares: tuple[float, ...]


def statewide_rep_fraction(e: Election | DistrictTally) -> float:
    """Republican fraction of the statewide two-party vote."""
    if isinstance(e, DistrictTally):
        rep, dem = sum(e.rep_votes), sum(e.dem_votes)
    else:
        rep, dem = sum(e.rep), sum(e.dem)
    if rep + dem == 0:
        raise ValidationError("no two-party votes cast")
    return rep / (rep + dem)


def district_shares(g: Geography, plan: Plan, e: Election) -> DistrictTally:
    """Aggregate ward votes into district tallies under the plan."""
    if e.num_wards != g.num_wards:
        raise ValidationError(
            f"election {e.id} covers {e.num_wards} wards, geography has {g.num_wards}"
        )
    k = g.num_districts
    rep = [0] * k
    dem = [0] * k
    for i, d in enumerate(plan.assignment):
        rep[d] += e.rep[i]
        dem[d] += e.dem[i]
    return DistrictTally(election_id=e.id, rep_votes=tuple(rep), dem_votes=tuple(dem))


def shift_election(
    t: DistrictTally,
    delta_points: float | None = None,
    target_percent: float | None = None,
) -> ShiftedElection:
    """Shift every district's Republican share uniformly, clamped to [0, 1].

    Exactly one of ``delta_points`` (percentage points added to every share)
    or ``target_percent`` (the shift is chosen so the statewide Republican
    percentage lands on the target) must be given.
    """
    if (delta_points is None) == (target_percent is None):
        raise ValueError("give exactly one of delta_points or target_percent")
    if target_percent is not None:
        delta_points = target_percent - 100.0 * statewide_rep_fraction(t)
    shares = tuple(
        min(1.0, max(0.0, s + delta_points / 100.0)) for s in t.rep_shares
    )
    return ShiftedElection(
        election_id=t.election_id, delta_points=delta_points, rep_shares=shares
    )


def seats(
    t: DistrictTally | ShiftedElection | Sequence[float], delta_points: float = 0.0
) -> tuple[int, int]:
    """(Republican, Democratic) seat counts; a share of exactly 0.5 is Democratic."""
    shares = t.rep_shares if hasattr(t, "rep_shares") else t
    shift = delta_points / 100.0
    rep = sum(1 for s in shares if s + shift > 0.5)
    return rep, len(shares) - rep


def _check_reference(ref: Election, n: int) -> None:
    if ref.num_wards != n:
        raise ValidationError(f"reference {ref.id}: ward count mismatch")
    for i, total in enumerate(ref.total):
        if total <= 0:
            raise ValidationError(f"reference {ref.id}, ward {i}: zero turnout")


def _fit_at(points: Sequence[tuple[float, float]], x: float) -> float:
    """Least-squares line through the points, evaluated at x.

    Falls back to the mean response when the abscissas do not vary (also the
    single-point case), which is the least-squares answer at the shared x.
    """
    n = len(points)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_mean = sum(xs) / n
    y_mean = sum(ys) / n
    var = sum((v - x_mean) ** 2 for v in xs)
    if var <= 0.0:
        return y_mean
    cov = sum((u - x_mean) * (v - y_mean) for u, v in zip(xs, ys))
    slope = cov / var
    return y_mean + slope * (x - x_mean)


def _neighbor_points(
    pairs: Sequence[tuple[float, float]], x: float
) -> list[tuple[float, float]]:
    """Up to two points on each side of x in the sorted pair list."""
    keys = [p[0] for p in pairs]
    i = bisect_left(keys, x)
    return list(pairs[max(0, i - 2) : i]) + list(pairs[i : i + 2])


class _ReferencePairs:
    """Sorted regression pair lists for one (target, reference) combination."""

    def __init__(self, target: Election, ref: Election, good: Sequence[int]):
        self.ref = ref
        tot, rep, dem = [], [], []
        for j in good:
            tot.append((float(ref.total[j]), float(target.total[j])))
            if target.total[j] > 0:
                rho_rep = ref.rep[j] / ref.total[j]
                rho_dem = ref.dem[j] / ref.total[j]
                rep.append((rho_rep, target.rep[j] / target.total[j]))
                dem.append((rho_dem, target.dem[j] / target.total[j]))
        self.tot = sorted(tot)
        self.rep = sorted(rep)
        self.dem = sorted(dem)

    def estimate(self, i: int, min_points: int) -> tuple[float, float, float]:
        """Raw (total, rep, dem) vote estimates for ward i from this reference."""
        ref = self.ref
        u_tot = float(ref.total[i])
        rho_rep = ref.rep[i] / ref.total[i]
        rho_dem = ref.dem[i] / ref.total[i]
        picked_tot = _neighbor_points(self.tot, u_tot)
        picked_rep = _neighbor_points(self.rep, rho_rep)
        picked_dem = _neighbor_points(self.dem, rho_dem)
        for picked in (picked_tot, picked_rep, picked_dem):
            if len(picked) < min_points:
                raise InterpolationError(
                    f"reference {ref.id}: fewer than {min_points} usable neighbor points"
                )
        v_tot = _fit_at(picked_tot, u_tot)
        share_rep = _fit_at(picked_rep, rho_rep)
        share_dem = _fit_at(picked_dem, rho_dem)
        # The floor on the first term is deliberate, asymmetry included;
        # downstream vote totals were tuned against this exact form.
        v_rep = (math.floor(share_rep * v_tot) + (v_tot - share_dem * v_tot)) / 2.0
        v_dem = (share_dem * v_tot + (v_tot - share_rep * v_tot)) / 2.0
        return v_tot, v_rep, v_dem


def _round_votes(tot: float, rep: float, dem: float) -> tuple[int, int, int]:
    """Round half up, clamp at zero, and keep the total covering both parties."""
    out = [max(0, math.floor(x + 0.5)) for x in (tot, rep, dem)]
    out[0] = max(out[0], out[1] + out[2])
    return out[0], out[1], out[2]


def _estimate_ward(
    i: int,
    pair_sets: Sequence[_ReferencePairs],
    min_points: int,
) -> tuple[int, int, int]:
    estimates = [pairs.estimate(i, min_points) for pairs in pair_sets]
    n = len(estimates)
    tot = sum(e[0] for e in estimates) / n
    rep = sum(e[1] for e in estimates) / n
    dem = sum(e[2] for e in estimates) / n
    return _round_votes(tot, rep, dem)


def interpolate_election(
    target: Election, references: Sequence[Election], min_points: int = 2
) -> Election:
    """Fill in vote counts for every unopposed ward of ``target``.

    Opposed wards pass through untouched; the result carries an
    ``interpolated`` mask marking the filled wards.  Idempotent when every
    ward is opposed.  References must have positive turnout everywhere.
    """
    if not references:
        raise InterpolationError("at least one reference election is required")
    n = target.num_wards
    for ref in references:
        _check_reference(ref, n)
    good = [i for i in range(n) if target.opposed[i]]
    bad = [i for i in range(n) if not target.opposed[i]]
    if not bad:
        return target
    if len(good) < 2:
        raise InterpolationError(
            f"election {target.id}: needs at least 2 opposed wards, has {len(good)}"
        )
    pair_sets = [_ReferencePairs(target, ref, good) for ref in references]
    total = list(target.total)
    dem = list(target.dem)
    rep = list(target.rep)
    mask = [False] * n
    for i in bad:
        total[i], rep[i], dem[i] = _estimate_ward(i, pair_sets, min_points=min_points)
        mask[i] = True
    return Election(
        id=target.id,
        total=tuple(total),
        dem=tuple(dem),
        rep=tuple(rep),
        opposed=target.opposed,
        interpolated=tuple(mask),
    )


@dataclass(frozen=True)
class ReferenceSelection:
    """Outcome of the reference-subset search."""

    ids: tuple[str, ...]
    references: tuple[Election, ...]
    squared_error: float
    errors: dict[tuple[str, ...], float]


def _holdout_error(target: Election, refs: Sequence[Election], good: Sequence[int]) -> float:
    """Total squared error predicting each opposed ward from the others."""
    error = 0.0
    for i in good:
        others = [j for j in good if j != i]
        pair_sets = [_ReferencePairs(target, ref, others) for ref in refs]
        tot, rep, dem = _estimate_ward(i, pair_sets, min_points=1)
        error += (
            (tot - target.total[i]) ** 2
            + (rep - target.rep[i]) ** 2
            + (dem - target.dem[i]) ** 2
        )
    return error


def select_reference_set(
    target: Election,
    candidates: Sequence[Election],
    max_size: int = 3,
) -> ReferenceSelection:
    """Choose the reference subset that best predicts held-out opposed wards.

    Every nonempty subset of up to ``max_size`` candidates is scored by the
    squared error of leave-one-out predictions on the opposed wards, over all
    three vote fields.  Ties go to the smaller subset, then to lexicographic
    id order.
    """
    if not candidates:
        raise InterpolationError("no candidate reference elections")
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    ids = [c.id for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValidationError("candidate reference ids are not unique")
    n = target.num_wards
    for c in candidates:
        _check_reference(c, n)
    good = [i for i in range(n) if target.opposed[i]]
    if len(good) < 2:
        raise InterpolationError(
            f"election {target.id}: needs at least 2 opposed wards, has {len(good)}"
        )
    by_id = sorted(candidates, key=lambda c: c.id)
    best: tuple[tuple[str, ...], float] | None = None
    errors: dict[tuple[str, ...], float] = {}
    for size in range(1, min(max_size, len(by_id)) + 1):
        for subset in combinations(by_id, size):
            key = tuple(c.id for c in subset)
            err = _holdout_error(target, subset, good)
            errors[key] = err
            if best is None or err < best[1]:
                best = (key, err)
    chosen_ids, chosen_err = best
    chosen = tuple(c for c in by_id if c.id in chosen_ids)
    return ReferenceSelection(
        ids=chosen_ids, references=chosen, squared_error=chosen_err, errors=errors
    )


VOTE_COLUMNS = ("election_id", "ward_id", "total", "dem", "rep", "opposed")


def load_elections(path: str, source_ids: Sequence[str]) -> dict[str, Election]:
    """Read a votes CSV holding one or more elections over the given wards."""
    index_of = {sid: i for i, sid in enumerate(source_ids)}
    n = len(source_ids)
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        missing = [c for c in VOTE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        has_interp = "interpolated" in reader.fieldnames
        data: dict[str, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            eid = row["election_id"].strip()
            sid = row["ward_id"].strip()
            if sid not in index_of:
                raise ValidationError(f"{where}: unknown ward id {sid!r}")
            entry = data.setdefault(
                eid,
                {
                    "total": [None] * n,
                    "dem": [None] * n,
                    "rep": [None] * n,
                    "opposed": [None] * n,
                    "interpolated": [False] * n,
                },
            )
            i = index_of[sid]
            if entry["total"][i] is not None:
                raise ValidationError(f"{where}: duplicate row for ward {sid!r}")
            try:
                entry["total"][i] = int(row["total"])
                entry["dem"][i] = int(row["dem"])
                entry["rep"][i] = int(row["rep"])
                flag = int(row["opposed"])
                if has_interp:
                    entry["interpolated"][i] = bool(int(row["interpolated"] or 0))
            except ValueError as exc:
                raise ParseError(f"{where}: bad numeric field: {exc}") from exc
            if flag not in (0, 1):
                raise ParseError(f"{where}: opposed must be 0 or 1")
            entry["opposed"][i] = bool(flag)
    elections: dict[str, Election] = {}
    for eid, entry in data.items():
        holes = [source_ids[i] for i, v in enumerate(entry["total"]) if v is None]
        if holes:
            raise ValidationError(f"{path}: election {eid} missing wards {holes[:5]}")
        mask = tuple(entry["interpolated"]) if has_interp else None
        if mask is not None and not any(mask):
            mask = None
        elections[eid] = Election(
            id=eid,
            total=tuple(entry["total"]),
            dem=tuple(entry["dem"]),
            rep=tuple(entry["rep"]),
            opposed=tuple(entry["opposed"]),
            interpolated=mask,
        )
    return elections


def save_elections(
    path: str,
    elections: Iterable[Election] | Mapping[str, Election],
    source_ids: Sequence[str],
) -> None:
    """Write elections to the votes CSV format, in the order given."""
    if isinstance(elections, Mapping):
        elections = elections.values()
    elections = list(elections)
    with_mask = any(e.interpolated is not None for e in elections)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = list(VOTE_COLUMNS) + (["interpolated"] if with_mask else [])
        writer.writerow(header)
        for e in elections:
            if e.num_wards != len(source_ids):
                raise ValidationError(f"election {e.id}: ward count mismatch")
            for i, sid in enumerate(source_ids):
                row = [
                    e.id,
                    sid,
                    e.total[i],
                    e.dem[i],
                    e.rep[i],
                    int(e.opposed[i]),
                ]
                if with_mask:
                    row.append(int(e.interpolated[i]) if e.interpolated is not None else 0)
                writer.writerow(row)
