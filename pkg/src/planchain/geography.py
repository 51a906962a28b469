"""Ward adjacency graphs, districting plans, and contiguity queries.

A geography is an undirected graph of wards with shared boundary lengths on
the edges, plus per-ward census fields.  A plan assigns every ward to one of
``num_districts`` districts; a valid plan has every district nonempty and
contiguous.  Ward ids are dense 0-based integers internally; external string
ids from input files are mapped at load time and kept on the geography.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence


class GeographyError(Exception):
    """Base class for geography input problems."""


class ParseError(GeographyError):
    """A file could not be parsed (bad header, bad row, bad literal)."""


class ValidationError(GeographyError):
    """Parsed data violates a structural requirement."""


WARD_COLUMNS = (
    "ward_id",
    "county",
    "town",
    "population",
    "black_pop",
    "hisp_pop",
    "area",
    "outer_boundary",
)
ADJACENCY_COLUMNS = ("ward_a", "ward_b", "shared_length")


@dataclass(frozen=True)
class Ward:
    """One census ward with the fields the score function consumes."""

    id: int
    county: str
    town: str
    population: int
    black_population: int
    hispanic_population: int
    area: float
    outer_boundary: float


@dataclass(frozen=True)
class Plan:
    """District labels for every ward, labels in ``range(num_districts)``."""

    assignment: tuple[int, ...]

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "Plan":
        return cls(tuple(int(x) for x in labels))

    def __len__(self) -> int:
        return len(self.assignment)


@dataclass
class Geography:
    """Immutable ward graph; built by ``build_geography`` or ``load_geography``."""

    wards: tuple[Ward, ...]
    edges: tuple[tuple[int, int, float], ...]
    num_districts: int
    source_ids: tuple[str, ...]
    reference_plan: Plan | None = None

    @cached_property
    def num_wards(self) -> int:
        return len(self.wards)

    @cached_property
    def populations(self) -> tuple[int, ...]:
        return tuple(w.population for w in self.wards)

    @cached_property
    def black_populations(self) -> tuple[int, ...]:
        return tuple(w.black_population for w in self.wards)

    @cached_property
    def hispanic_populations(self) -> tuple[int, ...]:
        return tuple(w.hispanic_population for w in self.wards)

    @cached_property
    def areas(self) -> tuple[float, ...]:
        return tuple(w.area for w in self.wards)

    @cached_property
    def outer_boundaries(self) -> tuple[float, ...]:
        return tuple(w.outer_boundary for w in self.wards)

    @cached_property
    def county_names(self) -> tuple[str, ...]:
        return tuple(sorted({w.county for w in self.wards}))

    @cached_property
    def town_names(self) -> tuple[str, ...]:
        return tuple(sorted({w.town for w in self.wards}))

    @cached_property
    def county_codes(self) -> tuple[int, ...]:
        index = {name: i for i, name in enumerate(self.county_names)}
        return tuple(index[w.county] for w in self.wards)

    @cached_property
    def town_codes(self) -> tuple[int, ...]:
        index = {name: i for i, name in enumerate(self.town_names)}
        return tuple(index[w.town] for w in self.wards)

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Per-ward list of (neighbor id, shared boundary length)."""
        lists: list[list[tuple[int, float]]] = [[] for _ in self.wards]
        for a, b, length in self.edges:
            lists[a].append((b, length))
            lists[b].append((a, length))
        return tuple(tuple(sorted(lst)) for lst in lists)

    @cached_property
    def total_population(self) -> int:
        return sum(self.populations)

    @cached_property
    def ideal_population(self) -> float:
        return self.total_population / self.num_districts


def build_geography(
    wards: Sequence[Ward],
    edges: Sequence[tuple[int, int, float]],
    num_districts: int,
    source_ids: Sequence[str] | None = None,
    reference_labels: Sequence[int] | None = None,
) -> Geography:
    """Assemble and validate a geography from in-memory parts.

    ``edges`` lists each undirected adjacency exactly once.  Raises
    ``ValidationError`` for structural problems: bad ward numbering, self
    loops, duplicate or dangling edges, nonpositive lengths, a disconnected
    graph, or an invalid reference plan.
    """
    n = len(wards)
    if n == 0:
        raise ValidationError("geography has no wards")
    if not 1 <= num_districts <= n:
        raise ValidationError(
            f"num_districts must be in [1, {n}], got {num_districts}"
        )
    for i, w in enumerate(wards):
        if w.id != i:
            raise ValidationError(f"ward ids must be dense 0-based, ward {i} has id {w.id}")
        if w.population < 0 or w.black_population < 0 or w.hispanic_population < 0:
            raise ValidationError(f"ward {i}: negative population field")
        if max(w.black_population, w.hispanic_population) > w.population:
            raise ValidationError(f"ward {i}: subgroup population exceeds total")
        if w.area <= 0:
            raise ValidationError(f"ward {i}: area must be positive")
        if w.outer_boundary < 0:
            raise ValidationError(f"ward {i}: negative outer boundary")
    seen: set[tuple[int, int]] = set()
    for a, b, length in edges:
        if not (0 <= a < n and 0 <= b < n):
            raise ValidationError(f"edge ({a}, {b}) references an unknown ward")
        if a == b:
            raise ValidationError(f"self loop on ward {a}")
        if length <= 0:
            raise ValidationError(f"edge ({a}, {b}) has nonpositive shared length")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValidationError(f"duplicate edge ({a}, {b})")
        seen.add(key)

    if source_ids is None:
        source_ids = tuple(str(i) for i in range(n))
    geo = Geography(
        wards=tuple(wards),
        edges=tuple((a, b, float(length)) for a, b, length in edges),
        num_districts=num_districts,
        source_ids=tuple(source_ids),
    )
    if not _connected(geo):
        raise ValidationError("ward graph is not connected")
    if reference_labels is not None:
        plan = Plan.from_labels(reference_labels)
        check_plan(geo, plan)
        geo.reference_plan = plan
    return geo


def _connected(g: Geography) -> bool:
    seen = [False] * g.num_wards
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        x = stack.pop()
        for nbr, _ in g.neighbors[x]:
            if not seen[nbr]:
                seen[nbr] = True
                count += 1
                stack.append(nbr)
    return count == g.num_wards


def check_plan(g: Geography, plan: Plan) -> None:
    """Raise ``ValidationError`` unless ``plan`` is valid for ``g``."""
    if len(plan) != g.num_wards:
        raise ValidationError(
            f"plan covers {len(plan)} wards, geography has {g.num_wards}"
        )
    used = set(plan.assignment)
    for d in used:
        if not 0 <= d < g.num_districts:
            raise ValidationError(f"district label {d} out of range")
    if len(used) != g.num_districts:
        raise ValidationError(
            f"plan uses {len(used)} districts, expected {g.num_districts}"
        )
    for d in range(g.num_districts):
        if not is_contiguous(g, plan, d):
            raise ValidationError(f"district {d} is not contiguous")


def is_contiguous(g: Geography, plan: Plan, district: int) -> bool:
    """True when the district's wards induce a connected, nonempty subgraph."""
    labels = plan.assignment
    members = [i for i in range(g.num_wards) if labels[i] == district]
    if not members:
        return False
    target = len(members)
    seen = {members[0]}
    stack = [members[0]]
    count = 1
    while stack:
        x = stack.pop()
        for nbr, _ in g.neighbors[x]:
            if labels[nbr] == district and nbr not in seen:
                seen.add(nbr)
                count += 1
                stack.append(nbr)
    return count == target


def canonical_assignment(labels: Sequence[int]) -> tuple[int, ...]:
    """Relabel districts in order of first appearance, i.e. by smallest ward id.

    Two assignments describe the same partition exactly when their canonical
    forms are equal; the canonical form of a canonical form is itself.
    """
    mapping: dict[int, int] = {}
    out = []
    for label in labels:
        code = mapping.get(label)
        if code is None:
            code = len(mapping)
            mapping[label] = code
        out.append(code)
    return tuple(out)


def conflicted_wards(g: Geography, plan: Plan) -> list[tuple[int, int]]:
    """Distinct (ward, adjacent district) pairs where the districts differ.

    This is the proposal support set for the sampler: each pair is a candidate
    single-ward move.  Ordering is deterministic, sorted by (ward, district).
    """
    labels = plan.assignment
    pairs: set[tuple[int, int]] = set()
    for a, b, _ in g.edges:
        la, lb = labels[a], labels[b]
        if la != lb:
            pairs.add((a, lb))
            pairs.add((b, la))
    return sorted(pairs)


@dataclass(frozen=True)
class DistrictAggregates:
    """Per-district totals, indexed by district label."""

    population: tuple[int, ...]
    black_population: tuple[int, ...]
    hispanic_population: tuple[int, ...]
    area: tuple[float, ...]
    perimeter: tuple[float, ...]
    ward_count: tuple[int, ...]


def district_aggregates(g: Geography, plan: Plan) -> DistrictAggregates:
    """Population, subgroup, area, and perimeter totals for every district.

    A district's perimeter is the length of cut edges on its boundary plus the
    outer boundary of its member wards, so summing perimeters over districts
    double counts every cut edge and counts each outer segment once.
    """
    k = g.num_districts
    labels = plan.assignment
    pop = [0] * k
    black = [0] * k
    hisp = [0] * k
    area = [0.0] * k
    perim = [0.0] * k
    count = [0] * k
    for i, w in enumerate(g.wards):
        d = labels[i]
        pop[d] += w.population
        black[d] += w.black_population
        hisp[d] += w.hispanic_population
        area[d] += w.area
        perim[d] += w.outer_boundary
        count[d] += 1
    for a, b, length in g.edges:
        la, lb = labels[a], labels[b]
        if la != lb:
            perim[la] += length
            perim[lb] += length
    return DistrictAggregates(
        population=tuple(pop),
        black_population=tuple(black),
        hispanic_population=tuple(hisp),
        area=tuple(area),
        perimeter=tuple(perim),
        ward_count=tuple(count),
    )


def _parse_int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ParseError(f"{where}: expected integer, got {value!r}") from exc


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ParseError(f"{where}: expected number, got {value!r}") from exc


def _read_rows(path: str, required: Sequence[str]) -> tuple[list[dict[str, str]], bool]:
    """Read a CSV, checking the required columns exist.  Returns (rows, has_ref)."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        rows = list(reader)
    return rows, "ref_district" in (reader.fieldnames or ())


def load_geography(
    wards_path: str,
    adjacency_path: str,
    num_districts: int | None = None,
) -> Geography:
    """Load a geography from a wards CSV and an adjacency CSV.

    The wards file may carry an optional ``ref_district`` column holding a
    reference plan; every ward must then be assigned (blank entries are
    rejected) and the labels are mapped to dense 0-based districts.  When
    ``num_districts`` is omitted it is inferred from the reference plan.
    """
    rows, has_ref = _read_rows(wards_path, WARD_COLUMNS)
    if not rows:
        raise ValidationError(f"{wards_path}: no wards")
    wards: list[Ward] = []
    source_ids: list[str] = []
    ref_raw: list[str] = []
    index_of: dict[str, int] = {}
    for lineno, row in enumerate(rows, start=2):
        where = f"{wards_path}:{lineno}"
        sid = row["ward_id"].strip()
        if sid in index_of:
            raise ValidationError(f"{where}: duplicate ward id {sid!r}")
        index_of[sid] = len(wards)
        source_ids.append(sid)
        wards.append(
            Ward(
                id=len(wards),
                county=row["county"].strip(),
                town=row["town"].strip(),
                population=_parse_int(row["population"], where),
                black_population=_parse_int(row["black_pop"], where),
                hispanic_population=_parse_int(row["hisp_pop"], where),
                area=_parse_float(row["area"], where),
                outer_boundary=_parse_float(row["outer_boundary"], where),
            )
        )
        if has_ref:
            ref_raw.append(row["ref_district"].strip())

    edge_rows, _ = _read_rows(adjacency_path, ADJACENCY_COLUMNS)
    edges: list[tuple[int, int, float]] = []
    for lineno, row in enumerate(edge_rows, start=2):
        where = f"{adjacency_path}:{lineno}"
        for col in ("ward_a", "ward_b"):
            if row[col].strip() not in index_of:
                raise ValidationError(f"{where}: unknown ward id {row[col]!r}")
        edges.append(
            (
                index_of[row["ward_a"].strip()],
                index_of[row["ward_b"].strip()],
                _parse_float(row["shared_length"], where),
            )
        )

    reference_labels: list[int] | None = None
    if has_ref:
        blank = [source_ids[i] for i, v in enumerate(ref_raw) if v == ""]
        if blank:
            raise ValidationError(
                f"{wards_path}: wards without a reference district: {blank[:5]}"
            )
        distinct = sorted(set(ref_raw), key=lambda v: (len(v), v))
        label_of = {v: i for i, v in enumerate(distinct)}
        reference_labels = [label_of[v] for v in ref_raw]
        if num_districts is None:
            num_districts = len(distinct)
        elif num_districts != len(distinct):
            raise ValidationError(
                f"reference plan has {len(distinct)} districts, expected {num_districts}"
            )
    if num_districts is None:
        raise ValidationError("num_districts not given and no reference plan to infer it")

    return build_geography(
        wards,
        edges,
        num_districts,
        source_ids=source_ids,
        reference_labels=reference_labels,
    )


def save_geography(g: Geography, wards_path: str, adjacency_path: str) -> None:
    """Write a geography back to the two-file CSV format."""
    with open(wards_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = list(WARD_COLUMNS)
        if g.reference_plan is not None:
            header.append("ref_district")
        writer.writerow(header)
        for i, w in enumerate(g.wards):
            row = [
                g.source_ids[i],
                w.county,
                w.town,
                w.population,
                w.black_population,
                w.hispanic_population,
                _format_number(w.area),
                _format_number(w.outer_boundary),
            ]
            if g.reference_plan is not None:
                row.append(g.reference_plan.assignment[i])
            writer.writerow(row)
    with open(adjacency_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(ADJACENCY_COLUMNS)
        for a, b, length in g.edges:
            writer.writerow([g.source_ids[a], g.source_ids[b], _format_number(length)])


def _format_number(x: float) -> str:
    """Render floats compactly so integral values round-trip as integers."""
    return str(int(x)) if float(x).is_integer() else repr(float(x))
