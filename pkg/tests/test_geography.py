import pytest

from planchain.geography import (
    Plan,
    ValidationError,
    Ward,
    build_geography,
    canonical_assignment,
    check_plan,
    conflicted_wards,
    district_aggregates,
    is_contiguous,
    load_geography,
    save_geography,
)
from planchain.oracle import SyntheticSpec, synth_geography


def _ward(i, pop=100, black=0, hisp=0, county="C", town="T", area=1.0, outer=0.0):
    return Ward(
        id=i,
        county=county,
        town=town,
        population=pop,
        black_population=black,
        hispanic_population=hisp,
        area=area,
        outer_boundary=outer,
    )


def _grid22():
    return synth_geography(SyntheticSpec(width=2, height=2, num_districts=2, seed=0))


def test_synthetic_outer_boundaries_by_position():
    g = synth_geography(SyntheticSpec(width=3, height=3, num_districts=2, seed=0))
    # corner, edge midpoint, center of the 3x3 grid
    assert g.outer_boundaries[0] == 2.0
    assert g.outer_boundaries[1] == 1.0
    assert g.outer_boundaries[4] == 0.0
    assert len(g.edges) == 12


def test_grid_edge_count_4x4():
    g = synth_geography(SyntheticSpec(width=4, height=4, num_districts=2, seed=0))
    assert len(g.edges) == 24


def test_district_aggregates_2x2_split():
    g = _grid22()
    agg = district_aggregates(g, Plan((0, 0, 1, 1)))
    assert agg.population == (200, 200)
    assert agg.ward_count == (2, 2)
    # each half: two outer sides per ward plus the two cut edges
    assert agg.perimeter == (6.0, 6.0)
    assert agg.area == (2.0, 2.0)


def test_conflicted_wards_2x2():
    g = _grid22()
    pairs = conflicted_wards(g, Plan((0, 0, 1, 1)))
    assert pairs == [(0, 1), (1, 1), (2, 0), (3, 0)]


def test_conflicted_wards_path():
    g = synth_geography(SyntheticSpec(width=3, height=1, num_districts=2, seed=0))
    assert conflicted_wards(g, Plan((0, 1, 1))) == [(0, 1), (1, 0)]


def test_canonical_assignment_first_appearance():
    assert canonical_assignment([2, 2, 0, 1]) == (0, 0, 1, 2)
    assert canonical_assignment([0, 0, 1, 2]) == (0, 0, 1, 2)
    assert canonical_assignment([5]) == (0,)


def test_is_contiguous_detects_split_district():
    g = synth_geography(SyntheticSpec(width=3, height=1, num_districts=2, seed=0))
    assert is_contiguous(g, Plan((0, 1, 0)), 0) is False
    assert is_contiguous(g, Plan((0, 0, 1)), 0) is True


def test_check_plan_rejects_bad_plans():
    g = _grid22()
    with pytest.raises(ValidationError):
        check_plan(g, Plan((0, 0, 0, 0)))  # district 1 unused
    with pytest.raises(ValidationError):
        check_plan(g, Plan((0, 0, 1, 2)))  # label out of range
    with pytest.raises(ValidationError):
        check_plan(g, Plan((0, 1, 1, 0)))  # district 0 disconnected
    with pytest.raises(ValidationError):
        check_plan(g, Plan((0, 0, 1)))  # wrong length


def test_build_geography_validation_errors():
    wards = [_ward(0), _ward(1)]
    edge = [(0, 1, 1.0)]
    with pytest.raises(ValidationError):
        build_geography([_ward(0), _ward(2)], edge, 1)  # ids not dense
    with pytest.raises(ValidationError):
        build_geography(wards, [(0, 0, 1.0)], 1)  # self loop
    with pytest.raises(ValidationError):
        build_geography(wards, [(0, 1, 1.0), (1, 0, 2.0)], 1)  # duplicate edge
    with pytest.raises(ValidationError):
        build_geography(wards, [(0, 2, 1.0)], 1)  # dangling endpoint
    with pytest.raises(ValidationError):
        build_geography(wards, [(0, 1, 0.0)], 1)  # nonpositive length
    with pytest.raises(ValidationError):
        build_geography(wards, [], 1)  # disconnected
    with pytest.raises(ValidationError):
        build_geography([_ward(0, pop=5, black=9)], [], 1)  # subgroup > total
    with pytest.raises(ValidationError):
        build_geography([_ward(0, area=0.0)], [], 1)
    with pytest.raises(ValidationError):
        build_geography(wards, edge, 3)  # more districts than wards


def test_reference_plan_checked_on_build():
    wards = [_ward(i) for i in range(3)]
    edges = [(0, 1, 1.0), (1, 2, 1.0)]
    g = build_geography(wards, edges, 2, reference_labels=[0, 0, 1])
    assert g.reference_plan == Plan((0, 0, 1))
    with pytest.raises(ValidationError):
        build_geography(wards, edges, 2, reference_labels=[0, 1, 0])


def test_csv_round_trip(tmp_path):
    spec = SyntheticSpec(
        width=4,
        height=3,
        num_districts=3,
        seed=7,
        population="urban",
        area="varied",
        county_rows=2,
        town_cols=2,
        demographics="clustered",
    )
    g = synth_geography(spec)
    g.reference_plan = Plan(tuple([0] * 4 + [1] * 4 + [2] * 4))
    wards_path = str(tmp_path / "wards.csv")
    adj_path = str(tmp_path / "adjacency.csv")
    save_geography(g, wards_path, adj_path)
    g2 = load_geography(wards_path, adj_path)
    assert g2.num_districts == 3
    assert g2.wards == g.wards
    assert sorted(g2.edges) == sorted(g.edges)
    assert g2.reference_plan == g.reference_plan
    # num_districts cross-check against the reference plan
    with pytest.raises(ValidationError):
        load_geography(wards_path, adj_path, num_districts=4)


def test_load_requires_district_count_or_reference(tmp_path):
    g = synth_geography(SyntheticSpec(width=2, height=2, num_districts=2, seed=0))
    wards_path = str(tmp_path / "w.csv")
    adj_path = str(tmp_path / "a.csv")
    save_geography(g, wards_path, adj_path)
    with pytest.raises(ValidationError):
        load_geography(wards_path, adj_path)
    assert load_geography(wards_path, adj_path, 2).num_districts == 2


def test_neighbors_sorted_with_lengths():
    g = _grid22()
    assert g.neighbors[0] == ((1, 1.0), (2, 1.0))
    assert g.neighbors[3] == ((1, 1.0), (2, 1.0))
