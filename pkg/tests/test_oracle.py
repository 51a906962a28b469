import math

import pytest

from planchain.geography import Plan, canonical_assignment, check_plan
from planchain.oracle import (
    OracleError,
    SyntheticSpec,
    enumerate_partitions,
    exact_boltzmann,
    is_move_connected,
    move_neighbors,
    synth_elections,
    synth_geography,
    synth_instance,
    tv_distance,
    uniform_distribution,
)
from planchain.scores import ScoreWeights, total_score


def test_path_partitions():
    g = synth_geography(SyntheticSpec(width=3, height=1, num_districts=2, seed=0))
    assert sorted(enumerate_partitions(g)) == [(0, 0, 1), (0, 1, 1)]


def test_square_partitions():
    g = synth_geography(SyntheticSpec(width=2, height=2, num_districts=2, seed=0))
    parts = enumerate_partitions(g)
    assert len(parts) == 6
    assert all(p == canonical_assignment(p) for p in parts)
    assert len(set(parts)) == 6


def test_grid33_partition_count_matches_brute_force(grid33):
    """53 contiguous bipartitions of the 3x3 grid, 16 of them 4/5-balanced.

    Both values were independently recomputed with a bitmask brute force over
    all 2^9 subsets before being frozen here.
    """
    parts = enumerate_partitions(grid33)
    assert len(parts) == 53
    sizes = [tuple(sorted((p.count(0), p.count(1)))) for p in parts]
    assert sizes.count((4, 5)) == 16
    for p in parts:
        check_plan(grid33, Plan(p))


def test_three_district_partitions_are_valid():
    g = synth_geography(SyntheticSpec(width=3, height=2, num_districts=3, seed=0))
    parts = enumerate_partitions(g)
    assert len(parts) == len(set(parts))
    for p in parts:
        assert p == canonical_assignment(p)
        check_plan(g, Plan(p))


def test_enumeration_size_guard():
    g = synth_geography(SyntheticSpec(width=6, height=3, num_districts=2, seed=0))
    with pytest.raises(OracleError):
        enumerate_partitions(g)


def test_exact_boltzmann_normalizes_and_orders(grid33):
    parts = enumerate_partitions(grid33)
    probs = exact_boltzmann(grid33, partitions=parts)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)
    # lower total score must never get lower probability
    w = ScoreWeights()
    scored = {p: total_score(grid33, Plan(p), w).total for p in parts}
    best = min(scored.values())
    worst = max(scored.values())
    assert probs[min(scored, key=scored.get)] >= probs[max(scored, key=scored.get)]
    assert worst > best


def test_exact_boltzmann_beta_zero_is_uniform(grid33):
    parts = enumerate_partitions(grid33)
    probs = exact_boltzmann(grid33, beta=0.0, partitions=parts)
    assert all(p == pytest.approx(1.0 / 53) for p in probs.values())


def test_tv_distance():
    exact = {(0, 0, 1): 0.5, (0, 1, 1): 0.5}
    assert tv_distance({(0, 0, 1): 5, (0, 1, 1): 5}, exact) == 0.0
    assert tv_distance({(0, 0, 1): 10}, exact) == pytest.approx(0.5)
    with pytest.raises(OracleError):
        tv_distance({(9, 9, 9): 1}, exact)
    with pytest.raises(OracleError):
        tv_distance({}, exact)


def test_move_neighbors_on_path():
    g = synth_geography(SyntheticSpec(width=3, height=1, num_districts=2, seed=0))
    # emptying district 1 is not a legal move, so only one neighbor remains
    assert move_neighbors(g, (0, 0, 1)) == [(0, 1, 1)]


def test_single_moves_connect_all_grid33_partitions(grid33):
    parts = enumerate_partitions(grid33)
    assert is_move_connected(grid33, parts)


def test_single_moves_connect_balanced_grid33_partitions(grid33):
    """The production-weight landscape concentrates on balanced splits, so
    those must form one communicating class for fixed-beta runs to converge."""
    parts = enumerate_partitions(grid33)
    balanced = [p for p in parts if sorted((p.count(0), p.count(1))) == [4, 5]]
    assert len(balanced) == 16
    assert is_move_connected(grid33, balanced)


def test_synth_is_deterministic():
    spec = SyntheticSpec(
        width=4,
        height=3,
        num_districts=2,
        seed=9,
        population="urban",
        area="varied",
        demographics="clustered",
        num_elections=2,
        with_unopposed=True,
    )
    g1, e1 = synth_instance(spec)
    g2, e2 = synth_instance(spec)
    assert g1.wards == g2.wards
    assert g1.edges == g2.edges
    assert e1 == e2


def test_synth_unopposed_band():
    spec = SyntheticSpec(
        width=5, height=2, num_districts=2, seed=3, num_elections=2, with_unopposed=True
    )
    g = synth_geography(spec)
    elections = synth_elections(spec, g)
    last = elections["E1"]
    assert last.unopposed_wards
    assert all(e.opposed == tuple([True] * 10) for eid, e in elections.items() if eid != "E1")
    for i in last.unopposed_wards:
        assert last.dem[i] == 0 or last.rep[i] == 0
    assert len(last.unopposed_wards) < 10  # enough contested wards remain


def test_spec_guards():
    with pytest.raises(OracleError):
        SyntheticSpec(width=0, height=3, num_districts=1)
    with pytest.raises(OracleError):
        SyntheticSpec(width=2, height=2, num_districts=5)
    with pytest.raises(OracleError):
        SyntheticSpec(width=2, height=2, num_districts=1, population="bogus")


def test_uniform_distribution():
    parts = [(0, 1), (0, 0)]
    u = uniform_distribution(parts)
    assert u == {(0, 1): 0.5, (0, 0): 0.5}
    assert math.isclose(sum(u.values()), 1.0)
