import math
import random

import pytest

from planchain.geography import (
    Plan,
    ValidationError,
    Ward,
    build_geography,
    canonical_assignment,
    check_plan,
)
from planchain.oracle import (
    SyntheticSpec,
    enumerate_partitions,
    exact_boltzmann,
    synth_geography,
    tv_distance,
)
from planchain.sampler import (
    AnnealingSchedule,
    ChainStallError,
    DEFAULT_STALL_CAP,
    EnsembleBudgetError,
    FilterCriteria,
    _Chain,
    accept_move,
    derive_chain_seed,
    fixed_beta_visit_counts,
    generate_ensemble,
    load_ensemble,
    passes_filter,
    propose_move,
    random_initial_plan,
    run_annealed_chain,
    save_ensemble,
)
from planchain.scores import ScoreWeights, total_score


def path_geography(n: int, k: int = 2):
    return synth_geography(SyntheticSpec(width=n, height=1, num_districts=k, seed=0))


# ---------------------------------------------------------------- schedule


def test_beta_schedule_phases():
    s = AnnealingSchedule(10, 20, 5)
    assert s.total_steps == 35
    assert s.beta_at(0) == 0.0
    assert s.beta_at(9) == 0.0
    # first ramp step runs at 1/20, the ramp ends exactly at 1
    assert s.beta_at(10) == pytest.approx(1 / 20)
    assert s.beta_at(29) == pytest.approx(1.0)
    assert s.beta_at(30) == 1.0
    assert s.beta_at(34) == 1.0


def test_beta_schedule_no_ramp():
    s = AnnealingSchedule(4, 0, 4)
    assert s.beta_at(3) == 0.0
    assert s.beta_at(4) == 1.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        AnnealingSchedule(-1, 10, 10)
    with pytest.raises(ValueError):
        AnnealingSchedule(0, 0, 0)


# ---------------------------------------------------------------- seeds


def test_derive_chain_seed_frozen():
    assert derive_chain_seed(0, 0) == 12426054289685354689
    assert derive_chain_seed(0, 1) == 17227200041832915037
    assert derive_chain_seed(42, 7) == 8457105028182875694


def test_derive_chain_seed_distinct():
    seeds = {derive_chain_seed(5, i) for i in range(200)}
    assert len(seeds) == 200


# ---------------------------------------------------------------- acceptance


class _FixedRng:
    def __init__(self, value: float):
        self.value = value
        self.calls = 0

    def random(self) -> float:
        self.calls += 1
        return self.value


def test_accept_move_downhill_skips_rng():
    rng = _FixedRng(0.999999)
    assert accept_move(10.0, 5.0, 1.0, 4, 4, rng)
    assert rng.calls == 0


def test_accept_move_uphill_probability():
    # exp(-1) ~ 0.3679: a draw just below accepts, just above rejects
    assert accept_move(0.0, 1.0, 1.0, 4, 4, _FixedRng(0.36))
    assert not accept_move(0.0, 1.0, 1.0, 4, 4, _FixedRng(0.37))


def test_accept_move_proposal_correction():
    # beta 0 still applies c_old / c_new: ratio 1/2 -> exp(log 0.5) = 0.5
    assert accept_move(3.0, 99.0, 0.0, 2, 4, _FixedRng(0.49))
    assert not accept_move(3.0, 99.0, 0.0, 2, 4, _FixedRng(0.51))
    # shrinking conflict set helps acceptance
    assert accept_move(0.0, 0.0, 1.0, 6, 3, _FixedRng(0.999999))


def test_accept_move_rejects_bad_counts():
    rng = random.Random(0)
    with pytest.raises(ValueError):
        accept_move(0.0, 0.0, 1.0, 0, 3, rng)
    with pytest.raises(ValueError):
        accept_move(0.0, 0.0, 1.0, 3, 0, rng)


# ---------------------------------------------------------------- proposals


def test_random_initial_plan_valid_over_seeds(grid33):
    for seed in range(40):
        check_plan(grid33, random_initial_plan(grid33, seed))


def test_random_initial_plan_three_districts():
    g = synth_geography(SyntheticSpec(width=5, height=4, num_districts=3, seed=2))
    for seed in range(20):
        check_plan(g, random_initial_plan(g, seed))


def test_propose_move_respects_donor():
    g = path_geography(3)
    plan = Plan((0, 0, 1))
    # moves are (1 -> district 1) and (2 -> district 0); the latter would
    # empty district 1 and must come back as a rejection
    outcomes = {propose_move(g, plan, random.Random(s)) for s in range(30)}
    assert outcomes == {(1, 1), None}


def test_donor_rejects_disconnection(path4):
    chain = _Chain(path4, ScoreWeights(), [0, 0, 0, 1], random.Random(0))
    assert not chain.donor_ok(1, 0)  # splits {0} from {2}
    assert chain.donor_ok(0, 0)
    assert chain.donor_ok(2, 0)
    # sole member of its district can never leave
    chain2 = _Chain(path4, ScoreWeights(), [0, 0, 0, 1], random.Random(0))
    assert not chain2.donor_ok(3, 1)


def test_stall_cap_triggers():
    g = path_geography(3)

    class PickLast:
        def randrange(self, n):
            return n - 1

        def random(self):
            return 0.5

    # sorted conflicted moves are [(1, 1), (2, 0)]; picking the last always
    # hits the donor rejection, so a zero cap trips immediately
    chain = _Chain(g, ScoreWeights(), [0, 0, 1], PickLast())
    with pytest.raises(ChainStallError):
        chain.step(0.0, stall_cap=0)


def test_single_district_stalls():
    g = synth_geography(SyntheticSpec(width=2, height=2, num_districts=1, seed=0))
    with pytest.raises(ChainStallError):
        run_annealed_chain(g, ScoreWeights(), AnnealingSchedule(1, 0, 0), seed=0)


# ------------------------------------------------- incremental bookkeeping


def test_conflict_delta_matches_recount(stats_instance):
    g, _ = stats_instance
    rng = random.Random(11)
    chain = _Chain(g, ScoreWeights(population=60.0), list(random_initial_plan(g, rng).assignment), rng)
    checked = 0
    while checked < 2000:
        moves = chain.conflict_moves()
        ward, d_new = moves[rng.randrange(len(moves))]
        d_old = chain.labels[ward]
        c_before = len(moves)
        delta = chain._conflict_delta(ward, d_old, d_new)
        chain.labels[ward] = d_new
        chain._moves = None
        assert chain.conflict_count() == c_before + delta
        checked += 1
        if not chain.donor_ok(ward, d_new) or rng.random() < 0.3:
            # keep the walk roaming: sometimes undo, always undo bad states
            chain.labels[ward] = d_old
            chain._moves = None


def test_tracker_matches_full_recompute(stats_instance):
    g, _ = stats_instance
    rng = random.Random(7)
    weights = ScoreWeights(population=60.0, town=0.5)
    chain = _Chain(g, weights, list(random_initial_plan(g, rng).assignment), rng)
    for i in range(3000):
        chain.step(0.7, DEFAULT_STALL_CAP)
        if i % 200 == 0:
            fresh = total_score(g, Plan.from_labels(chain.labels), weights)
            running = chain.tracker.breakdown()
            assert running.county == fresh.county
            assert running.town == fresh.town
            assert running.vra == pytest.approx(fresh.vra, rel=1e-12, abs=1e-12)
            assert running.population == pytest.approx(fresh.population, rel=1e-9)
            assert running.compactness == pytest.approx(fresh.compactness, rel=1e-9)
            assert running.total == pytest.approx(fresh.total, rel=1e-9)


def test_chain_invariants_in_debug(grid33):
    result = run_annealed_chain(
        grid33, ScoreWeights(), AnnealingSchedule(30, 60, 30), seed=3, debug=True
    )
    assert result.accepted_steps == 120
    assert result.proposals >= 120
    check_plan(grid33, result.plan)


def test_chain_exact_accepted_count(grid33):
    result = run_annealed_chain(grid33, ScoreWeights(), AnnealingSchedule(5, 10, 5), seed=1)
    assert result.accepted_steps == 20


def test_chain_deterministic(grid33):
    a = run_annealed_chain(grid33, ScoreWeights(), AnnealingSchedule(10, 20, 10), seed=9)
    b = run_annealed_chain(grid33, ScoreWeights(), AnnealingSchedule(10, 20, 10), seed=9)
    assert a == b


def test_chain_rejects_bad_initial_plan(grid33):
    with pytest.raises(ValidationError):
        run_annealed_chain(
            grid33,
            ScoreWeights(),
            AnnealingSchedule(1, 0, 0),
            seed=0,
            initial_plan=Plan((0,) * 9),
        )


# ---------------------------------------------------------------- filters


def filter_geography():
    wards = [
        Ward(id=i, population=100, black_population=60 if i == 0 else 0, hispanic_population=0, area=1.0, outer_boundary=2.0, county="c", town="t")
        for i in range(4)
    ]
    edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]
    return build_geography(wards, edges, num_districts=2)


def test_filter_population_strictness():
    g = filter_geography()
    balanced = Plan((0, 0, 1, 1))
    assert passes_filter(g, balanced, FilterCriteria(max_pop_deviation=0.01, vra_black_districts=0, vra_hispanic_districts=0))
    # exact deviation 0 still fails a zero bound: the test is strict
    res = passes_filter(g, balanced, FilterCriteria(max_pop_deviation=0.0, vra_black_districts=0, vra_hispanic_districts=0))
    assert not res
    assert res.reasons == ("population_deviation",)
    lopsided = Plan((0, 0, 0, 1))
    # deviation is exactly 0.5; a bound of 0.5 must fail it
    res = passes_filter(g, lopsided, FilterCriteria(max_pop_deviation=0.5, vra_black_districts=0, vra_hispanic_districts=0))
    assert res.reasons == ("population_deviation",)
    assert passes_filter(g, lopsided, FilterCriteria(max_pop_deviation=0.500001, vra_black_districts=0, vra_hispanic_districts=0))


def test_filter_vra_counts():
    g = filter_geography()
    plan = Plan((0, 0, 1, 1))
    # district 0 is 30% Black: threshold 0.3 reachable, 0.31 not
    ok = FilterCriteria(max_pop_deviation=0.1, vra_black_districts=1, vra_black_threshold=0.30, vra_hispanic_districts=0)
    assert passes_filter(g, plan, ok)
    bad = FilterCriteria(max_pop_deviation=0.1, vra_black_districts=1, vra_black_threshold=0.31, vra_hispanic_districts=0)
    assert passes_filter(g, plan, bad).reasons == ("vra_black",)
    hisp = FilterCriteria(max_pop_deviation=0.1, vra_black_districts=0, vra_hispanic_districts=1, vra_hispanic_threshold=0.05)
    assert passes_filter(g, plan, hisp).reasons == ("vra_hispanic",)


def test_filter_compactness_bound():
    g = synth_geography(SyntheticSpec(width=2, height=2, num_districts=2, seed=0))
    plan = Plan((0, 0, 1, 1))
    base = dict(max_pop_deviation=0.1, vra_black_districts=0, vra_hispanic_districts=0)
    # domino halves of the unit 2x2 score exactly 36
    assert passes_filter(g, plan, FilterCriteria(**base, max_compactness=36.0))
    res = passes_filter(g, plan, FilterCriteria(**base, max_compactness=35.9))
    assert res.reasons == ("compactness",)
    assert passes_filter(g, plan, FilterCriteria(**base, max_compactness=None))


def test_filter_reports_all_reasons():
    g = filter_geography()
    res = passes_filter(
        g,
        Plan((0, 0, 0, 1)),
        FilterCriteria(max_pop_deviation=0.05, vra_black_districts=1, vra_black_threshold=0.9, vra_hispanic_districts=1),
    )
    assert set(res.reasons) == {"population_deviation", "vra_black", "vra_hispanic"}


# ---------------------------------------------------------------- ensembles


LENIENT = FilterCriteria(max_pop_deviation=9.0, vra_black_districts=0, vra_hispanic_districts=0)


def test_generate_ensemble_basic(grid33):
    ens = generate_ensemble(
        grid33, ScoreWeights(), AnnealingSchedule(10, 20, 10), LENIENT, n_plans=6, seed=5
    )
    assert len(ens) == 6
    assert [r.plan_id for r in ens.records] == list(range(6))
    assert ens.meta.attempts == 6
    assert ens.meta.filter_failures == {}
    assert ens.meta.accepted_steps == 6 * 40
    for r in ens.records:
        check_plan(grid33, r.plan)
        assert r.seed == derive_chain_seed(5, r.plan_id)


def test_generate_ensemble_counts_filtered_attempts(grid33):
    criteria = FilterCriteria(max_pop_deviation=0.12, vra_black_districts=0, vra_hispanic_districts=0)
    ens = generate_ensemble(
        grid33,
        ScoreWeights(population=60.0),
        AnnealingSchedule(10, 30, 10),
        criteria,
        n_plans=8,
        seed=2,
    )
    assert len(ens) == 8
    assert ens.meta.attempts >= 8
    rejected = sum(ens.meta.filter_failures.values())
    assert rejected == ens.meta.attempts - 8
    for r in ens.records:
        assert passes_filter(grid33, r.plan, criteria)


def test_generate_ensemble_worker_independence(grid33):
    kwargs = dict(
        weights=ScoreWeights(),
        schedule=AnnealingSchedule(5, 10, 5),
        criteria=LENIENT,
        n_plans=4,
        seed=13,
    )
    solo = generate_ensemble(grid33, **kwargs, workers=1)
    duo = generate_ensemble(grid33, **kwargs, workers=2)
    assert solo == duo


def test_generate_ensemble_budget_error(grid33):
    impossible = FilterCriteria(max_pop_deviation=9.0, vra_black_districts=5, vra_black_threshold=0.99, vra_hispanic_districts=0)
    with pytest.raises(EnsembleBudgetError) as info:
        generate_ensemble(
            grid33,
            ScoreWeights(),
            AnnealingSchedule(2, 4, 2),
            impossible,
            n_plans=3,
            seed=0,
            attempt_budget=5,
        )
    err = info.value
    assert err.requested == 3
    assert err.produced == 0
    assert err.attempts == 5
    assert err.failures == {"vra_black": 5}


def test_generate_ensemble_argument_validation(grid33):
    with pytest.raises(ValueError):
        generate_ensemble(grid33, ScoreWeights(), AnnealingSchedule(1, 0, 0), LENIENT, n_plans=0, seed=0)
    with pytest.raises(ValueError):
        generate_ensemble(
            grid33, ScoreWeights(), AnnealingSchedule(1, 0, 0), LENIENT, n_plans=5, seed=0, attempt_budget=4
        )


def test_ensemble_save_load_round_trip(tmp_path, grid33):
    ens = generate_ensemble(
        grid33, ScoreWeights(), AnnealingSchedule(5, 10, 5), LENIENT, n_plans=4, seed=8
    )
    path = tmp_path / "ens.jsonl"
    save_ensemble(str(path), ens)
    again = load_ensemble(str(path))
    assert again == ens
    assert (tmp_path / "ens.meta.json").exists()
    # identical content on a rewrite, byte for byte
    first = path.read_bytes()
    save_ensemble(str(path), ens)
    assert path.read_bytes() == first


# --------------------------------------------------- stationary distribution


def test_fixed_beta_occupation_tracks_boltzmann(grid33):
    parts = enumerate_partitions(grid33)
    counts = fixed_beta_visit_counts(grid33, ScoreWeights(), beta=1.0, accepted_steps=40000, seed=6)
    exact = exact_boltzmann(grid33, beta=1.0, partitions=parts)
    assert tv_distance(counts, exact) < 0.06


def test_biased_acceptance_is_detectable(grid33):
    parts = enumerate_partitions(grid33)
    exact = exact_boltzmann(grid33, beta=1.0, partitions=parts)
    counts = fixed_beta_visit_counts(
        grid33, ScoreWeights(), beta=1.0, accepted_steps=40000, seed=6, accept_bias=0.25
    )
    assert tv_distance(counts, exact) > 0.08


def test_occupation_counts_canonical(grid33):
    counts = fixed_beta_visit_counts(grid33, ScoreWeights(), beta=0.0, accepted_steps=500, seed=4)
    for key in counts:
        assert key == canonical_assignment(key)
    assert sum(counts.values()) >= 500
