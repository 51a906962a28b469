import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from planchain.analysis import index_report, marginal_box_stats, seat_histogram
from planchain.elections import Election, interpolate_election
from planchain.estimators import (
    ElectionInterpolator,
    PartisanAnalyzer,
    RedistrictingSampler,
)
from planchain.geography import Plan, ValidationError
from planchain.oracle import SyntheticSpec, enumerate_partitions, synth_elections, synth_geography
from planchain.sampler import AnnealingSchedule, FilterCriteria, generate_ensemble
from planchain.scores import ScoreWeights

SMALL = dict(
    n_plans=4,
    w_pop=60.0,
    steps_beta0=5,
    steps_ramp=10,
    steps_beta1=5,
    max_pop_deviation=9.0,
    vra_black_districts=0,
    vra_hispanic_districts=0,
    random_state=3,
)


def test_sampler_params_round_trip():
    est = RedistrictingSampler(**SMALL)
    params = est.get_params()
    assert params["n_plans"] == 4
    assert params["w_pop"] == 60.0
    est.set_params(n_plans=7)
    assert est.n_plans == 7
    dup = clone(RedistrictingSampler(**SMALL))
    assert dup.get_params() == RedistrictingSampler(**SMALL).get_params()


def test_sampler_fit_sample(grid33):
    est = RedistrictingSampler(**SMALL)
    plans = est.fit_sample(grid33)
    assert len(plans) == 4
    assert est.sample(2) == plans[:2]
    assert len(est.ensemble_) == 4
    with pytest.raises(ValidationError):
        est.sample(9)


def test_sampler_matches_functional_api(grid33):
    est = RedistrictingSampler(**SMALL).fit(grid33)
    direct = generate_ensemble(
        grid33,
        weights=ScoreWeights(population=60.0),
        schedule=AnnealingSchedule(5, 10, 5),
        criteria=FilterCriteria(
            max_pop_deviation=9.0, vra_black_districts=0, vra_hispanic_districts=0
        ),
        n_plans=4,
        seed=3,
    )
    assert est.ensemble_ == direct


def test_sampler_guards(grid33):
    with pytest.raises(NotFittedError):
        RedistrictingSampler(**SMALL).sample()
    with pytest.raises(ValidationError):
        RedistrictingSampler(**SMALL).fit("not a geography")


def linear_pair():
    ref = Election(
        id="ref",
        total=(8, 16, 24, 32, 40, 48),
        dem=(6, 8, 6, 24, 20, 12),
        rep=(2, 8, 18, 8, 20, 36),
        opposed=(True,) * 6,
    )
    target = Election(
        id="t",
        total=(32, 64, 96, 128, 160, 50),
        dem=(24, 32, 24, 96, 80, 0),
        rep=(8, 32, 72, 32, 80, 45),
        opposed=(True, True, True, True, True, False),
    )
    noise = Election(
        id="noise",
        total=ref.total,
        dem=tuple(t - r for t, r in zip(ref.total, (6, 2, 4, 28, 10, 12))),
        rep=(6, 2, 4, 28, 10, 12),
        opposed=(True,) * 6,
    )
    return target, ref, noise


def test_interpolator_fit_transform():
    target, ref, noise = linear_pair()
    est = ElectionInterpolator(max_references=2).fit([noise, ref], y=target)
    assert est.reference_ids_ == ("ref",)
    out = est.transform(target)
    assert out == interpolate_election(target, [ref])
    batch = est.transform([target, target])
    assert batch == [out, out]


def test_interpolator_guards():
    target, ref, _ = linear_pair()
    with pytest.raises(ValidationError):
        ElectionInterpolator().fit([ref])
    with pytest.raises(NotFittedError):
        ElectionInterpolator().transform(target)


def test_analyzer_delegates(grid33):
    plans = RedistrictingSampler(**SMALL).fit_sample(grid33)
    spec = SyntheticSpec(width=3, height=3, num_districts=2, seed=1, area="varied")
    e = synth_elections(spec, grid33)["E0"]
    est = PartisanAnalyzer().fit(plans, geography=grid33, election=e)
    rpt = est.report(plans[0])
    assert rpt == index_report(grid33, plans[0], plans, e)
    assert est.histogram() == seat_histogram(grid33, plans, e)
    assert est.boxes() == marginal_box_stats(grid33, plans, e)
    rows = est.envelope(plans[0])
    assert len(rows) == 41


def test_analyzer_parity_on_odd_districts():
    g = synth_geography(SyntheticSpec(width=5, height=1, num_districts=3, seed=0))
    members = [Plan(p) for p in enumerate_partitions(g)]
    e = Election(
        id="p",
        total=(100,) * 5,
        dem=(70, 30, 55, 45, 50),
        rep=(30, 70, 45, 55, 50),
        opposed=(True,) * 5,
    )
    est = PartisanAnalyzer().fit(members, geography=g, election=e)
    shift = est.parity_shift()
    assert isinstance(shift, float)
    rpt = est.report(members[0])
    assert rpt.parity_fraction is not None


def test_analyzer_accepts_ensemble_and_guards(grid33):
    est = RedistrictingSampler(**SMALL).fit(grid33)
    spec = SyntheticSpec(width=3, height=3, num_districts=2, seed=1, area="varied")
    e = synth_elections(spec, grid33)["E0"]
    an = PartisanAnalyzer().fit(est.ensemble_, geography=grid33, election=e)
    assert an.plans_ == list(est.plans_)
    with pytest.raises(ValidationError):
        PartisanAnalyzer().fit([], geography=grid33, election=e)
    with pytest.raises(NotFittedError):
        PartisanAnalyzer().report(est.plans_[0])
