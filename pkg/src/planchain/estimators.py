"""Estimator-style wrappers around the sampler, interpolator and analyzer.

These follow the scikit-learn conventions (constructor holds hyperparameters,
``fit`` learns state into trailing-underscore attributes, ``get_params`` and
``set_params`` work for grid search style tooling) so the pipeline can be
driven from code that already speaks that idiom.  The functional interfaces
in the other modules remain the primary API; nothing here adds behavior.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from planchain.analysis import (
    EnvelopeRow,
    IndexReport,
    MarginalBoxStats,
    SeatHistogram,
    ShiftGrid,
    ensemble_parity_shift,
    index_report,
    marginal_box_stats,
    seat_histogram,
    shift_envelope,
)
from planchain.elections import Election, interpolate_election, select_reference_set
from planchain.geography import Geography, Plan, ValidationError
from planchain.sampler import (
    AnnealingSchedule,
    Ensemble,
    FilterCriteria,
    generate_ensemble,
)
from planchain.scores import ScoreWeights


class RedistrictingSampler(BaseEstimator):
    """Samples an ensemble of contiguous district plans for a geography.

    ``fit(geography)`` runs the annealed chains and stores the accepted
    ensemble; ``sample(n)`` returns plans from it.
    """

    def __init__(
        self,
        n_plans: int = 100,
        w_pop: float = 2200.0,
        w_comp: float = 0.8,
        w_county: float = 0.6,
        w_vra: float = 100.0,
        w_town: float = 0.0,
        steps_beta0: int = 20000,
        steps_ramp: int = 80000,
        steps_beta1: int = 20000,
        max_pop_deviation: float = 0.05,
        vra_black_districts: int = 6,
        vra_black_threshold: float = 0.40,
        vra_hispanic_districts: int = 1,
        vra_hispanic_threshold: float = 0.40,
        max_compactness: float | None = None,
        random_state: int = 0,
        workers: int = 1,
        attempt_budget: int | None = None,
    ):
        self.n_plans = n_plans
        self.w_pop = w_pop
        self.w_comp = w_comp
        self.w_county = w_county
        self.w_vra = w_vra
        self.w_town = w_town
        self.steps_beta0 = steps_beta0
        self.steps_ramp = steps_ramp
        self.steps_beta1 = steps_beta1
        self.max_pop_deviation = max_pop_deviation
        self.vra_black_districts = vra_black_districts
        self.vra_black_threshold = vra_black_threshold
        self.vra_hispanic_districts = vra_hispanic_districts
        self.vra_hispanic_threshold = vra_hispanic_threshold
        self.max_compactness = max_compactness
        self.random_state = random_state
        self.workers = workers
        self.attempt_budget = attempt_budget

    def _weights(self) -> ScoreWeights:
        return ScoreWeights(
            population=self.w_pop,
            compactness=self.w_comp,
            county=self.w_county,
            vra=self.w_vra,
            town=self.w_town,
        )

    def _schedule(self) -> AnnealingSchedule:
        return AnnealingSchedule(
            steps_beta0=self.steps_beta0,
            steps_ramp=self.steps_ramp,
            steps_beta1=self.steps_beta1,
        )

    def _criteria(self) -> FilterCriteria:
        return FilterCriteria(
            max_pop_deviation=self.max_pop_deviation,
            vra_black_districts=self.vra_black_districts,
            vra_black_threshold=self.vra_black_threshold,
            vra_hispanic_districts=self.vra_hispanic_districts,
            vra_hispanic_threshold=self.vra_hispanic_threshold,
            max_compactness=self.max_compactness,
        )

    def fit(self, X: Geography, y=None) -> "RedistrictingSampler":
        if not isinstance(X, Geography):
            raise ValidationError("fit expects a Geography")
        self.geography_ = X
        self.ensemble_ = generate_ensemble(
            X,
            weights=self._weights(),
            schedule=self._schedule(),
            criteria=self._criteria(),
            n_plans=self.n_plans,
            seed=self.random_state,
            workers=self.workers,
            attempt_budget=self.attempt_budget,
        )
        self.plans_ = self.ensemble_.plans
        return self

    def sample(self, n: int | None = None) -> list[Plan]:
        check_is_fitted(self, "ensemble_")
        plans = list(self.plans_)
        if n is None:
            return plans
        if n > len(plans):
            raise ValidationError(f"only {len(plans)} plans available, asked for {n}")
        return plans[:n]

    def fit_sample(self, X: Geography, n: int | None = None) -> list[Plan]:
        return self.fit(X).sample(n)


class ElectionInterpolator(BaseEstimator, TransformerMixin):
    """Fills unopposed wards of an election from comparable reference races.

    ``fit(candidates, target)`` picks the reference subset (up to
    ``max_references`` of them) whose leave-one-out estimates of the target's
    contested wards have the smallest squared error; ``transform`` applies the
    fitted references to fill any election's unopposed wards.
    """

    def __init__(self, max_references: int = 3, min_points: int = 2):
        self.max_references = max_references
        self.min_points = min_points

    def fit(self, X: Sequence[Election], y: Election = None) -> "ElectionInterpolator":
        if y is None:
            raise ValidationError("fit needs the target election as y")
        selection = select_reference_set(y, list(X), max_size=self.max_references)
        self.selection_ = selection
        self.references_ = selection.references
        self.reference_ids_ = selection.ids
        self.holdout_error_ = selection.squared_error
        return self

    def transform(self, X) -> Election | list[Election]:
        check_is_fitted(self, "references_")
        if isinstance(X, Election):
            return interpolate_election(X, self.references_, min_points=self.min_points)
        return [
            interpolate_election(e, self.references_, min_points=self.min_points)
            for e in X
        ]


class PartisanAnalyzer(BaseEstimator):
    """Evaluates plans against a fitted ensemble for one election.

    ``fit(ensemble, geography=..., election=...)`` stores the comparison
    population; ``report(plan)`` then produces the full outlier report, and
    the helper methods expose the individual summaries.
    """

    def __init__(
        self,
        grid_low: float = 45.0,
        grid_high: float = 55.0,
        grid_step: float = 0.5,
        ramp_width: float = 0.02,
        variant_half_width: float = 7.5,
        variant_step: float = 0.5,
        envelope_half_range: float = 10.0,
        envelope_step: float = 0.5,
    ):
        self.grid_low = grid_low
        self.grid_high = grid_high
        self.grid_step = grid_step
        self.ramp_width = ramp_width
        self.variant_half_width = variant_half_width
        self.variant_step = variant_step
        self.envelope_half_range = envelope_half_range
        self.envelope_step = envelope_step

    def fit(
        self,
        X: Ensemble | Iterable[Plan],
        y=None,
        *,
        geography: Geography,
        election: Election,
    ) -> "PartisanAnalyzer":
        self.geography_ = geography
        self.election_ = election
        self.plans_ = list(X.plans if isinstance(X, Ensemble) else X)
        if not self.plans_:
            raise ValidationError("cannot analyze against an empty ensemble")
        return self

    def _grid(self) -> ShiftGrid:
        return ShiftGrid.spanning(self.grid_low, self.grid_high, self.grid_step)

    def report(self, plan: Plan) -> IndexReport:
        check_is_fitted(self, "plans_")
        return index_report(
            self.geography_,
            plan,
            self.plans_,
            self.election_,
            grid=self._grid(),
            ramp_width=self.ramp_width,
            variant_half_width=self.variant_half_width,
            variant_step=self.variant_step,
        )

    def histogram(self, delta_points: float = 0.0) -> SeatHistogram:
        check_is_fitted(self, "plans_")
        return seat_histogram(self.geography_, self.plans_, self.election_, delta_points)

    def boxes(self) -> MarginalBoxStats:
        check_is_fitted(self, "plans_")
        return marginal_box_stats(self.geography_, self.plans_, self.election_)

    def envelope(self, reference_plan: Plan) -> list[EnvelopeRow]:
        check_is_fitted(self, "plans_")
        return shift_envelope(
            self.geography_,
            self.plans_,
            self.election_,
            reference_plan,
            half_range=self.envelope_half_range,
            step=self.envelope_step,
        )

    def parity_shift(self, grid_step: float = 0.01) -> float:
        check_is_fitted(self, "plans_")
        return ensemble_parity_shift(
            self.geography_, self.plans_, self.election_, grid_step=grid_step
        )
