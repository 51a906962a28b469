"""Score-weighted MCMC sampling of redistricting plans and ensemble outlier analysis."""

from planchain.geography import (
    Geography,
    GeographyError,
    ParseError,
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
)
from planchain.scores import (
    ScoreBreakdown,
    ScoreWeights,
    score_compactness,
    score_county_splits,
    score_population,
    score_town_splits,
    score_vra,
    total_score,
)
from planchain.sampler import (
    AnnealingSchedule,
    ChainStallError,
    EnsembleBudgetError,
    Ensemble,
    FilterCriteria,
    PlanRecord,
    accept_move,
    generate_ensemble,
    load_ensemble,
    passes_filter,
    propose_move,
    random_initial_plan,
    run_annealed_chain,
    save_ensemble,
)
from planchain.elections import (
    Election,
    InterpolationError,
    district_shares,
    interpolate_election,
    load_elections,
    save_elections,
    seats,
    select_reference_set,
    shift_election,
    statewide_rep_fraction,
)
from planchain.analysis import (
    IndexReport,
    MarginalBoxStats,
    SeatHistogram,
    ShiftGrid,
    ensemble_parity_shift,
    gerrymandering_index,
    index_report,
    marginal_box_stats,
    plan_parity_fraction,
    representativeness_index,
    seat_histogram,
    seat_surprisal,
    shift_envelope,
    sorted_shares,
)
from planchain.estimators import (
    ElectionInterpolator,
    PartisanAnalyzer,
    RedistrictingSampler,
)

__version__ = "0.1.0"
