from contextlib import contextmanager

import pytest

from planchain.oracle import SyntheticSpec, synth_elections, synth_geography
from planchain.sampler import AnnealingSchedule, FilterCriteria, generate_ensemble
from planchain.scores import ScoreWeights

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect a criterion verdict for the end-of-run summary block."""
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one ACCEPTANCE line per criterion, pass or fail.

    Usage: ``with criterion(3, "what must hold") as note: ...``. Set
    ``note["detail"]`` to append measured numbers to the PASS line.
    """

    @contextmanager
    def _criterion(number: int, summary: str):
        note: dict[str, str] = {}
        try:
            yield note
        except BaseException as exc:
            tag = "SKIP" if isinstance(exc, pytest.skip.Exception) else "FAIL"
            record_acceptance(f"ACCEPTANCE {number}: {tag} - {summary}")
            raise
        line = f"ACCEPTANCE {number}: PASS - {summary}"
        if note.get("detail"):
            line += f" ({note['detail']})"
        record_acceptance(line)

    return _criterion


@pytest.fixture(scope="session")
def path4():
    """1x4 path graph, uniform populations, single county and town."""
    return synth_geography(SyntheticSpec(width=4, height=1, num_districts=2, seed=0))


@pytest.fixture(scope="session")
def grid33():
    """3x3 grid with uniform populations and varied areas.

    The population term is constant across all balanced splits, so at full
    strength the landscape stays gentle and fixed-temperature runs mix.
    """
    return synth_geography(
        SyntheticSpec(width=3, height=3, num_districts=2, seed=1, area="varied")
    )


@pytest.fixture(scope="session")
def stats_instance():
    """Mid-sized instance with partisan structure for the statistics tests."""
    spec = SyntheticSpec(
        width=6,
        height=5,
        num_districts=5,
        seed=4,
        population="urban",
        pop_noise=0.3,
        area="varied",
        county_rows=2,
        town_cols=2,
        num_elections=3,
        with_unopposed=True,
    )
    g = synth_geography(spec)
    return g, synth_elections(spec, g)


@pytest.fixture(scope="session")
def stats_ensemble(stats_instance):
    """200 unfiltered plans over the statistics instance."""
    g, _ = stats_instance
    criteria = FilterCriteria(
        max_pop_deviation=9.0, vra_black_districts=0, vra_hispanic_districts=0
    )
    return generate_ensemble(
        g,
        weights=ScoreWeights(population=60.0, vra=0.0),
        schedule=AnnealingSchedule(40, 160, 40),
        criteria=criteria,
        n_plans=200,
        seed=20,
    )
