"""Flat key = value run configuration shared by the CLI subcommands."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from planchain.geography import ParseError
from planchain.sampler import AnnealingSchedule, FilterCriteria
from planchain.scores import ScoreWeights


@dataclass
class RunConfig:
    """Everything a pipeline run needs, parseable from a small text file.

    Paths are resolved relative to the config file's directory.  A districts
    value of 0 means "infer from the wards file's reference plan column".
    """

    wards: str = "wards.csv"
    adjacency: str = "adjacency.csv"
    votes: str = "votes.csv"
    out_dir: str = "out"
    districts: int = 0

    w_pop: float = 2200.0
    w_comp: float = 0.8
    w_county: float = 0.6
    w_vra: float = 100.0
    w_town: float = 0.0

    steps_beta0: int = 20000
    steps_ramp: int = 80000
    steps_beta1: int = 20000

    max_pop_deviation: float = 0.05
    vra_black_districts: int = 6
    vra_black_threshold: float = 0.40
    vra_hispanic_districts: int = 1
    vra_hispanic_threshold: float = 0.40
    max_compactness: float = 0.0  # 0 disables the compactness filter

    ensemble_size: int = 100
    master_seed: int = 0
    workers: int = 1
    attempt_budget: int = 0  # 0 = automatic

    grid_low: float = 45.0
    grid_high: float = 55.0
    grid_step: float = 0.5
    ramp_width: float = 0.02
    variant_half_width: float = 7.5
    variant_step: float = 0.5
    envelope_half_range: float = 10.0
    envelope_step: float = 0.5
    parity_grid_step: float = 0.01

    def weights(self) -> ScoreWeights:
        return ScoreWeights(
            population=self.w_pop,
            compactness=self.w_comp,
            county=self.w_county,
            vra=self.w_vra,
            town=self.w_town,
        )

    def schedule(self) -> AnnealingSchedule:
        return AnnealingSchedule(
            steps_beta0=self.steps_beta0,
            steps_ramp=self.steps_ramp,
            steps_beta1=self.steps_beta1,
        )

    def criteria(self) -> FilterCriteria:
        return FilterCriteria(
            max_pop_deviation=self.max_pop_deviation,
            vra_black_districts=self.vra_black_districts,
            vra_black_threshold=self.vra_black_threshold,
            vra_hispanic_districts=self.vra_hispanic_districts,
            vra_hispanic_threshold=self.vra_hispanic_threshold,
            max_compactness=self.max_compactness or None,
        )


_PATH_KEYS = {"wards", "adjacency", "votes", "out_dir"}


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    """Parse ``key = value`` lines; # starts a comment, blank lines ignored."""
    types = {f.name: f.type for f in fields(RunConfig)}
    cfg = RunConfig()
    base = Path(base_dir)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ParseError(f"config line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind in (int, "int"):
                parsed: object = int(value)
            elif kind in (float, "float"):
                parsed = float(value)
            else:
                parsed = value
        except ValueError:
            raise ParseError(
                f"config line {lineno}: bad value {value!r} for {key}"
            ) from None
        setattr(cfg, key, parsed)
    for key in _PATH_KEYS:
        setattr(cfg, key, str(base / getattr(cfg, key)))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=p.parent)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
