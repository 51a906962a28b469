"""Command line pipeline: synth, sample, interpolate, analyze, validate."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from planchain.analysis import (
    ShiftGrid,
    ensemble_parity_shift,
    index_report,
    marginal_box_stats,
    plan_parity_fraction,
    seat_histogram,
    shift_envelope,
)
from planchain.config import RunConfig, load_config, write_config
from planchain.elections import (
    InterpolationError,
    interpolate_election,
    load_elections,
    save_elections,
    select_reference_set,
)
from planchain.geography import (
    Geography,
    GeographyError,
    Plan,
    check_plan,
    load_geography,
    save_geography,
)
from planchain.oracle import (
    OracleError,
    SyntheticSpec,
    enumerate_partitions,
    exact_boltzmann,
    synth_elections,
    synth_geography,
    tv_distance,
    uniform_distribution,
)
from planchain.sampler import (
    ChainStallError,
    EnsembleBudgetError,
    fixed_beta_visit_counts,
    generate_ensemble,
    load_ensemble,
    random_initial_plan,
    save_ensemble,
)
from planchain.scores import ScoreWeights

_ERRORS = (
    GeographyError,
    InterpolationError,
    ChainStallError,
    EnsembleBudgetError,
    OracleError,
)


def _load_plan(g: Geography, path: str | None) -> Plan:
    """The plan under evaluation: a ward_id,district CSV, or the reference
    plan from the wards file when no path is given."""
    if path is None:
        if g.reference_plan is None:
            raise GeographyError(
                "no plan: pass --plan or add a ref_district column to the wards file"
            )
        return g.reference_plan
    index_of = {sid: i for i, sid in enumerate(g.source_ids)}
    labels_raw: dict[int, str] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise GeographyError(f"cannot open plan file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"ward_id", "district"} <= set(reader.fieldnames):
            raise GeographyError(f"{path}: expected columns ward_id,district")
        for row in reader:
            sid = row["ward_id"].strip()
            if sid not in index_of:
                raise GeographyError(f"{path}: unknown ward id {sid!r}")
            labels_raw[index_of[sid]] = row["district"].strip()
    if len(labels_raw) != g.num_wards:
        raise GeographyError(
            f"{path}: plan covers {len(labels_raw)} of {g.num_wards} wards"
        )
    distinct = sorted(set(labels_raw.values()), key=lambda v: (len(v), v))
    label_of = {v: i for i, v in enumerate(distinct)}
    plan = Plan.from_labels(label_of[labels_raw[i]] for i in range(g.num_wards))
    check_plan(g, plan)
    return plan


def _save_plan(g: Geography, plan: Plan, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ward_id", "district"])
        for sid, d in zip(g.source_ids, plan.assignment):
            writer.writerow([sid, d])


def _geography(cfg: RunConfig) -> Geography:
    return load_geography(cfg.wards, cfg.adjacency, cfg.districts or None)


def _election(cfg: RunConfig, g: Geography, election_id: str, votes: str | None = None):
    elections = load_elections(votes or cfg.votes, g.source_ids)
    if election_id not in elections:
        known = ", ".join(sorted(elections))
        raise InterpolationError(f"no election {election_id!r} (have: {known})")
    e = elections[election_id]
    if e.unopposed_wards and e.interpolated is None:
        print(
            f"note: election {election_id} has {len(e.unopposed_wards)} unopposed "
            "wards and no interpolated votes; results use raw returns",
            file=sys.stderr,
        )
    return e


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        width=args.width,
        height=args.height,
        num_districts=args.districts,
        seed=args.seed,
        population=args.population,
        pop_noise=args.pop_noise,
        area=args.area,
        county_rows=args.county_rows,
        town_cols=args.town_cols,
        demographics=args.demographics,
        num_elections=args.elections,
        with_unopposed=args.unopposed,
    )
    g = synth_geography(spec)
    elections = synth_elections(spec, g)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_geography(g, str(out / "wards.csv"), str(out / "adjacency.csv"))
    save_elections(str(out / "votes.csv"), elections, g.source_ids)
    seed_plan = random_initial_plan(g, args.seed)
    _save_plan(g, seed_plan, str(out / "plan.csv"))
    # Weights and schedule sized for desk-scale instances: single wards here
    # are a far larger population fraction of a district than real wards are,
    # so the production population weight would freeze the chain near beta=1.
    cfg = RunConfig(
        wards="wards.csv",
        adjacency="adjacency.csv",
        votes="votes.csv",
        out_dir="out",
        districts=spec.num_districts,
        w_pop=120.0,
        steps_beta0=50,
        steps_ramp=250,
        steps_beta1=30,
        ensemble_size=50,
        master_seed=args.seed,
        vra_black_districts=1 if spec.demographics == "clustered" else 0,
        vra_black_threshold=0.35,
        vra_hispanic_districts=0,
    )
    write_config(cfg, out / "run.config")
    print(f"wrote wards/adjacency/votes/plan/run.config under {out}")
    return 0


def _cmd_sample(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.size is not None:
        cfg.ensemble_size = args.size
    g = _geography(cfg)
    ensemble = generate_ensemble(
        g,
        weights=cfg.weights(),
        schedule=cfg.schedule(),
        criteria=cfg.criteria(),
        n_plans=cfg.ensemble_size,
        seed=cfg.master_seed,
        workers=cfg.workers,
        attempt_budget=cfg.attempt_budget or None,
    )
    out = args.out or str(Path(cfg.out_dir) / "ensemble.jsonl")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_ensemble(out, ensemble)
    meta = ensemble.meta
    rate = meta.accepted_steps / max(meta.proposals, 1)
    print(
        f"{len(ensemble)} plans from {meta.attempts} attempts "
        f"(acceptance {rate:.3f}) -> {out}"
    )
    return 0


def _cmd_interpolate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    g = _geography(cfg)
    elections = load_elections(cfg.votes, g.source_ids)
    if args.election not in elections:
        known = ", ".join(sorted(elections))
        raise InterpolationError(f"no election {args.election!r} (have: {known})")
    target = elections[args.election]
    if not target.unopposed_wards:
        print(f"election {args.election} has no unopposed wards; nothing to do")
        return 0
    pool = [
        e
        for eid, e in sorted(elections.items())
        if eid != args.election and all(e.opposed)
    ]
    if args.references:
        wanted = [s.strip() for s in args.references.split(",") if s.strip()]
        by_id = {e.id: e for e in pool}
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise InterpolationError(f"unknown or unusable references: {missing}")
        refs = [by_id[w] for w in wanted]
        filled = interpolate_election(target, refs)
        print(f"references (given): {', '.join(wanted)}")
    else:
        selection = select_reference_set(target, pool, max_size=args.max_references)
        filled = interpolate_election(target, selection.references)
        print(
            f"references (selected): {', '.join(selection.ids)} "
            f"holdout squared error {selection.squared_error:.6g}"
        )
    elections[args.election] = filled
    out = args.out or str(Path(cfg.out_dir) / "votes_interpolated.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_elections(out, elections, g.source_ids)
    print(f"filled {len(target.unopposed_wards)} wards -> {out}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    g = _geography(cfg)
    e = _election(cfg, g, args.election, votes=args.votes)
    ensemble_path = args.ensemble or str(Path(cfg.out_dir) / "ensemble.jsonl")
    ensemble = load_ensemble(ensemble_path)
    plans = ensemble.plans
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.kind == "histogram":
        hist = seat_histogram(g, plans, e, delta_points=args.shift)
        out = args.out or str(out_dir / f"histogram_{e.id}.csv")
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["shift", "seats", "count"])
            for seats_value in sorted(hist.counts):
                writer.writerow([args.shift, seats_value, hist.counts[seats_value]])
        print(f"seat histogram at shift {args.shift:+g} -> {out}")
        return 0

    if args.kind == "boxes":
        stats = marginal_box_stats(g, plans, e)
        out = args.out or str(out_dir / f"boxes_{e.id}.csv")
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "mean", "q1", "median", "q3", "lo", "hi"])
            for r in range(stats.num_ranks):
                writer.writerow(
                    [
                        r + 1,
                        stats.mean[r],
                        stats.q1[r],
                        stats.median[r],
                        stats.q3[r],
                        stats.lo[r],
                        stats.hi[r],
                    ]
                )
        print(f"sorted-margin box stats -> {out}")
        return 0

    if args.kind == "envelope":
        plan = _load_plan(g, args.plan)
        rows = shift_envelope(
            g,
            plans,
            e,
            plan,
            half_range=cfg.envelope_half_range,
            step=cfg.envelope_step,
        )
        out = args.out or str(out_dir / f"envelope_{e.id}.csv")
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["shift", "mean", "sd", "p5", "p95", "min", "max", "ref_seats"]
            )
            for row in rows:
                writer.writerow(
                    [
                        row.shift,
                        row.mean,
                        row.sd,
                        row.p5,
                        row.p95,
                        row.min,
                        row.max,
                        row.ref_seats,
                    ]
                )
        print(f"shift envelope -> {out}")
        return 0

    if args.kind == "indices":
        plan = _load_plan(g, args.plan)
        grid = ShiftGrid.spanning(cfg.grid_low, cfg.grid_high, cfg.grid_step)
        report = index_report(
            g,
            plan,
            plans,
            e,
            grid=grid,
            ramp_width=cfg.ramp_width,
            variant_half_width=cfg.variant_half_width,
            variant_step=cfg.variant_step,
        )
        out = args.out or str(out_dir / f"indices_{e.id}.json")
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"outlier indices -> {out}")
        return 0

    if args.kind == "parity":
        shift = ensemble_parity_shift(g, plans, e, grid_step=cfg.parity_grid_step)
        result = {"election_id": e.id, "ensemble_parity_shift": shift}
        if args.plan is not None or g.reference_plan is not None:
            plan = _load_plan(g, args.plan)
            result["plan_parity_fraction"] = plan_parity_fraction(g, plan, e)
        out = args.out or str(out_dir / f"parity_{e.id}.json")
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"parity analysis -> {out}")
        return 0

    raise AssertionError(f"unhandled analyze kind {args.kind!r}")


def _cmd_validate(args: argparse.Namespace) -> int:
    """Self-check the sampler against exact small-instance distributions."""
    spec = SyntheticSpec(
        width=3, height=3, num_districts=2, seed=args.seed, area="varied"
    )
    g = synth_geography(spec)
    partitions = enumerate_partitions(g)
    print(f"instance: 3x3 grid, 2 districts, {len(partitions)} contiguous partitions")
    checks = [
        ("uniform at beta=0", 0.0, uniform_distribution(partitions)),
        ("score-weighted at beta=1", 1.0, exact_boltzmann(g, partitions=partitions)),
    ]
    failed = False
    for label, beta, exact in checks:
        visits = fixed_beta_visit_counts(
            g,
            weights=ScoreWeights(),
            beta=beta,
            accepted_steps=args.steps,
            seed=args.seed,
            accept_bias=args.mutate_accept_bias,
        )
        tv = tv_distance(visits, exact)
        ok = tv < args.tv_limit
        failed = failed or not ok
        print(f"{label}: TV {tv:.4f} (limit {args.tv_limit}) {'PASS' if ok else 'FAIL'}")
    if failed:
        print("validation FAILED", file=sys.stderr)
        return 1
    print("validation passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planchain",
        description=(
            "Sample score-weighted ensembles of contiguous district plans and "
            "evaluate a plan's partisan properties against them."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic test instance as CSV files")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--districts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--population", choices=["uniform", "urban"], default="urban")
    p.add_argument("--pop-noise", type=float, default=0.35)
    p.add_argument("--area", choices=["unit", "varied"], default="varied")
    p.add_argument("--county-rows", type=int, default=3)
    p.add_argument("--town-cols", type=int, default=3)
    p.add_argument("--demographics", choices=["none", "clustered"], default="clustered")
    p.add_argument("--elections", type=int, default=3)
    p.add_argument("--unopposed", action="store_true")
    p.add_argument("--out-dir", default="synth")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sample", help="generate a plan ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="override ensemble_size")
    p.add_argument("--out", default=None, help="ensemble output path (JSONL)")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("interpolate", help="fill unopposed wards of an election")
    p.add_argument("--config", required=True)
    p.add_argument("--election", required=True)
    p.add_argument(
        "--references",
        default=None,
        help="comma separated election ids; omit to select automatically",
    )
    p.add_argument("--max-references", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("analyze", help="compare a plan against an ensemble")
    p.add_argument(
        "kind", choices=["histogram", "boxes", "envelope", "indices", "parity"]
    )
    p.add_argument("--config", required=True)
    p.add_argument("--election", required=True)
    p.add_argument("--ensemble", default=None, help="ensemble JSONL path")
    p.add_argument("--plan", default=None, help="ward_id,district CSV to evaluate")
    p.add_argument("--votes", default=None, help="override the votes file")
    p.add_argument("--shift", type=float, default=0.0, help="histogram shift (points)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("validate", help="self-check against exact distributions")
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tv-limit", type=float, default=0.08)
    p.add_argument(
        "--mutate-accept-bias",
        type=float,
        default=0.0,
        help="inject an acceptance bias; nonzero values must make validation fail",
    )
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
