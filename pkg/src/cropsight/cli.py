"""``cropsight`` command line.

Exit codes: 0 ok, 1 usage or invalid input, 2 unresolved calendar gaps,
3 class shortfall while sampling, 4 trainer failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from cropsight import calendar as cal
from cropsight.classes import cereal_grouping
from cropsight.conditions import condition_report, write_conditions
from cropsight.filtering import (
    ThresholdSearchParams,
    metric_histograms,
    quadrant_methods,
    search_threshold,
    threshold_sweep,
)
from cropsight.metrics import (
    STRATUM_KEYS,
    confusion,
    macro_f1,
    metric_by_stratum,
    overall_accuracy,
    producer_user_accuracy,
    remap_classes,
    resolution_correlation,
)
from cropsight.records import PredictionsFormatError, ScoredSet, read_predictions
from cropsight.rng import RNG_ALGORITHM
from cropsight.sampling import SamplingError, build_sets, read_photos, write_assignment
from cropsight.search import SearchError, SearchSpace, best_record, two_round_protocol, write_table3
from cropsight.synth import load_spec, write_synthetic

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_GAP, EXIT_SHORTFALL, EXIT_TRAINER = 0, 1, 2, 3, 4

log = logging.getLogger("cropsight")


class UsageError(Exception):
    pass


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


# -- calendar ----------------------------------------------------------------

def cmd_calendar(args) -> int:
    entries = cal.read_calendars(args.calendars)
    registry = cal.read_registry(args.registry)
    overrides = cal.read_overrides(args.overrides) if args.overrides else []
    table = cal.build_maturity(entries, registry, overrides)
    cal.write_maturity(args.out, table)
    if table.unresolved:
        gaps_path = Path(args.gaps_out or Path(args.out).with_name("gaps.csv"))
        _write_csv(gaps_path, ["country", "crop"], table.unresolved)
        listing = ", ".join(f"{c}/{k}" for c, k in table.unresolved)
        if not args.allow_gaps:
            print(f"unresolved calendar gaps: {listing}", file=sys.stderr)
            return EXIT_GAP
        log.warning("continuing with unresolved gaps: %s", listing)
    return EXIT_OK


# -- select ------------------------------------------------------------------

def cmd_select(args) -> int:
    photos = read_photos(args.photos)
    maturity = cal.read_maturity(args.maturity)
    mature = [p for p in photos if maturity.accepts(p.country, p.crop, p.hm)]
    cap = None if args.cap <= 0 else args.cap
    try:
        required = {p.crop for p in photos if p.quality_flag == "train_ok"}
        assignment = build_sets(mature, args.seed, args.n_train, args.n_balanced, cap, required)
    except SamplingError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SHORTFALL
    for p in photos:
        assignment.sets.setdefault(p.photo_id, "unused")
    write_assignment(args.out, assignment)
    counts = Counter(assignment.sets.values())
    summary = {
        "seed": args.seed,
        "rng": RNG_ALGORITHM,
        "training": counts["training"],
        "balanced_inference": counts["balanced_inference"],
        "imbalanced_inference": len(assignment.imbalanced),
        "immature_excluded": len(photos) - len(mature),
    }
    _write_json(Path(args.out).with_suffix(".json"), summary)
    return EXIT_OK


# -- analyze -----------------------------------------------------------------

def _metric_reports(records, out: Path, suffix: str = "") -> dict:
    cm = confusion(records)
    values = {"n": len(records), "oa": overall_accuracy(cm), "macro_f1": macro_f1(cm)}
    _write_csv(out / f"metrics{suffix}.csv", ["metric", "value"], values.items())
    _write_csv(out / f"confusion{suffix}.csv", ["true\\pred", *cm.labels],
               ([label, *map(int, row)] for label, row in zip(cm.labels, cm.counts)))
    pua = producer_user_accuracy(cm)
    _write_csv(out / f"pa_ua{suffix}.csv", ["class", "pa", "ua", "pa_defined", "ua_defined", "support", "predicted"],
               ([a.label, a.pa, a.ua, int(a.pa_defined), int(a.ua_defined), a.support, a.predicted] for a in pua))
    _write_json(out / f"metrics{suffix}.json", values)
    _write_json(out / f"confusion{suffix}.json",
                {"labels": list(cm.labels), "counts": cm.counts.tolist(),
                 "pa_ua": [vars(a) for a in pua]})
    return values


def cmd_analyze(args) -> int:
    records = read_predictions(args.predictions)
    if not records:
        raise UsageError("predictions file holds no records")
    out = _out_dir(args.out_dir)
    _metric_reports(records, out)
    if args.group:
        if args.group != "cereals":
            raise UsageError(f"unknown grouping {args.group!r}")
        _metric_reports(remap_classes(records, cereal_grouping()), out, "_cereals")
    for key in args.strata or []:
        strata = metric_by_stratum(records, key, "macro_f1", args.min_stratum)
        _write_csv(out / f"strata_{key}.csv", [key, "macro_f1", "n", "small"],
                   ([s, v.value, v.n, int(v.small)] for s, v in strata.items()))
    if args.resolution:
        fit = resolution_correlation(records)
        _write_csv(out / "resolution.csv", ["bin_lo", "bin_hi", "midpoint", "n", "proportion_correct"],
                   ([b.lo, "" if b.hi is None else b.hi, b.midpoint, b.n, b.proportion_correct] for b in fit.bins))
        _write_json(out / "resolution.json", {
            "r_squared": fit.r_squared, "slope": fit.slope, "intercept": fit.intercept,
            "defined": fit.defined, "bins": [vars(b) for b in fit.bins],
        })
    return EXIT_OK


# -- filter ------------------------------------------------------------------

def cmd_filter(args) -> int:
    scored = ScoredSet.from_records(read_predictions(args.predictions))
    if len(scored) == 0:
        raise UsageError("predictions file holds no records")
    out = _out_dir(args.out_dir)
    thresholds = {m: search_threshold(scored, ThresholdSearchParams(args.loss, m)) for m in ("MP", "ERP")}
    if args.mode == "quadrant":
        report = quadrant_methods(scored, thresholds["MP"].threshold, thresholds["ERP"].threshold).to_dict()
    else:
        name = args.mode.upper()
        res = thresholds[name]
        keep = scored.metric(name) >= res.threshold
        kept = scored.subset(keep)
        report = {
            "metric": name,
            "threshold": res.threshold,
            "n": len(scored),
            "retained": int(keep.sum()),
            "excluded_correct": res.excluded_correct,
            "excluded_incorrect": res.excluded_incorrect,
            "unfiltered_m_f1": macro_f1(confusion(scored.records)),
            "m_f1": macro_f1(confusion(kept.records)) if len(kept) else None,
        }
    report["max_correct_loss"] = args.loss
    _write_json(out / "filter-report.json", report)
    if args.sweep:
        pts = threshold_sweep(scored, args.metric, args.step)
        _write_csv(out / "sweep.csv", ["t", "m_f1", "n_remaining"],
                   ([p.t, "" if p.m_f1 is None else p.m_f1, p.n_remaining] for p in pts))
    if args.hist:
        h = metric_histograms(scored, args.metric, args.bin_width)
        _write_csv(out / "hist.csv", ["bin_lo", "bin_hi", "correct", "incorrect"], h.to_rows())
    return EXIT_OK


# -- conditions --------------------------------------------------------------

def cmd_conditions(args) -> int:
    records = read_predictions(args.predictions)
    tagged = [r for r in records if r.condition != "none"]
    reference = [r for r in records if r.condition == "none"]
    if args.reference:
        reference = read_predictions(args.reference)
    try:
        report = condition_report(tagged, reference, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_conditions(args.out, report)
    if report.missing:
        log.warning("no records for conditions: %s", ", ".join(report.missing))
    return EXIT_OK


# -- search ------------------------------------------------------------------

def cmd_search(args) -> int:
    exp = _load_toml(args.experiment) if args.experiment else {}
    search = exp.get("search", {})
    space = SearchSpace.from_dict(exp.get("space", {}))
    trainer = args.trainer or search.get("trainer")
    inference = args.inference_set or search.get("inference_set")
    if not trainer or not inference:
        raise UsageError("a trainer command and an inference set are required")
    out = _out_dir(args.out_dir)
    seed = args.seed if args.seed is not None else search.get("seed", 0)
    jobs = args.jobs if args.jobs is not None else search.get("parallelism", 1)
    try:
        outcome = two_round_protocol(
            trainer, inference, args.workdir or out / "trials",
            n=search.get("n", 157), top_k=search.get("top_k", 5), seed=seed, space=space,
            parallelism=jobs, imbalanced_set_ref=args.imbalanced_set or search.get("imbalanced_set"),
            timeout=search.get("timeout"),
        )
    except SearchError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_TRAINER
    write_table3(out / "table3.csv", outcome.table(search.get("report_columns")))
    _write_json(out / "best_model.json", best_record(outcome))
    for flag in outcome.flags:
        log.warning(flag)
    return EXIT_OK


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    from dataclasses import replace

    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    n = write_synthetic(args.out, spec)
    log.info("wrote %d records", n)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cropsight", description="Crop photo classification evaluation tools.")
    ap.add_argument("--config", help="cropsight.toml with per-command defaults")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calendar", help="harmonise calendars and derive mature windows")
    p.add_argument("--calendars", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--overrides")
    p.add_argument("--out", default="maturity.csv")
    p.add_argument("--gaps-out")
    p.add_argument("--allow-gaps", action="store_true")
    p.set_defaults(func=cmd_calendar)

    p = sub.add_parser("select", help="build training and inference sets")
    p.add_argument("--photos", required=True)
    p.add_argument("--maturity", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-balanced", type=int, default=85)
    p.add_argument("--cap", type=int, default=1000, help="per-class cap for the imbalanced set; 0 disables")
    p.add_argument("--out", default="assignment.csv")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("analyze", help="accuracy metrics for a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--group", choices=["cereals"])
    p.add_argument("--strata", type=lambda s: [k for k in s.split(",") if k], default=None,
                   help=f"comma-separated subset of {','.join(STRATUM_KEYS)}")
    p.add_argument("--min-stratum", type=int, default=30)
    p.add_argument("--resolution", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("filter", help="MP/ERP threshold filtering")
    p.add_argument("--predictions", required=True)
    p.add_argument("--loss", type=float, default=0.01)
    p.add_argument("--mode", choices=["mp", "erp", "quadrant"], default="quadrant")
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--hist", action="store_true")
    p.add_argument("--metric", choices=["mp", "erp"], default="erp")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--bin-width", type=float, default=0.01)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("conditions", help="unfavourable-condition summaries")
    p.add_argument("--predictions", required=True, help="tagged records; untagged rows act as reference")
    p.add_argument("--reference", help="separate reference predictions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="conditions.csv")
    p.set_defaults(func=cmd_conditions)

    p = sub.add_parser("search", help="two-round random hyper-parameter search")
    p.add_argument("--experiment", help="experiment.toml")
    p.add_argument("--trainer")
    p.add_argument("--inference-set")
    p.add_argument("--imbalanced-set")
    p.add_argument("--workdir")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("synth", help="generate a synthetic predictions file")
    p.add_argument("--spec", required=True, help="synth.toml")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_synth)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    data = _load_toml(known.config)
    shared = data.get("defaults", {})
    for action in ap._subparsers._group_actions:
        for name, sub in action.choices.items():
            dests = {a.dest for a in sub._actions}
            section = {**shared, **data.get(name, {})}
            sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()
                                if k.replace("-", "_") in dests})
            # config values satisfy required options
            for a in sub._actions:
                if a.dest in section or a.dest.replace("_", "-") in section:
                    a.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
    except UsageError as exc:
        print(f"cropsight: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, cal.CalendarError, PredictionsFormatError, ValueError, OSError) as exc:
        print(f"cropsight {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
