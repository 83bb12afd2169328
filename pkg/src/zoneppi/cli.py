"""Command-line entry point: simulate / estimate / evaluate / theory.

Every subcommand accepts ``--config`` (a flat JSON file whose keys mirror the
config dataclass fields) plus flag overrides; flags win over the file.  All
randomness flows from ``--seed``.  Exit codes: 0 success, 1 data or runtime
error (with a machine-readable JSON diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation as eval_mod
from . import pipeline as pipe_mod
from .ci import CiMethod
from .data import assign_study_regions, filter_eligible_zones, load_dataset, write_dataset
from .estimators import EstimatorKind, r_squared_within, theoretical_re
from .evaluation import EvalConfig, run_evaluation
from .pipeline import PipelineConfig, run_pipeline
from .synth import SynthConfig, generate

logger = logging.getLogger(__name__)

ESTIMATOR_CHOICES = [k.value for k in EstimatorKind]
CI_CHOICES = [m.value for m in CiMethod]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None, help="master RNG seed (default 0)")
    p.add_argument("--output-dir", type=Path, default=Path("."),
                   help="directory for output files (default .)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; output is identical for any value (default 1)")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", type=Path, required=True, help="input CSV of field records")
    p.add_argument("--estimator", choices=ESTIMATOR_CHOICES, default=None,
                   help="point estimator (default ppipp)")
    p.add_argument("--ci", choices=CI_CHOICES, default=None,
                   help="confidence interval method (default bca)")
    p.add_argument("--alpha", type=float, default=None,
                   help="significance level (default 0.05)")
    p.add_argument("--bootstrap-samples", type=int, default=None, dest="B",
                   help="bootstrap replicates B (default 1000)")
    p.add_argument("--folds", type=int, default=None,
                   help="cross-fitting folds K (default 5)")
    p.add_argument("--pool-scale", choices=pipe_mod.POOLING_SCALES, default=None,
                   help="control-function pooling scale (default region)")
    p.add_argument("--min-zone-size", type=int, default=None,
                   help="labeled fields required per zone (default 20)")
    p.add_argument("--predictor", choices=pipe_mod.PREDICTORS, default=None,
                   help="prediction source: input column or linear model on features "
                        "(default column)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoneppi",
        description="Prediction-powered zone-mean yield estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic field-record CSV")
    _add_common(p_sim)
    p_sim.add_argument("--output", type=Path, default=None,
                       help="output CSV path (default <output-dir>/synthetic.csv)")
    p_sim.add_argument("--n-zones", type=int, default=None, help="zones (default 10)")
    p_sim.add_argument("--fields-per-zone", default=None,
                       help="fields per zone, an int or lo:hi range (default 40)")
    p_sim.add_argument("--zero-inflation", type=float, default=None,
                       help="probability of an exact-zero yield (default 0.2)")
    p_sim.add_argument("--yield-shape", type=float, default=None,
                       help="gamma shape of nonzero yields (default 2.0)")
    p_sim.add_argument("--yield-scale", type=float, default=None,
                       help="gamma scale of nonzero yields (default 1.0)")
    p_sim.add_argument("--target-r2", type=float, default=None,
                       help="within-zone squared correlation of predictions (default 0.2)")
    p_sim.add_argument("--spatial-trend", type=float, default=None,
                       help="yield trend per standardized latitude (default 0)")
    p_sim.add_argument("--n-regions", type=int, default=None,
                       help="study regions (default 2)")
    p_sim.add_argument("--feature-dim", type=int, default=None,
                       help="feature vector length (default 3)")

    p_est = sub.add_parser("estimate", help="per-zone estimates and intervals")
    _add_common(p_est)
    _add_pipeline_flags(p_est)

    p_ev = sub.add_parser("evaluate", help="bootstrap relative-efficiency evaluation")
    _add_common(p_ev)
    _add_pipeline_flags(p_ev)
    p_ev.add_argument("--estimators", default=None,
                      help="comma-separated estimator set (default lbl,ppipp)")
    p_ev.add_argument("--reps-per-zone", type=int, default=None,
                      help="resampled replicates per zone (default 10)")
    p_ev.add_argument("--unlabeled-multiplier", type=float, default=None,
                      help="unlabeled sample size as a multiple of n (default 4)")
    p_ev.add_argument("--no-refit-control", action="store_true",
                      help="learn control functions once instead of per replicate")
    p_ev.add_argument("--re-average-of-ratios", action="store_true",
                      help="average per-replicate error ratios instead of taking a "
                           "ratio of averages")

    p_th = sub.add_parser("theory", help="theoretical relative efficiencies per zone")
    _add_common(p_th)
    p_th.add_argument("--input", type=Path, required=True, help="input CSV of field records")
    p_th.add_argument("--min-zone-size", type=int, default=None,
                      help="labeled fields required per zone (default 20)")
    p_th.add_argument("--unlabeled-multiplier", type=float, default=None,
                      help="assumed unlabeled fields per labeled field (default 4)")

    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    with path.open(encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("config file must hold a JSON object")
    return obj


def _merged(args: argparse.Namespace, file_cfg: dict, fields: dict[str, str]) -> dict:
    """Config values from defaults <- file <- flags, for the given fields.

    ``fields`` maps config field name -> argparse attribute name.
    """
    out = {}
    for field_name, attr in fields.items():
        if getattr(args, attr, None) is not None:
            out[field_name] = getattr(args, attr)
        elif field_name in file_cfg:
            out[field_name] = file_cfg[field_name]
    return out


def _parse_fields_per_zone(raw) -> int | tuple[int, int]:
    if isinstance(raw, int):
        return raw
    if isinstance(raw, (list, tuple)):
        return int(raw[0]), int(raw[1])
    text = str(raw)
    if ":" in text:
        lo, hi = text.split(":", 1)
        return int(lo), int(hi)
    return int(text)


def _pipeline_config(args: argparse.Namespace, file_cfg: dict) -> PipelineConfig:
    merged = _merged(args, file_cfg, {
        "folds": "folds",
        "pooling_scale": "pool_scale",
        "estimator": "estimator",
        "ci_method": "ci",
        "alpha": "alpha",
        "B": "B",
        "min_zone_size": "min_zone_size",
        "seed": "seed",
        "predictor": "predictor",
    })
    return PipelineConfig(**merged)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_simulate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    merged = _merged(args, file_cfg, {
        "n_zones": "n_zones",
        "fields_per_zone": "fields_per_zone",
        "zero_inflation": "zero_inflation",
        "yield_shape": "yield_shape",
        "yield_scale": "yield_scale",
        "target_r2": "target_r2",
        "spatial_trend": "spatial_trend",
        "n_regions": "n_regions",
        "feature_dim": "feature_dim",
        "seed": "seed",
    })
    if "fields_per_zone" in merged:
        merged["fields_per_zone"] = _parse_fields_per_zone(merged["fields_per_zone"])
    config = SynthConfig(**merged)
    records = generate(config)
    out = args.output or (args.output_dir / "synthetic.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(records, out)
    print(f"wrote {len(records)} fields to {out}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    config = _pipeline_config(args, file_cfg)
    records = load_dataset(args.input)
    collect: dict = {}
    reports = run_pipeline(records, config, threads=args.threads, collect=collect)

    args.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        args.output_dir / "zone_reports.json",
        [pipe_mod.report_to_dict(r) for r in reports],
    )
    _write_json(
        args.output_dir / "control_functions.json",
        pipe_mod.control_functions_to_dict(collect.get("control_functions", {})),
    )
    _write_csv(
        args.output_dir / "zone_reports.csv",
        pipe_mod.REPORT_CSV_COLUMNS,
        [pipe_mod.report_csv_row(r) for r in reports],
    )
    print(f"wrote {len(reports)} zone reports to {args.output_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    pipe_cfg = _pipeline_config(args, file_cfg)
    merged = _merged(args, file_cfg, {
        "reps_per_zone": "reps_per_zone",
        "unlabeled_multiplier": "unlabeled_multiplier",
        "ci_method": "ci",
        "alpha": "alpha",
        "B": "B",
        "seed": "seed",
    })
    if args.estimators is not None:
        merged["estimators"] = tuple(s.strip() for s in args.estimators.split(","))
    elif "estimators" in file_cfg:
        merged["estimators"] = tuple(file_cfg["estimators"])
    if args.no_refit_control:
        merged["refit_control_per_rep"] = False
    elif "refit_control_per_rep" in file_cfg:
        merged["refit_control_per_rep"] = bool(file_cfg["refit_control_per_rep"])
    if args.re_average_of_ratios:
        merged["re_average_of_ratios"] = True
    elif "re_average_of_ratios" in file_cfg:
        merged["re_average_of_ratios"] = bool(file_cfg["re_average_of_ratios"])
    eval_cfg = EvalConfig(**merged)

    records = load_dataset(args.input)
    zones = filter_eligible_zones(records, pipe_cfg.min_zone_size)
    zones = assign_study_regions(zones, pipe_cfg.seed)
    report = run_evaluation(zones, pipe_cfg, eval_cfg, threads=args.threads)

    args.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(args.output_dir / "evaluation.json", eval_mod.report_to_dict(report))
    _write_csv(
        args.output_dir / "group_metrics.csv",
        eval_mod.GROUP_CSV_COLUMNS,
        eval_mod.group_csv_rows(report),
    )
    _write_csv(
        args.output_dir / "zone_ess.csv",
        eval_mod.ESS_CSV_COLUMNS,
        eval_mod.ess_csv_rows(report),
    )
    print(f"wrote evaluation report to {args.output_dir}")
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    min_zone = args.min_zone_size
    if min_zone is None:
        min_zone = int(file_cfg.get("min_zone_size", 20))
    mult = args.unlabeled_multiplier
    if mult is None:
        mult = float(file_cfg.get("unlabeled_multiplier", 4.0))
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))

    records = load_dataset(args.input)
    zones = assign_study_regions(filter_eligible_zones(records, min_zone), seed)
    rows = []
    for zone in zones:
        missing = [r for r in zone.labeled if r.prediction is None]
        if missing:
            raise ValueError(
                f"zone {zone.zone_id}: theory needs the prediction column on every "
                f"labeled field ({len(missing)} missing)"
            )
        y = [r.yield_ for r in zone.labeled]
        preds = [r.prediction for r in zone.labeled]
        r2 = r_squared_within(y, preds)
        n = zone.n
        N = int(round(mult * n))
        rows.append({
            "zone_id": zone.zone_id,
            "study_region": zone.study_region,
            "n": n,
            "N": N,
            "r2_within": r2,
            "re_theoretical": theoretical_re(r2, n, N),
        })
    group = {
        "zones": len(rows),
        "mean_r2_within": float(np.mean([r["r2_within"] for r in rows])),
        "mean_re_theoretical": float(np.mean([r["re_theoretical"] for r in rows])),
    }
    print(json.dumps({"zones": rows, "group": group}, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "theory": cmd_theory,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
