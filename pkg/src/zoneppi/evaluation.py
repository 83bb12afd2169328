"""Bootstrap evaluation protocol: resampled replicates per zone, relative
efficiencies against the labeled mean, and empirical coverage.

Each replicate of a zone draws n labeled fields with replacement from the
zone's original labeled fields (keeping yield, prediction, and coordinates)
and, independently, N = round(multiplier * n) unlabeled fields with
replacement (keeping prediction and coordinates only).  The estimand for the
replicate is the mean yield of the zone's original fields, so squared errors
and coverage are measured against a known target.  Predictions come from the
original records and are never recomputed across resamples; control
functions, by contrast, are refit per replicate on the resampled labeled
data (pooled at the configured scale) unless ``refit_control_per_rep`` is
off, in which case they are learned once from the original data.

Two relative-efficiency definitions are supported: the default divides the
mean squared error of the labeled mean by that of the estimator (a ratio of
averages); ``re_average_of_ratios`` instead averages per-replicate ratios.
Cross-zone uncertainty bands come from a BCa bootstrap over zones.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ci as ci_mod
from .ci import CiMethod
from .data import ZoneDataset
from .estimators import EstimatorKind, ppi_estimate
from .features import expand_matrix
from .lasso import ControlFunction
from .pipeline import (
    PipelineConfig,
    assign_folds,
    cross_fit_predictions,
    fit_control_function,
    linear_trainer,
    pooling_key,
)
from .util import parallel_map, subseed, substream

logger = logging.getLogger(__name__)

GROUP_ALL = "all"


@dataclass
class EvalConfig:
    reps_per_zone: int = 10
    unlabeled_multiplier: float = 4.0
    estimators: tuple[EstimatorKind, ...] = (EstimatorKind.LBL, EstimatorKind.PPIPP)
    ci_method: CiMethod = CiMethod.BCA
    alpha: float = 0.05
    B: int = 1000
    seed: int = 0
    refit_control_per_rep: bool = True
    re_average_of_ratios: bool = False

    def __post_init__(self) -> None:
        self.estimators = tuple(EstimatorKind(e) for e in self.estimators)
        self.ci_method = CiMethod(self.ci_method)
        if self.reps_per_zone < 1:
            raise ValueError("reps_per_zone must be >= 1")
        if self.unlabeled_multiplier <= 0:
            raise ValueError("unlabeled_multiplier must be > 0")
        if not self.estimators:
            raise ValueError("need at least one estimator")
        if self.ci_method is not CiMethod.CLT and self.B < 100:
            raise ValueError("B must be >= 100 for bootstrap intervals")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")


@dataclass
class Replicate:
    """One resampled dataset for a zone, plus the fixed estimand."""

    zone_id: str
    n: int
    N: int
    theta: float
    y: np.ndarray
    pred_lbl: np.ndarray
    cov_lbl: np.ndarray
    pred_unl: np.ndarray
    cov_unl: np.ndarray


@dataclass
class CellResult:
    """Outcome of one (zone, replicate, estimator) task."""

    zone_id: str
    rep: int
    estimator: EstimatorKind
    n: int
    theta: float
    theta_hat: float = math.nan
    sq_error: float = math.nan
    ci_width: float = math.nan
    covered: bool = False
    ok: bool = True


@dataclass
class GroupMetrics:
    estimator: EstimatorKind
    mse_re: float
    ci_re: float
    coverage: float
    mse_re_band: tuple[float, float]
    ci_re_band: tuple[float, float]
    cells: int
    failures: int


@dataclass
class ZoneEss:
    """Per-zone effective sample sizes for one estimator."""

    zone_id: str
    estimator: EstimatorKind
    n: int
    mse_ess: float
    ci_ess: float


@dataclass
class EvaluationReport:
    group: str
    metrics: list[GroupMetrics]
    zone_ess: list[ZoneEss] = field(default_factory=list)


def make_replicate(zone: ZoneDataset, config: EvalConfig, rep: int) -> Replicate:
    """Draw the rep-th resampled dataset for a zone.

    Deterministic given (config.seed, zone_id, rep).  The unlabeled draw
    keeps prediction and coordinates jointly, preserving their dependence.
    """
    pool = zone.labeled
    n = len(pool)
    if n < 1:
        raise ValueError(f"zone {zone.zone_id} has no labeled fields")
    if any(rec.prediction is None for rec in pool):
        raise ValueError(f"zone {zone.zone_id} has fields without predictions")
    N = int(round(config.unlabeled_multiplier * n))

    y = np.array([rec.yield_ for rec in pool], dtype=float)
    pred = np.array([rec.prediction for rec in pool], dtype=float)
    cov = np.array([(rec.latitude, rec.longitude) for rec in pool], dtype=float)

    rng = substream(config.seed, "replicate", zone.zone_id, rep)
    il = rng.integers(0, n, n)
    iu = rng.integers(0, n, N)
    return Replicate(
        zone_id=zone.zone_id,
        n=n,
        N=N,
        theta=float(y.mean()),
        y=y[il],
        pred_lbl=pred[il],
        cov_lbl=cov[il],
        pred_unl=pred[iu],
        cov_unl=cov[iu],
    )


def _flavors(estimators: tuple[EstimatorKind, ...]) -> list[bool]:
    """Which basis flavors (include_prediction values) the estimator set needs."""
    out = []
    if any(e.uses_control_function and e.include_prediction for e in estimators):
        out.append(True)
    if EstimatorKind.NOPHOTO in estimators:
        out.append(False)
    return out


def _fit_controls(
    zones: list[ZoneDataset],
    data: dict[str, Replicate],
    pipe: PipelineConfig,
    flavors: list[bool],
    cv_seed: int,
    threads: int,
) -> dict[tuple[bool, str], ControlFunction]:
    """Control functions per (flavor, pooling unit) from per-zone row blocks."""
    units: dict[str, list[Replicate]] = {}
    for zone in zones:
        key = pooling_key(zone, pipe.pooling_scale)
        units.setdefault(key, []).append(data[zone.zone_id])

    tasks = [(flavor, key) for flavor in flavors for key in sorted(units)]

    def fit(task: tuple[bool, str]) -> tuple[tuple[bool, str], ControlFunction]:
        flavor, key = task
        members = units[key]
        cf = fit_control_function(
            np.concatenate([r.y for r in members]),
            np.concatenate([r.pred_lbl for r in members]),
            np.vstack([r.cov_lbl for r in members]),
            flavor,
            key,
            subseed(cv_seed, "flavor", int(flavor), key),
        )
        return task, cf

    return dict(parallel_map(fit, tasks, threads))


def _estimate_cell(
    rep_data: Replicate,
    rep: int,
    kind: EstimatorKind,
    cf: ControlFunction | None,
    eval_config: EvalConfig,
    boot_seed: int,
) -> CellResult:
    cell = CellResult(
        zone_id=rep_data.zone_id, rep=rep, estimator=kind,
        n=rep_data.n, theta=rep_data.theta,
    )
    try:
        if kind.uses_control_function:
            basis_lbl = expand_matrix(
                rep_data.pred_lbl, rep_data.cov_lbl, cf.include_prediction
            )
            basis_unl = expand_matrix(
                rep_data.pred_unl, rep_data.cov_unl, cf.include_prediction
            )
            est = ppi_estimate(
                rep_data.y, cf.evaluate(basis_lbl), cf.evaluate(basis_unl),
                kind, rep_data.zone_id,
            )
            pairs = list(zip(rep_data.y, basis_lbl))
            unl_rows = list(basis_unl)
        else:
            est = ppi_estimate(rep_data.y, kind=kind, zone_id=rep_data.zone_id)
            pairs = [(v, None) for v in rep_data.y]
            unl_rows = [None] * rep_data.N

        if eval_config.ci_method is CiMethod.CLT:
            interval = ci_mod.clt_interval(est, eval_config.alpha)
        elif eval_config.ci_method is CiMethod.T:
            boots, ses = ci_mod.bootstrap_estimates(
                pairs, unl_rows, cf, kind, eval_config.B, boot_seed, return_se=True
            )
            interval = ci_mod.bootstrap_t_interval(
                est.theta_hat, est.se_plugin,
                np.column_stack([boots, ses]), eval_config.alpha,
            )
        else:
            boots = ci_mod.bootstrap_estimates(
                pairs, unl_rows, cf, kind, eval_config.B, boot_seed
            )
            if eval_config.ci_method is CiMethod.PERCENTILE:
                interval = ci_mod.percentile_interval(boots, eval_config.alpha)
            else:
                jack = ci_mod.jackknife_estimates(pairs, unl_rows, cf, kind)
                interval = ci_mod.bca_interval(
                    est.theta_hat, boots, jack, eval_config.alpha
                )

        cell.theta_hat = est.theta_hat
        cell.sq_error = (est.theta_hat - rep_data.theta) ** 2
        cell.ci_width = interval.width
        cell.covered = bool(interval.lower <= rep_data.theta <= interval.upper)
    except Exception as exc:
        cell.ok = False
        logger.warning(
            "replicate failed (zone %s, rep %d, estimator %s): %s",
            rep_data.zone_id, rep, kind.value, exc,
        )
    return cell


def re_uncertainty_band(
    per_zone_ratios,
    B: int,
    alpha: float,
    seed: int,
) -> tuple[float, float]:
    """BCa band for a group relative efficiency, bootstrapping over zones.

    Accepts either one ratio per zone (the group value is their mean) or a
    (zones, 2) array of per-zone (numerator, denominator) sums (the group
    value is sum(num) / sum(den), the ratio-of-averages form).  The jackknife
    leaves one zone out at a time.
    """
    arr = np.asarray(per_zone_ratios, dtype=float)
    if arr.ndim == 1:
        arr = np.column_stack([arr, np.ones(arr.size)])
    J = arr.shape[0]
    if J < 3:
        raise ValueError("need at least 3 zones for an uncertainty band")

    def stat(rows: np.ndarray) -> float:
        return float(rows[:, 0].sum() / rows[:, 1].sum())

    point = stat(arr)
    boots = np.empty(B)
    for b in range(B):
        rng = substream(seed, "zone-boot", b)
        boots[b] = stat(arr[rng.integers(0, J, J)])
    jack = np.array([stat(np.delete(arr, j, axis=0)) for j in range(J)])
    interval = ci_mod.bca_interval(point, boots, jack, alpha)
    return interval.lower, interval.upper


def effective_sample_sizes(cells: list[CellResult]) -> list[ZoneEss]:
    """Per-zone effective sample sizes vs the labeled mean.

    mse_ess averages n * (squared error of lbl / squared error of estimator)
    over replicates; ci_ess averages n * (width lbl / width estimator)^2.
    Replicates with a zero denominator are skipped with a warning.
    """
    lbl = {
        (c.zone_id, c.rep): c
        for c in cells
        if c.estimator is EstimatorKind.LBL and c.ok
    }
    by_key: dict[tuple[str, str], list[CellResult]] = {}
    for c in cells:
        by_key.setdefault((c.zone_id, c.estimator.value), []).append(c)

    out: list[ZoneEss] = []
    for (zone_id, _), group in sorted(by_key.items()):
        kind = group[0].estimator
        n = group[0].n
        mse_ratios, ci_ratios = [], []
        for c in group:
            base = lbl.get((c.zone_id, c.rep))
            if base is None or not c.ok:
                continue
            if c.sq_error == 0.0:
                logger.warning(
                    "zone %s rep %d: zero squared error for %s; rep skipped in ESS",
                    zone_id, c.rep, kind.value,
                )
            else:
                mse_ratios.append(base.sq_error / c.sq_error)
            if c.ci_width == 0.0:
                logger.warning(
                    "zone %s rep %d: zero CI width for %s; rep skipped in ESS",
                    zone_id, c.rep, kind.value,
                )
            else:
                ci_ratios.append((base.ci_width / c.ci_width) ** 2)
        out.append(
            ZoneEss(
                zone_id=zone_id,
                estimator=kind,
                n=n,
                mse_ess=float(n * np.mean(mse_ratios)) if mse_ratios else math.nan,
                ci_ess=float(n * np.mean(ci_ratios)) if ci_ratios else math.nan,
            )
        )
    return out


def _zone_pairs(paired, zone_ids, num_fn, den_fn) -> np.ndarray:
    """Per-zone (sum of numerators, sum of denominators) over paired cells."""
    sums = {z: [0.0, 0.0] for z in zone_ids}
    for base, cell in paired:
        sums[cell.zone_id][0] += num_fn(base, cell)
        sums[cell.zone_id][1] += den_fn(base, cell)
    return np.array([sums[z] for z in zone_ids if sums[z][1] != 0.0 or sums[z][0] != 0.0])


def _safe_band(pairs: np.ndarray, B: int, alpha: float, seed: int,
               square: bool = False) -> tuple[float, float]:
    try:
        lo, hi = re_uncertainty_band(pairs, B, alpha, seed)
    except ValueError as exc:
        logger.warning("uncertainty band skipped: %s", exc)
        return math.nan, math.nan
    if square:
        lo, hi = lo * lo, hi * hi
    return lo, hi


def _group_metrics(
    cells: list[CellResult],
    estimators: tuple[EstimatorKind, ...],
    config: EvalConfig,
) -> list[GroupMetrics]:
    lbl = {
        (c.zone_id, c.rep): c
        for c in cells
        if c.estimator is EstimatorKind.LBL and c.ok
    }
    band_B = config.B if config.B >= 100 else 1000
    metrics: list[GroupMetrics] = []
    for kind in estimators:
        own = [c for c in cells if c.estimator is kind]
        paired = [
            (lbl[(c.zone_id, c.rep)], c)
            for c in own
            if c.ok and (c.zone_id, c.rep) in lbl
        ]
        failures = sum(1 for c in own if not c.ok)
        ok_cells = [c for c in own if c.ok]
        coverage = float(np.mean([c.covered for c in ok_cells])) if ok_cells else math.nan
        if not paired:
            metrics.append(
                GroupMetrics(kind, math.nan, math.nan, coverage,
                             (math.nan, math.nan), (math.nan, math.nan), 0, failures)
            )
            continue

        zone_ids = sorted({c.zone_id for _, c in paired})
        band_seed = subseed(config.seed, "band", kind.value)
        if config.re_average_of_ratios:
            mse_pairs = _zone_pairs(
                [(b, c) for b, c in paired if c.sq_error > 0.0], zone_ids,
                lambda b, c: b.sq_error / c.sq_error, lambda b, c: 1.0,
            )
            ci_pairs = _zone_pairs(
                [(b, c) for b, c in paired if c.ci_width > 0.0], zone_ids,
                lambda b, c: (b.ci_width / c.ci_width) ** 2, lambda b, c: 1.0,
            )
            mse_re = float(mse_pairs[:, 0].sum() / mse_pairs[:, 1].sum()) if mse_pairs.size else math.nan
            ci_re = float(ci_pairs[:, 0].sum() / ci_pairs[:, 1].sum()) if ci_pairs.size else math.nan
            mse_band = _safe_band(mse_pairs, band_B, config.alpha, subseed(band_seed, "mse"))
            ci_band = _safe_band(ci_pairs, band_B, config.alpha, subseed(band_seed, "ci"))
        else:
            mse_pairs = _zone_pairs(
                paired, zone_ids, lambda b, c: b.sq_error, lambda b, c: c.sq_error
            )
            ci_pairs = _zone_pairs(
                paired, zone_ids, lambda b, c: b.ci_width, lambda b, c: c.ci_width
            )
            den = sum(c.sq_error for _, c in paired)
            mse_re = float(sum(b.sq_error for b, _ in paired) / den) if den > 0 else math.nan
            w_den = sum(c.ci_width for _, c in paired)
            ci_re = (
                (sum(b.ci_width for b, _ in paired) / w_den) ** 2 if w_den > 0 else math.nan
            )
            mse_band = _safe_band(mse_pairs, band_B, config.alpha, subseed(band_seed, "mse"))
            ci_band = _safe_band(
                ci_pairs, band_B, config.alpha, subseed(band_seed, "ci"), square=True
            )

        metrics.append(
            GroupMetrics(
                estimator=kind,
                mse_re=mse_re,
                ci_re=ci_re,
                coverage=coverage,
                mse_re_band=mse_band,
                ci_re_band=ci_band,
                cells=len(paired),
                failures=failures,
            )
        )
    return metrics


def run_evaluation(
    zones: list[ZoneDataset],
    pipeline_config: PipelineConfig,
    eval_config: EvalConfig,
    threads: int = 1,
    collect: dict | None = None,
) -> EvaluationReport:
    """Run the full protocol over prepared zones.

    ``zones`` must already be eligibility-filtered with study regions
    assigned (the CLI does both).  The labeled-mean estimator is always
    computed internally as the comparison baseline, whether or not it is in
    the requested estimator set.  With ``collect``, the raw per-cell results
    are stored under ``"cells"``.
    """
    if not zones:
        raise ValueError("no zones to evaluate")
    if any(not z.study_region for z in zones):
        raise ValueError("zones must have study regions assigned")
    zones = sorted(zones, key=lambda z: z.zone_id)

    folds = assign_folds(zones, pipeline_config.folds, pipeline_config.seed)
    trainer = linear_trainer if pipeline_config.predictor == "linear" else None
    predmap = cross_fit_predictions(zones, folds, trainer, pipeline_config.folds)
    zones = [
        ZoneDataset(
            z.zone_id,
            z.study_region,
            [replace(rec, prediction=predmap[rec.field_id]) for rec in z.labeled],
            list(z.unlabeled),
        )
        for z in zones
    ]

    kinds = eval_config.estimators
    run_kinds = kinds if EstimatorKind.LBL in kinds else (EstimatorKind.LBL,) + kinds
    flavors = _flavors(run_kinds)

    original = {
        z.zone_id: Replicate(
            zone_id=z.zone_id,
            n=z.n,
            N=z.n,
            theta=float(np.mean([r.yield_ for r in z.labeled])),
            y=np.array([r.yield_ for r in z.labeled], dtype=float),
            pred_lbl=np.array([r.prediction for r in z.labeled], dtype=float),
            cov_lbl=np.array([(r.latitude, r.longitude) for r in z.labeled], dtype=float),
            pred_unl=np.zeros(0),
            cov_unl=np.zeros((0, 2)),
        )
        for z in zones
    }
    fixed_cfs: dict[tuple[bool, str], ControlFunction] | None = None
    if flavors and not eval_config.refit_control_per_rep:
        fixed_cfs = _fit_controls(
            zones, original, pipeline_config, flavors,
            subseed(eval_config.seed, "cv-fixed"), threads,
        )

    cells: list[CellResult] = []
    for rep in range(eval_config.reps_per_zone):
        reps = {z.zone_id: make_replicate(z, eval_config, rep) for z in zones}
        if flavors and eval_config.refit_control_per_rep:
            cfs = _fit_controls(
                zones, reps, pipeline_config, flavors,
                subseed(eval_config.seed, "cv", rep), threads,
            )
        else:
            cfs = fixed_cfs or {}

        def zone_cells(zone: ZoneDataset) -> list[CellResult]:
            out = []
            key = pooling_key(zone, pipeline_config.pooling_scale)
            for kind in run_kinds:
                cf = cfs.get((kind.include_prediction, key)) if kind.uses_control_function else None
                out.append(
                    _estimate_cell(
                        reps[zone.zone_id], rep, kind, cf, eval_config,
                        subseed(eval_config.seed, "ci", zone.zone_id, rep, kind.value),
                    )
                )
            return out

        for chunk in parallel_map(zone_cells, zones, threads):
            cells.extend(chunk)

    if collect is not None:
        collect["cells"] = cells
    return EvaluationReport(
        group=GROUP_ALL,
        metrics=_group_metrics(cells, kinds, eval_config),
        zone_ess=[z for z in effective_sample_sizes(cells) if z.estimator in kinds],
    )


def report_to_dict(report: EvaluationReport) -> dict:
    def _num(v: float) -> float | None:
        return None if (isinstance(v, float) and math.isnan(v)) else v

    return {
        "group": report.group,
        "metrics": [
            {
                "estimator": m.estimator.value,
                "mse_re": _num(m.mse_re),
                "ci_re": _num(m.ci_re),
                "coverage": _num(m.coverage),
                "mse_re_band": [_num(m.mse_re_band[0]), _num(m.mse_re_band[1])],
                "ci_re_band": [_num(m.ci_re_band[0]), _num(m.ci_re_band[1])],
                "cells": m.cells,
                "failures": m.failures,
            }
            for m in report.metrics
        ],
        "zone_ess": [
            {
                "zone_id": z.zone_id,
                "estimator": z.estimator.value,
                "n": z.n,
                "mse_ess": _num(z.mse_ess),
                "ci_ess": _num(z.ci_ess),
            }
            for z in report.zone_ess
        ],
    }


GROUP_CSV_COLUMNS = (
    "group", "estimator", "mse_re", "mse_re_lo", "mse_re_hi",
    "ci_re", "ci_re_lo", "ci_re_hi", "coverage", "cells", "failures",
)

ESS_CSV_COLUMNS = ("zone_id", "estimator", "n", "mse_ess", "ci_ess")


def group_csv_rows(report: EvaluationReport) -> list[list]:
    return [
        [
            report.group,
            m.estimator.value,
            repr(m.mse_re),
            repr(m.mse_re_band[0]),
            repr(m.mse_re_band[1]),
            repr(m.ci_re),
            repr(m.ci_re_band[0]),
            repr(m.ci_re_band[1]),
            repr(m.coverage),
            m.cells,
            m.failures,
        ]
        for m in report.metrics
    ]


def ess_csv_rows(report: EvaluationReport) -> list[list]:
    return [
        [z.zone_id, z.estimator.value, z.n, repr(z.mse_ess), repr(z.ci_ess)]
        for z in report.zone_ess
    ]
