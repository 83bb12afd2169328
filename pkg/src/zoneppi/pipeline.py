"""End-to-end orchestration: folds, cross-fitted predictions, pooled control
functions, and per-zone estimates with confidence intervals.

The flow for one run:

1. filter zones by labeled-field count and assign each to a study region;
2. deal each zone's labeled fields into K folds (sizes differ by at most 1);
3. produce a prediction for every field, either read from the input column
   (``predictor="column"``) or by training a least-squares model on numeric
   features per fold complement (``predictor="linear"``), so that no labeled
   field is predicted by a model that saw it, and unlabeled fields get the
   average of all K fold models;
4. learn one control function per pooling unit (zone, study region, or the
   whole dataset) by 5-fold cross-validated LASSO on the expanded basis;
5. per zone, compute the configured estimator and confidence interval.

All randomness is keyed by (config.seed, purpose, unit), so output bytes are
identical across thread counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ci as ci_mod
from .ci import CiMethod, ConfidenceInterval
from .data import FieldRecord, ZoneDataset, assign_study_regions, filter_eligible_zones
from .estimators import (
    EstimateResult,
    EstimatorKind,
    ppi_estimate,
    r_squared_within,
    theoretical_re,
)
from .features import basis_labels, expand_matrix
from .lasso import ControlFunction, cv_select, intercept_only
from .util import parallel_map, subseed, substream

logger = logging.getLogger(__name__)

POOLING_SCALES = ("zone", "region", "global")
PREDICTORS = ("column", "linear")
CV_FOLDS = 5
MIN_UNIT_ROWS = CV_FOLDS + 2

Trainer = Callable[[np.ndarray, np.ndarray], Callable[[np.ndarray], np.ndarray]]


class PipelineError(RuntimeError):
    """A module error annotated with the zone or region it occurred in."""


@dataclass
class PipelineConfig:
    folds: int = 5
    pooling_scale: str = "region"
    estimator: EstimatorKind = EstimatorKind.PPIPP
    ci_method: CiMethod = CiMethod.BCA
    alpha: float = 0.05
    B: int = 1000
    min_zone_size: int = 20
    seed: int = 0
    predictor: str = "column"

    def __post_init__(self) -> None:
        self.estimator = EstimatorKind(self.estimator)
        self.ci_method = CiMethod(self.ci_method)
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.ci_method is not CiMethod.CLT and self.B < 100:
            raise ValueError("B must be >= 100 for bootstrap intervals")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.pooling_scale not in POOLING_SCALES:
            raise ValueError(f"pooling_scale must be one of {POOLING_SCALES}")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"predictor must be one of {PREDICTORS}")
        if self.min_zone_size < 1:
            raise ValueError("min_zone_size must be >= 1")


@dataclass
class ZoneReport:
    zone_id: str
    study_region: str
    estimate: EstimateResult
    ci: ConfidenceInterval
    r2_within: float
    re_theoretical: float


def assign_folds(zones: Sequence[ZoneDataset], K: int, seed: int) -> dict[str, int]:
    """Fold label per labeled field id; within-zone sizes differ by at most 1."""
    if K < 2:
        raise ValueError("K must be >= 2")
    folds: dict[str, int] = {}
    for zone in zones:
        rng = substream(seed, "folds", zone.zone_id)
        order = rng.permutation(zone.n)
        for k, chunk in enumerate(np.array_split(order, K)):
            for idx in chunk:
                folds[zone.labeled[idx].field_id] = k
    return folds


def linear_trainer(X: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Least-squares fit of yield on features, with intercept."""
    A = np.column_stack([np.ones(len(y)), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)

    def predict(Xnew: np.ndarray) -> np.ndarray:
        Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
        return np.column_stack([np.ones(Xnew.shape[0]), Xnew]) @ beta

    return predict


def _feature_matrix(records: Sequence[FieldRecord]) -> np.ndarray:
    missing = [r.field_id for r in records if r.features is None]
    if missing:
        raise ValueError(f"fields without features: {missing[:5]} (n={len(missing)})")
    return np.array([r.features for r in records], dtype=float)


def cross_fit_predictions(
    zones: Sequence[ZoneDataset],
    folds: Mapping[str, int],
    trainer: Trainer | None,
    K: int,
) -> dict[str, float]:
    """Prediction for every field, keyed by field id.

    With a trainer, fold k's model is fit on all labeled fields outside fold
    k (pooled across zones); each labeled field is predicted by its own
    fold's model and each unlabeled field by the average of all K models.
    With ``trainer=None`` the input prediction column is validated and passed
    through verbatim.
    """
    labeled = [rec for zone in zones for rec in zone.labeled]
    unlabeled = [rec for zone in zones for rec in zone.unlabeled]

    if trainer is None:
        missing = [r.field_id for r in labeled + unlabeled if r.prediction is None]
        if missing:
            raise ValueError(
                f"prediction column missing for fields: {missing[:5]} (n={len(missing)})"
            )
        return {r.field_id: float(r.prediction) for r in labeled + unlabeled}

    preds: dict[str, float] = {}
    X_unl = _feature_matrix(unlabeled) if unlabeled else None
    unl_sum = np.zeros(len(unlabeled))
    for k in range(K):
        train = [r for r in labeled if folds[r.field_id] != k]
        hold = [r for r in labeled if folds[r.field_id] == k]
        if not train:
            raise ValueError(f"fold {k} leaves no training data")
        model = trainer(_feature_matrix(train), np.array([r.yield_ for r in train]))
        if hold:
            for rec, p in zip(hold, model(_feature_matrix(hold))):
                preds[rec.field_id] = float(p)
        if unlabeled:
            unl_sum += model(X_unl)
    for rec, total in zip(unlabeled, unl_sum):
        preds[rec.field_id] = float(total / K)
    return preds


def pooling_key(zone: ZoneDataset, pooling_scale: str) -> str:
    if pooling_scale == "zone":
        return zone.zone_id
    if pooling_scale == "region":
        return zone.study_region
    return "global"


def fit_control_function(
    y: np.ndarray,
    predictions: np.ndarray,
    covariates: np.ndarray,
    include_prediction: bool,
    key: str,
    rng_seed: int,
) -> ControlFunction:
    """Cross-validated LASSO control function for one pooling unit.

    Units too small to cross-validate (fewer than 7 labeled fields) fall
    back to an intercept-only function at the unit's mean yield, which makes
    the downstream estimator coincide with the labeled mean.
    """
    y = np.asarray(y, dtype=float)
    basis = expand_matrix(predictions, covariates, include_prediction)
    if y.size < MIN_UNIT_ROWS:
        logger.warning(
            "pooling unit %s has %d labeled fields (< %d); "
            "falling back to intercept-only control function",
            key, y.size, MIN_UNIT_ROWS,
        )
        return intercept_only(y.mean(), include_prediction, key, basis.shape[1] - 1)
    fit = cv_select(basis[:, 1:], y, k=CV_FOLDS, rng_seed=rng_seed)
    return ControlFunction(fit, include_prediction, key)


def learn_control_functions(
    zones: Sequence[ZoneDataset],
    predictions: Mapping[str, float],
    pooling_scale: str,
    include_prediction: bool,
    cv_seed: int,
    threads: int = 1,
) -> dict[str, ControlFunction]:
    """One control function per pooling unit (zone, study region, or global)."""
    if pooling_scale not in POOLING_SCALES:
        raise ValueError(f"pooling_scale must be one of {POOLING_SCALES}")
    units: dict[str, list[ZoneDataset]] = {}
    for zone in zones:
        units.setdefault(pooling_key(zone, pooling_scale), []).append(zone)

    def fit_unit(item: tuple[str, list[ZoneDataset]]) -> tuple[str, ControlFunction]:
        key, members = item
        recs = [rec for zone in members for rec in zone.labeled]
        cf = fit_control_function(
            np.array([rec.yield_ for rec in recs], dtype=float),
            np.array([predictions[rec.field_id] for rec in recs], dtype=float),
            np.array([(rec.latitude, rec.longitude) for rec in recs], dtype=float),
            include_prediction,
            key,
            subseed(cv_seed, key),
        )
        return key, cf

    fitted = parallel_map(fit_unit, sorted(units.items()), threads)
    return dict(fitted)


def _interval(
    est: EstimateResult,
    pairs: list,
    unl_rows,
    cf: ControlFunction | None,
    config: PipelineConfig,
    boot_seed: int,
) -> ConfidenceInterval:
    kind, alpha = est.estimator, config.alpha
    if config.ci_method is CiMethod.CLT:
        return ci_mod.clt_interval(est, alpha)
    if config.ci_method is CiMethod.T:
        boots, ses = ci_mod.bootstrap_estimates(
            pairs, unl_rows, cf, kind, config.B, boot_seed, return_se=True
        )
        return ci_mod.bootstrap_t_interval(
            est.theta_hat, est.se_plugin, np.column_stack([boots, ses]), alpha
        )
    boots = ci_mod.bootstrap_estimates(pairs, unl_rows, cf, kind, config.B, boot_seed)
    if config.ci_method is CiMethod.PERCENTILE:
        return ci_mod.percentile_interval(boots, alpha)
    jack = ci_mod.jackknife_estimates(pairs, unl_rows, cf, kind)
    return ci_mod.bca_interval(est.theta_hat, boots, jack, alpha)


def estimate_zone(
    zone: ZoneDataset,
    predictions: Mapping[str, float],
    cf: ControlFunction | None,
    config: PipelineConfig,
    boot_seed: int,
) -> ZoneReport:
    """Estimator, CI, and efficiency context for one zone."""
    kind = config.estimator
    y = np.array([rec.yield_ for rec in zone.labeled], dtype=float)
    preds_lbl = np.array([predictions[rec.field_id] for rec in zone.labeled])

    if kind.uses_control_function:
        if cf is None:
            raise ValueError("estimator needs a control function")
        basis_lbl = expand_matrix(
            preds_lbl,
            [(rec.latitude, rec.longitude) for rec in zone.labeled],
            cf.include_prediction,
        )
        if zone.N:
            basis_unl = expand_matrix(
                [predictions[rec.field_id] for rec in zone.unlabeled],
                [(rec.latitude, rec.longitude) for rec in zone.unlabeled],
                cf.include_prediction,
            )
        else:
            basis_unl = np.zeros((0, basis_lbl.shape[1]))
        est = ppi_estimate(
            y, cf.evaluate(basis_lbl), cf.evaluate(basis_unl), kind, zone.zone_id
        )
        pairs = list(zip(y, basis_lbl))
        unl_rows = list(basis_unl)
    else:
        est = ppi_estimate(y, kind=kind, zone_id=zone.zone_id)
        est.N = zone.N
        pairs = [(v, None) for v in y]
        unl_rows = [None] * zone.N

    interval = _interval(est, pairs, unl_rows, cf, config, boot_seed)
    r2 = r_squared_within(y, preds_lbl) if zone.n >= 2 else 0.0
    return ZoneReport(
        zone_id=zone.zone_id,
        study_region=zone.study_region,
        estimate=est,
        ci=interval,
        r2_within=r2,
        re_theoretical=theoretical_re(r2, zone.n, zone.N),
    )


def run_pipeline(
    records: Sequence[FieldRecord],
    config: PipelineConfig,
    threads: int = 1,
    collect: dict | None = None,
) -> list[ZoneReport]:
    """Run the full procedure over a record list; reports sorted by zone id.

    ``collect``, when given, receives the learned control functions and the
    per-field predictions for auditing.  Module errors are re-raised with the
    zone or region they occurred in.
    """
    zones = filter_eligible_zones(records, config.min_zone_size)
    if not zones:
        raise ValueError("no eligible zones after filtering")
    zones = assign_study_regions(zones, config.seed)

    folds = assign_folds(zones, config.folds, config.seed)
    trainer = linear_trainer if config.predictor == "linear" else None
    predictions = cross_fit_predictions(zones, folds, trainer, config.folds)

    kind = config.estimator
    cfs: dict[str, ControlFunction] = {}
    if kind.uses_control_function:
        cfs = learn_control_functions(
            zones,
            predictions,
            config.pooling_scale,
            kind.include_prediction,
            subseed(config.seed, "cv"),
            threads,
        )

    def one_zone(zone: ZoneDataset) -> ZoneReport:
        cf = cfs.get(pooling_key(zone, config.pooling_scale))
        try:
            return estimate_zone(
                zone, predictions, cf, config,
                subseed(config.seed, "boot", zone.zone_id),
            )
        except Exception as exc:
            raise PipelineError(
                f"zone {zone.zone_id} (region {zone.study_region}): {exc}"
            ) from exc

    reports = parallel_map(one_zone, zones, threads)
    reports.sort(key=lambda r: r.zone_id)
    if collect is not None:
        collect["control_functions"] = cfs
        collect["predictions"] = predictions
    return reports


def report_to_dict(report: ZoneReport) -> dict:
    return {
        "zone_id": report.zone_id,
        "study_region": report.study_region,
        "estimate": {
            "theta_hat": report.estimate.theta_hat,
            "lambda_hat": report.estimate.lambda_hat,
            "n": report.estimate.n,
            "N": report.estimate.N,
            "se_plugin": report.estimate.se_plugin,
            "estimator": report.estimate.estimator.value,
        },
        "ci": {
            "lower": report.ci.lower,
            "upper": report.ci.upper,
            "alpha": report.ci.alpha,
            "method": report.ci.method.value,
            "B": report.ci.B,
            "diagnostics": report.ci.diagnostics,
        },
        "r2_within": report.r2_within,
        "re_theoretical": report.re_theoretical,
    }


def control_functions_to_dict(cfs: Mapping[str, ControlFunction]) -> dict:
    out = {}
    for key, cf in sorted(cfs.items()):
        p = 2  # latitude, longitude
        out[key] = {
            "intercept": cf.fit.intercept,
            "coefficients": dict(
                zip(basis_labels(p, cf.include_prediction)[1:],
                    map(float, cf.fit.coefficients))
            ),
            "penalty": cf.fit.penalty,
            "cv_error": cf.fit.cv_error,
            "include_prediction": cf.include_prediction,
            "fallback": cf.fallback,
        }
    return out


REPORT_CSV_COLUMNS = (
    "zone_id", "region", "estimator", "theta_hat", "lambda_hat", "se_plugin",
    "ci_lower", "ci_upper", "n", "N", "r2_within", "re_theoretical",
)


def report_csv_row(report: ZoneReport) -> list:
    return [
        report.zone_id,
        report.study_region,
        report.estimate.estimator.value,
        repr(report.estimate.theta_hat),
        repr(report.estimate.lambda_hat),
        repr(report.estimate.se_plugin),
        repr(report.ci.lower),
        repr(report.ci.upper),
        report.estimate.n,
        report.estimate.N,
        repr(report.r2_within),
        repr(report.re_theoretical),
    ]
