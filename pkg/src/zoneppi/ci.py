"""Confidence intervals around the zone-mean estimators.

The workhorse is a bias-corrected and accelerated (BCa) bootstrap: labeled
pairs and unlabeled rows are resampled with replacement, the point estimate
is recomputed per replicate with the control function held fixed (it is an
input, never refit here), and the percentile levels are adjusted by a
bias-correction parameter z0 and an acceleration parameter gamma obtained
from a leave-one-out pass over all n + N observations.  Percentile, normal
approximation (CLT), and bootstrap-t intervals are provided as alternatives.

Quantiles use linear interpolation on sorted values (numpy's default), which
is pinned here so intervals are bit-stable across releases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .estimators import EstimateResult, EstimatorKind, lambda_hat, plugin_se
from .lasso import ControlFunction
from .util import substream

logger = logging.getLogger(__name__)

MIN_BOOTSTRAP = 100


class CiMethod(str, Enum):
    BCA = "bca"
    PERCENTILE = "percentile"
    CLT = "clt"
    T = "t"


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    method: CiMethod
    B: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _unpack(labeled, unlabeled, f: ControlFunction | None, kind: EstimatorKind):
    """Split labeled pairs and evaluate the control function once."""
    kind = EstimatorKind(kind)
    y = np.array([pair[0] for pair in labeled], dtype=float)
    if kind is EstimatorKind.LBL:
        n_unl = len(unlabeled) if unlabeled is not None else 0
        return y, np.zeros(y.size), np.zeros(n_unl), kind
    if f is None:
        raise ValueError(f"estimator {kind.value} needs a control function")
    basis_lbl = np.vstack([np.asarray(pair[1], dtype=float) for pair in labeled])
    basis_unl = np.vstack([np.asarray(row, dtype=float) for row in unlabeled])
    return y, f.evaluate(basis_lbl), f.evaluate(basis_unl), kind


def _theta(y: np.ndarray, f_lbl: np.ndarray, f_unl: np.ndarray, kind: EstimatorKind) -> float:
    if kind is EstimatorKind.LBL:
        return float(y.mean())
    if kind is EstimatorKind.PPI:
        lam = 1.0
    elif kind is EstimatorKind.AIPW:
        lam = f_unl.size / (y.size + f_unl.size)
    else:
        lam = lambda_hat(y, f_lbl, f_unl)
    return float(y.mean() - lam * (f_lbl.mean() - f_unl.mean()))


def _se(y: np.ndarray, f_lbl: np.ndarray, f_unl: np.ndarray, kind: EstimatorKind) -> float:
    if kind is EstimatorKind.LBL:
        return float(np.sqrt(y.var(ddof=1) / y.size)) if y.size >= 2 else float("nan")
    if kind is EstimatorKind.PPI:
        lam = 1.0
    elif kind is EstimatorKind.AIPW:
        lam = f_unl.size / (y.size + f_unl.size)
    else:
        lam = lambda_hat(y, f_lbl, f_unl)
    if y.size < 2 or f_unl.size < 2:
        return float("nan")
    return plugin_se(y, f_lbl, f_unl, lam)


def bootstrap_estimates(
    labeled: Sequence,
    unlabeled,
    f: ControlFunction | None,
    kind: EstimatorKind,
    B: int,
    rng_seed: int,
    return_se: bool = False,
):
    """Recompute the point estimate on B independent resamples.

    Replicate b draws its indices from the substream keyed by (rng_seed, b),
    so the output does not depend on execution order.  Degenerate resamples
    (constant control-function values under a coefficient-estimating kind)
    fall back to the labeled mean instead of aborting.  With ``return_se``,
    each replicate's plug-in standard error is returned alongside.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    y, f_lbl, f_unl, kind = _unpack(labeled, unlabeled, f, kind)
    n, N = y.size, f_unl.size
    if n < 2:
        raise ValueError("bootstrap needs at least 2 labeled observations")

    thetas = np.empty(B)
    ses = np.empty(B) if return_se else None
    for b in range(B):
        rng = substream(rng_seed, b)
        il = rng.integers(0, n, n)
        yb, fb = y[il], f_lbl[il]
        fub = f_unl[rng.integers(0, N, N)] if N else f_unl
        thetas[b] = _theta(yb, fb, fub, kind)
        if return_se:
            ses[b] = _se(yb, fb, fub, kind)
    if return_se:
        return thetas, ses
    return thetas


def jackknife_estimates(
    labeled: Sequence,
    unlabeled,
    f: ControlFunction | None,
    kind: EstimatorKind,
) -> np.ndarray:
    """Leave-one-out estimates over all n + N observations, in index order.

    Entry m < n removes labeled observation m; entry m >= n removes unlabeled
    observation m - n.  For the labeled-mean estimator the unlabeled entries
    are no-ops and equal the full labeled mean.
    """
    y, f_lbl, f_unl, kind = _unpack(labeled, unlabeled, f, kind)
    n, N = y.size, f_unl.size
    if n < 3:
        raise ValueError("jackknife needs at least 3 labeled observations")
    if kind.uses_control_function and N < 1:
        raise ValueError(f"estimator {kind.value} needs unlabeled observations")

    out = np.empty(n + N)
    for m in range(n):
        keep = np.arange(n) != m
        out[m] = _theta(y[keep], f_lbl[keep], f_unl, kind)
    if kind is EstimatorKind.LBL:
        out[n:] = y.mean()
    else:
        for m in range(N):
            keep = np.arange(N) != m
            out[n + m] = _theta(y, f_lbl, f_unl[keep], kind)
    return out


def quantile(values, level) -> float:
    """Linear-interpolation empirical quantile (pinned rule)."""
    return float(np.quantile(np.asarray(values, dtype=float), level))


def bca_interval(
    theta_hat: float,
    boots,
    jackknife: np.ndarray,
    alpha: float,
) -> ConfidenceInterval:
    """Bias-corrected and accelerated interval from bootstrap replicates.

    The bias-correction z0 comes from the fraction of replicates at or below
    the point estimate, clamped to [1/(2B), 1 - 1/(2B)] so it stays finite.
    The acceleration gamma is the skewness-like statistic of the jackknife
    deviations, set to 0 when all leave-one-out values coincide.  Endpoints
    are empirical quantiles of the replicates at the adjusted levels and
    therefore always lie inside [min(boots), max(boots)].
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    boots = np.asarray(boots, dtype=float)
    B = boots.size
    if B < MIN_BOOTSTRAP:
        raise ValueError(f"need at least {MIN_BOOTSTRAP} bootstrap replicates")

    prop = float(np.mean(boots <= theta_hat))
    prop = min(max(prop, 1.0 / (2 * B)), 1.0 - 1.0 / (2 * B))
    z0 = float(norm.ppf(prop))

    u = np.asarray(jackknife, dtype=float)
    u = u.mean() - u
    s2 = float((u * u).sum())
    gamma = float((u**3).sum() / (6.0 * s2**1.5)) if s2 > 0.0 else 0.0

    z_lo = z0 + norm.ppf(alpha / 2)
    z_hi = z0 + norm.ppf(1 - alpha / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        level_lo = float(norm.cdf(z0 + z_lo / (1.0 - gamma * z_lo)))
        level_hi = float(norm.cdf(z0 + z_hi / (1.0 - gamma * z_hi)))
    lo = quantile(boots, level_lo)
    hi = quantile(boots, level_hi)
    if lo > hi:
        lo, hi = hi, lo
    return ConfidenceInterval(
        lower=lo,
        upper=hi,
        alpha=alpha,
        method=CiMethod.BCA,
        B=B,
        diagnostics={
            "z0": z0,
            "gamma": gamma,
            "level_lower": level_lo,
            "level_upper": level_hi,
        },
    )


def percentile_interval(boots, alpha: float) -> ConfidenceInterval:
    """Plain percentile bootstrap interval at levels alpha/2 and 1 - alpha/2."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    boots = np.asarray(boots, dtype=float)
    return ConfidenceInterval(
        lower=quantile(boots, alpha / 2),
        upper=quantile(boots, 1 - alpha / 2),
        alpha=alpha,
        method=CiMethod.PERCENTILE,
        B=boots.size,
    )


def clt_interval(result: EstimateResult, alpha: float) -> ConfidenceInterval:
    """Normal-approximation interval theta_hat +/- z_{1-alpha/2} * se."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if not np.isfinite(result.se_plugin):
        raise ValueError("normal interval needs a finite standard error")
    z = float(norm.ppf(1 - alpha / 2))
    return ConfidenceInterval(
        lower=result.theta_hat - z * result.se_plugin,
        upper=result.theta_hat + z * result.se_plugin,
        alpha=alpha,
        method=CiMethod.CLT,
        B=0,
    )


def bootstrap_t_interval(
    theta_hat: float,
    se_hat: float,
    boots_with_se,
    alpha: float,
) -> ConfidenceInterval:
    """Studentized bootstrap interval.

    Each replicate contributes t_b = (theta_b - theta_hat) / se_b, where se_b
    is the plug-in standard error of the resampled data; replicates with a
    zero (or non-finite) se_b are dropped.  The interval pivots the empirical
    t quantiles around theta_hat using the full-data standard error.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    pairs = np.asarray(boots_with_se, dtype=float).reshape(-1, 2)
    if pairs.shape[0] < MIN_BOOTSTRAP:
        raise ValueError(f"need at least {MIN_BOOTSTRAP} bootstrap replicates")
    usable = np.isfinite(pairs).all(axis=1) & (pairs[:, 1] != 0.0)
    dropped = int(pairs.shape[0] - usable.sum())
    if not usable.any():
        raise ValueError("all bootstrap replicates have zero standard error")
    t = (pairs[usable, 0] - theta_hat) / pairs[usable, 1]
    return ConfidenceInterval(
        lower=theta_hat - quantile(t, 1 - alpha / 2) * se_hat,
        upper=theta_hat - quantile(t, alpha / 2) * se_hat,
        alpha=alpha,
        method=CiMethod.T,
        B=int(usable.sum()),
        diagnostics={"dropped": dropped},
    )
