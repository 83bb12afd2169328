"""Point estimators for a zone's mean yield and their plug-in standard errors.

All estimators share one form: the labeled sample mean minus a tuned multiple
of the labeled/unlabeled gap in control-function values,

    theta_hat = mean(Y) - lam * (mean(f_labeled) - mean(f_unlabeled)).

They differ only in the power-tuning coefficient ``lam``:

    lbl      lam = 0            (ignores the control function entirely)
    ppipp    lam estimated      (variance-minimizing choice, see lambda_hat)
    ppi      lam = 1
    aipw     lam = N / (n + N)
    nophoto  lam estimated, with f built on the coordinates-only basis

The estimated coefficient never does worse than the labeled mean in large
samples, whatever the control function is.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class EstimatorKind(str, Enum):
    LBL = "lbl"
    PPIPP = "ppipp"
    PPI = "ppi"
    AIPW = "aipw"
    NOPHOTO = "nophoto"

    @property
    def uses_control_function(self) -> bool:
        return self is not EstimatorKind.LBL

    @property
    def include_prediction(self) -> bool:
        """Whether this estimator's control function sees the prediction."""
        return self in (EstimatorKind.PPIPP, EstimatorKind.PPI, EstimatorKind.AIPW)

    @property
    def estimates_lambda(self) -> bool:
        return self in (EstimatorKind.PPIPP, EstimatorKind.NOPHOTO)


@dataclass
class EstimateResult:
    """A zone-level point estimate with its tuning coefficient and plug-in SE."""

    theta_hat: float
    lambda_hat: float
    n: int
    N: int
    se_plugin: float
    estimator: EstimatorKind
    zone_id: str = ""


def _as_vec(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).ravel()
    if v.size and not np.isfinite(v).all():
        raise ValueError(f"non-finite values in {name}")
    return v


def lambda_hat(labeled_y, labeled_f, unlabeled_f) -> float:
    """Variance-minimizing power-tuning coefficient.

    Computes (N / (n + N)) * cov(Y, f) / var(f), where the covariance uses
    the n labeled pairs (divisor n - 1) and the variance pools all n + N
    control-function values (divisor n + N - 1).  Falls back to 0 when the
    pooled values are all identical, which reproduces the labeled mean.
    """
    y = _as_vec(labeled_y, "labeled_y")
    f_lbl = _as_vec(labeled_f, "labeled_f")
    f_unl = _as_vec(unlabeled_f, "unlabeled_f")
    n, N = y.size, f_unl.size
    if n < 2:
        raise ValueError("lambda_hat needs at least 2 labeled observations")
    if f_lbl.size != n:
        raise ValueError("labeled_y and labeled_f disagree on length")
    if N < 1:
        raise ValueError("lambda_hat needs at least 1 unlabeled observation")

    f_all = np.concatenate([f_lbl, f_unl])
    if np.ptp(f_all) == 0.0:
        return 0.0
    cov = float((y - y.mean()) @ (f_lbl - f_lbl.mean())) / (n - 1)
    var = float(np.square(f_all - f_all.mean()).sum()) / (n + N - 1)
    if var == 0.0:
        return 0.0
    return (N / (n + N)) * cov / var


def plugin_se(labeled_y, labeled_f, unlabeled_f, lam: float) -> float:
    """Plug-in asymptotic standard error at a given tuning coefficient.

    sqrt(lam^2 * var_all(f) / N + var(Y - lam * f) / n) with sample variances
    (divisor count - 1); var_all pools labeled and unlabeled values.
    """
    y = _as_vec(labeled_y, "labeled_y")
    f_lbl = _as_vec(labeled_f, "labeled_f")
    f_unl = _as_vec(unlabeled_f, "unlabeled_f")
    n, N = y.size, f_unl.size
    if n < 2 or N < 2:
        raise ValueError("plugin_se needs n >= 2 and N >= 2")
    f_all = np.concatenate([f_lbl, f_unl])
    var_f = float(np.square(f_all - f_all.mean()).sum()) / (n + N - 1)
    resid = y - lam * f_lbl
    var_resid = float(np.square(resid - resid.mean()).sum()) / (n - 1)
    return float(np.sqrt(lam * lam * var_f / N + var_resid / n))


def _labeled_se(y: np.ndarray) -> float:
    if y.size < 2:
        return float("nan")
    return float(np.sqrt(y.var(ddof=1) / y.size))


def ppi_estimate(
    labeled_y,
    labeled_f=None,
    unlabeled_f=None,
    kind: EstimatorKind = EstimatorKind.PPIPP,
    zone_id: str = "",
) -> EstimateResult:
    """Compute the point estimate of the configured kind.

    ``lbl`` ignores the control-function arguments; every other kind requires
    a nonempty unlabeled set, and the coefficient-estimating kinds need at
    least two labeled observations.
    """
    kind = EstimatorKind(kind)
    y = _as_vec(labeled_y, "labeled_y")
    n = y.size
    if n < 1:
        raise ValueError("empty labeled set")

    if kind is EstimatorKind.LBL:
        return EstimateResult(
            theta_hat=float(y.mean()),
            lambda_hat=0.0,
            n=n,
            N=0 if unlabeled_f is None else _as_vec(unlabeled_f, "unlabeled_f").size,
            se_plugin=_labeled_se(y),
            estimator=kind,
            zone_id=zone_id,
        )

    f_lbl = _as_vec(labeled_f, "labeled_f")
    f_unl = _as_vec(unlabeled_f, "unlabeled_f")
    N = f_unl.size
    if N < 1:
        raise ValueError(f"estimator {kind.value} needs unlabeled observations")
    if f_lbl.size != n:
        raise ValueError("labeled_y and labeled_f disagree on length")

    if kind is EstimatorKind.PPI:
        lam = 1.0
    elif kind is EstimatorKind.AIPW:
        lam = N / (n + N)
    else:
        lam = lambda_hat(y, f_lbl, f_unl)

    theta = float(y.mean() - lam * (f_lbl.mean() - f_unl.mean()))
    se = plugin_se(y, f_lbl, f_unl, lam) if (n >= 2 and N >= 2) else float("nan")
    return EstimateResult(
        theta_hat=theta,
        lambda_hat=float(lam),
        n=n,
        N=N,
        se_plugin=se,
        estimator=kind,
        zone_id=zone_id,
    )


def r_squared_within(labeled_y, predictions) -> float:
    """Squared Pearson correlation between predictions and yields in a zone.

    Returns 0 by convention when either vector is constant.
    """
    y = _as_vec(labeled_y, "labeled_y")
    p = _as_vec(predictions, "predictions")
    if y.size != p.size:
        raise ValueError("length mismatch")
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    if np.ptp(y) == 0.0 or np.ptp(p) == 0.0:
        return 0.0
    r = np.corrcoef(y, p)[0, 1]
    if not np.isfinite(r):
        return 0.0
    return float(min(r * r, 1.0))


def theoretical_re(r2: float, n: int, N: int) -> float:
    """Asymptotic relative efficiency 1 / (1 - r2 * N / (N + n)).

    This is the variance-reduction factor over the labeled mean attainable
    with a control function explaining a fraction r2 of within-zone yield
    variance, given n labeled and N unlabeled fields.
    """
    if not 0.0 <= r2 <= 1.0:
        raise ValueError("r2 must be in [0, 1]")
    if n < 1 or N < 0:
        raise ValueError("need n >= 1 and N >= 0")
    frac = r2 * N / (N + n)
    if frac >= 1.0:
        raise ValueError("r2 * N / (N + n) must be < 1")
    return 1.0 / (1.0 - frac)
