"""L1-penalized least squares via cyclic coordinate descent, with a
regularization path and k-fold cross-validation.

The solver minimizes, for an m x q design X (no intercept column) and
response y,

    (1 / (2m)) * sum_i (y_i - b0 - x_i' b)^2 + penalty * sum_j |b_j|

Columns are standardized internally to zero mean and unit variance (divisor
m); the intercept is never penalized and constant columns keep a zero
coefficient.  Returned coefficients are mapped back to the original scale.
Descent uses naive residual updates, which is plenty at the basis widths used
here (q around 7).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional, pure numpy works
    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco

logger = logging.getLogger(__name__)

N_LAMBDAS = 100
LAMBDA_MIN_RATIO = 1e-4
TOL = 1e-7
MAX_SWEEPS = 100_000

# Columns whose residual norm after projecting out earlier columns falls below
# this fraction of the leading pivot are treated as aliases and pinned to a
# zero coefficient, like constant columns.  Coordinate bases over narrow
# geographic ranges make e.g. lat^2 an affine copy of lat to within float64,
# and descent cannot separate such pairs at the pinned tolerance.
COND_TOL = 0.02

_CONVERGED = 0
_SWEEP_CAP = 1
_NOT_MONOTONE = 2


class ConvergenceError(RuntimeError):
    """Coordinate descent hit the sweep cap before reaching tolerance."""

    def __init__(self, lambda_index: int, penalty: float):
        self.lambda_index = lambda_index
        self.penalty = penalty
        super().__init__(
            f"coordinate descent did not converge at penalty index "
            f"{lambda_index} (penalty={penalty:.6g})"
        )


@dataclass
class LassoFit:
    """One fitted point on the penalty path, on the original data scale."""

    intercept: float
    coefficients: np.ndarray
    penalty: float
    cv_error: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coefficients


@dataclass
class ControlFunction:
    """A fitted control function over the expanded basis.

    Evaluation takes basis rows that INCLUDE the leading intercept column;
    the stored coefficients cover the remaining columns.
    """

    fit: LassoFit
    include_prediction: bool
    region: str = ""
    fallback: bool = False

    def evaluate(self, basis: np.ndarray) -> np.ndarray:
        """Evaluate on one basis row or an m x len matrix of rows."""
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 1:
            return float(self.fit.intercept + basis[1:] @ self.fit.coefficients)
        return self.fit.intercept + basis[:, 1:] @ self.fit.coefficients


def intercept_only(mean_y: float, include_prediction: bool, region: str = "",
                   n_columns: int = 0) -> ControlFunction:
    """Constant control function used when a pooling unit cannot be fit."""
    fit = LassoFit(intercept=float(mean_y), coefficients=np.zeros(n_columns), penalty=0.0)
    return ControlFunction(fit, include_prediction, region, fallback=True)


def soft_threshold(x: float, t: float) -> float:
    """sign(x) * max(|x| - t, 0); t must be nonnegative."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(x) * max(abs(x) - t, 0.0) + 0.0)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Standardize columns and mask out constant or near-aliased ones.

    Uses the divisor-m standard deviation, so retained columns satisfy
    (1/m)||x||^2 = 1.  Near-aliased columns are found by pivoted QR on the
    standardized matrix: a pivot whose diagonal is below COND_TOL times the
    leading diagonal adds no usable direction and is masked.
    """
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    active = stds > 0
    Xs = np.zeros_like(X)
    Xs[:, active] = (X[:, active] - means[active]) / stds[active]
    cols = np.flatnonzero(active)
    if cols.size >= 2:
        _, R, piv = qr(Xs[:, cols], mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        for k in np.flatnonzero(diag < COND_TOL * diag[0]):
            active[cols[piv[k]]] = False
        Xs[:, ~active] = 0.0
    return Xs, means, stds, active


def lambda_grid(X: np.ndarray, y: np.ndarray, n_lambdas: int = N_LAMBDAS,
                lambda_min_ratio: float = LAMBDA_MIN_RATIO) -> np.ndarray:
    """Geometric penalty grid from lambda_max down, with 0 appended when q < m.

    lambda_max = max_j |<standardized x_j, y - mean(y)>| / m is the smallest
    penalty at which every coefficient is zero.  A constant response (or an
    all-constant design) collapses the grid to the single value 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, q = X.shape
    Xs, _, _, active = _standardize(X)
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(Xs.T @ yc)) / m) if active.any() else 0.0
    if lam_max <= 0.0:
        return np.array([0.0])
    grid = np.geomspace(lam_max, lam_max * lambda_min_ratio, n_lambdas)
    if q < m:
        grid = np.append(grid, 0.0)
    return grid


@njit(cache=True)
def _cd_sweeps(Xa, yc, b, lam, tol, max_sweeps):  # pragma: no cover - jitted
    """Cyclic coordinate-descent sweeps with naive residual updates.

    Runs in standardized space on the active (non-constant) columns only, so
    each column satisfies (1/m)||x_j||^2 = 1 and the per-coordinate update is
    a single soft threshold.  The penalized objective is checked after every
    sweep; it can never increase, so an increase signals a solver bug.
    """
    m, q = Xa.shape
    inv_m = 1.0 / m
    r = yc - Xa @ b
    obj = 0.5 * inv_m * np.dot(r, r)
    for j in range(q):
        obj += lam * abs(b[j])
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(q):
            col = Xa[:, j]
            rho = b[j] + inv_m * np.dot(col, r)
            if rho > lam:
                new = rho - lam
            elif rho < -lam:
                new = rho + lam
            else:
                new = 0.0
            delta = b[j] - new
            if delta != 0.0:
                for i in range(m):
                    r[i] += delta * col[i]
                b[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        new_obj = 0.5 * inv_m * np.dot(r, r)
        for j in range(q):
            new_obj += lam * abs(b[j])
        slack = 1e-10 * (abs(obj) if abs(obj) > 1.0 else 1.0)
        if new_obj > obj + slack:
            return _NOT_MONOTONE
        obj = new_obj
        if max_delta <= tol:
            return _CONVERGED
    return _SWEEP_CAP


def _descend(
    Xa: np.ndarray,
    yc: np.ndarray,
    b: np.ndarray,
    lam: float,
    tol: float,
    max_sweeps: int,
    lambda_index: int,
) -> None:
    """Run sweeps at one penalty, mutating b in place; raise on failure."""
    status = _cd_sweeps(Xa, yc, b, lam, tol, max_sweeps)
    if status == _NOT_MONOTONE:
        raise AssertionError(
            f"penalized objective increased during a sweep at penalty index "
            f"{lambda_index} (penalty={lam:.6g})"
        )
    if status == _SWEEP_CAP:
        raise ConvergenceError(lambda_index, lam)


def fit_lasso_path(
    X: np.ndarray,
    y: np.ndarray,
    n_lambdas: int = N_LAMBDAS,
    lambda_min_ratio: float = LAMBDA_MIN_RATIO,
    lambdas: np.ndarray | None = None,
    tol: float = TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> list[LassoFit]:
    """Fit the penalty path with warm starts; strongest penalty first.

    ``lambdas`` overrides the automatic grid (used by cross-validation so all
    folds share one grid).  Raises ``ValueError`` for fewer than 2 rows or a
    non-finite design and ``ConvergenceError`` if any penalty fails to
    converge within ``max_sweeps``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    m, q = X.shape
    if m < 2:
        raise ValueError("need at least 2 rows")
    if y.shape[0] != m:
        raise ValueError("X and y disagree on row count")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite design or response")

    if lambdas is None:
        lambdas = lambda_grid(X, y, n_lambdas, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)

    Xs, means, stds, active = _standardize(X)
    ybar = float(y.mean())
    yc = y - ybar
    Xa = np.asfortranarray(Xs[:, active])

    fits: list[LassoFit] = []
    ba = np.zeros(int(active.sum()))
    for idx, lam in enumerate(lambdas):
        if ba.size:
            _descend(Xa, yc, ba, float(lam), tol, max_sweeps, idx)
        coef = np.zeros(q)
        coef[active] = ba / stds[active]
        intercept = ybar - float(coef @ means)
        fits.append(LassoFit(intercept=intercept, coefficients=coef, penalty=float(lam)))
    return fits


def kkt_max_violation(X: np.ndarray, y: np.ndarray, fit: LassoFit) -> float:
    """Largest stationarity-condition violation of a fit, standardized scale.

    At an exact optimum, (1/m) <x_j, residual> equals penalty * sign(b_j) for
    every nonzero coefficient and has magnitude at most penalty elsewhere.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    Xs, _, stds, active = _standardize(X)
    b = np.where(active, fit.coefficients * stds, 0.0)
    r = (y - y.mean()) - Xs @ b
    g = Xs.T @ r / m
    worst = 0.0
    for j in np.flatnonzero(active):
        if b[j] != 0.0:
            worst = max(worst, abs(g[j] - fit.penalty * np.sign(b[j])))
        else:
            worst = max(worst, max(0.0, abs(g[j]) - fit.penalty))
    return worst


def cv_folds(m: int, k: int, rng_seed: int) -> list[np.ndarray]:
    """Seeded shuffle of row indices dealt into k folds, sizes within 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if m < k:
        raise ValueError(f"need at least k={k} rows, got {m}")
    rng = np.random.default_rng(rng_seed)
    return np.array_split(rng.permutation(m), k)


def cv_curve(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 5,
    rng_seed: int = 0,
    n_lambdas: int = N_LAMBDAS,
    lambda_min_ratio: float = LAMBDA_MIN_RATIO,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Penalty grid, pooled held-out MSE per penalty, and per-fold means.

    Every fold is fit on the penalty grid of the full data so errors are
    comparable across folds.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    grid = lambda_grid(X, y, n_lambdas, lambda_min_ratio)
    folds = cv_folds(m, k, rng_seed)

    sq_err_sum = np.zeros(grid.size)
    fold_means = np.zeros((k, grid.size))
    for fi, hold in enumerate(folds):
        train = np.setdiff1d(np.arange(m), hold, assume_unique=True)
        fits = fit_lasso_path(X[train], y[train], lambdas=grid)
        errs = np.array(
            [np.square(y[hold] - f.predict(X[hold])).sum() for f in fits]
        )
        sq_err_sum += errs
        fold_means[fi] = errs / hold.size

    return grid, sq_err_sum / m, fold_means


def cv_select(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 5,
    rng_seed: int = 0,
    n_lambdas: int = N_LAMBDAS,
    lambda_min_ratio: float = LAMBDA_MIN_RATIO,
    rule: str = "min",
) -> LassoFit:
    """Select the penalty by k-fold cross-validation and refit on all rows.

    The pooled held-out MSE minimizer wins (``rule="min"``); ``rule="1se"``
    instead picks the strongest penalty within one standard error (over
    folds) of the minimum.  The returned fit carries the pooled CV error at
    the chosen penalty.  Deterministic given the seed.
    """
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown selection rule: {rule!r}")
    grid, cv_mean, fold_means = cv_curve(X, y, k, rng_seed, n_lambdas, lambda_min_ratio)
    best = int(np.argmin(cv_mean))
    if rule == "1se":
        k_eff = fold_means.shape[0]
        se = fold_means.std(axis=0, ddof=1)[best] / np.sqrt(k_eff)
        best = int(np.flatnonzero(cv_mean <= cv_mean[best] + se)[0])

    full = fit_lasso_path(X, y, lambdas=grid)
    chosen = full[best]
    chosen.cv_error = float(cv_mean[best])
    return chosen
