"""Control-function inputs and the second-order regression basis.

The control function consumes W = (prediction, covariates).  Its regression
basis expands the covariates to second order while the prediction enters only
linearly.  Column order is fixed so fitted coefficients are portable:

    [1, prediction, x_1..x_p, x_1^2..x_p^2, x_1 x_2, x_1 x_3, ..., x_{p-1} x_p]

with the prediction column omitted when ``include_prediction`` is false (the
coordinates-only basis).  For p covariates the length is
``1 + include_prediction + p + p(p+1)/2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FeatureRow:
    """The prediction and covariate vector of one field."""

    prediction: float
    covariates: tuple[float, ...]


def basis_length(p: int, include_prediction: bool) -> int:
    return 1 + int(include_prediction) + p + p * (p + 1) // 2


def basis_labels(p: int, include_prediction: bool) -> list[str]:
    """Column names matching the expansion layout."""
    labels = ["intercept"]
    if include_prediction:
        labels.append("prediction")
    labels += [f"x{i}" for i in range(p)]
    labels += [f"x{i}^2" for i in range(p)]
    labels += [f"x{i}*x{j}" for i, j in combinations(range(p), 2)]
    return labels


def expand_basis(row: FeatureRow, include_prediction: bool) -> np.ndarray:
    """Expand one feature row into the documented basis layout."""
    x = np.asarray(row.covariates, dtype=float)
    if not np.isfinite(x).all() or not np.isfinite(row.prediction):
        raise ValueError("non-finite feature row")
    parts = [np.ones(1)]
    if include_prediction:
        parts.append(np.array([row.prediction]))
    cross = [x[i] * x[j] for i, j in combinations(range(x.size), 2)]
    parts += [x, x * x, np.asarray(cross, dtype=float)]
    return np.concatenate(parts)


def expand_matrix(
    predictions: Sequence[float] | np.ndarray,
    covariates: Sequence[Sequence[float]] | np.ndarray,
    include_prediction: bool,
) -> np.ndarray:
    """Row-stacked :func:`expand_basis` for m fields, vectorized.

    ``covariates`` is m x p; the result is m x basis_length(p, ...).
    """
    pred = np.asarray(predictions, dtype=float)
    x = np.atleast_2d(np.asarray(covariates, dtype=float))
    if x.shape[0] != pred.shape[0]:
        raise ValueError("predictions and covariates disagree on row count")
    if not (np.isfinite(x).all() and np.isfinite(pred).all()):
        raise ValueError("non-finite feature input")
    m, p = x.shape
    cols = [np.ones((m, 1))]
    if include_prediction:
        cols.append(pred.reshape(-1, 1))
    cross = [(x[:, i] * x[:, j]).reshape(-1, 1) for i, j in combinations(range(p), 2)]
    cols += [x, x * x] + cross
    return np.hstack(cols)
