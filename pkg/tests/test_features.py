"""Basis expansion layout and invariants."""

import numpy as np
import pytest

from zoneppi.features import (
    FeatureRow,
    basis_labels,
    basis_length,
    expand_basis,
    expand_matrix,
)


class TestExpandBasis:
    def test_documented_layout(self):
        row = FeatureRow(prediction=2.0, covariates=(3.0, 4.0))
        np.testing.assert_array_equal(
            expand_basis(row, True), [1, 2, 3, 4, 9, 16, 12]
        )

    def test_zero_case(self):
        row = FeatureRow(prediction=0.0, covariates=(0.0, 0.0))
        np.testing.assert_array_equal(expand_basis(row, True), [1, 0, 0, 0, 0, 0, 0])

    def test_prediction_free_basis(self):
        row = FeatureRow(prediction=0.0, covariates=(1.0, 1.0))
        np.testing.assert_array_equal(expand_basis(row, False), [1, 1, 1, 1, 1, 1])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            expand_basis(FeatureRow(float("nan"), (1.0, 2.0)), True)
        with pytest.raises(ValueError):
            expand_basis(FeatureRow(1.0, (np.inf, 2.0)), True)

    @pytest.mark.parametrize("p", [1, 2, 3])
    @pytest.mark.parametrize("include_prediction", [True, False])
    def test_length_formula(self, p, include_prediction):
        row = FeatureRow(0.5, tuple(float(i + 1) for i in range(p)))
        expected = 1 + int(include_prediction) + p + p * (p + 1) // 2
        assert basis_length(p, include_prediction) == expected
        assert expand_basis(row, include_prediction).size == expected
        assert len(basis_labels(p, include_prediction)) == expected

    def test_first_entry_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            row = FeatureRow(rng.normal(), tuple(rng.normal(size=3)))
            assert expand_basis(row, True)[0] == 1.0

    def test_permutation_consistency(self):
        a, b = 1.7, -0.4
        fwd = expand_basis(FeatureRow(2.0, (a, b)), True)
        rev = expand_basis(FeatureRow(2.0, (b, a)), True)
        # linear and square terms swap, the cross term maps to itself
        assert fwd[2] == rev[3] and fwd[3] == rev[2]
        assert fwd[4] == rev[5] and fwd[5] == rev[4]
        assert fwd[6] == rev[6]

    def test_matrix_matches_per_row(self):
        rng = np.random.default_rng(3)
        preds = rng.normal(size=6)
        covs = rng.normal(size=(6, 2))
        for include in (True, False):
            mat = expand_matrix(preds, covs, include)
            rows = [
                expand_basis(FeatureRow(preds[i], tuple(covs[i])), include)
                for i in range(6)
            ]
            np.testing.assert_array_equal(mat, np.vstack(rows))

    def test_matrix_shape_validation(self):
        with pytest.raises(ValueError):
            expand_matrix([1.0, 2.0], [(1.0, 2.0)], True)
