import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metacal import (
    CalibrationCurve,
    PcaCurveBasis,
    ValidationError,
    analytic_distortion_curve,
    discretize_curve,
    fit_pca_basis,
    monotonize_curve,
    project_curve,
    reconstruct_curve,
)
from metacal.curves import grid
from metacal.recalibration import pava


def analytic_family(n=21, m=384, lo=0.3, hi=3.0):
    g = grid(m)
    return np.array([analytic_distortion_curve(k, g) for k in np.geomspace(lo, hi, n)])


class TestDiscretize:
    def test_diagonal(self):
        p = np.linspace(0.1, 0.9, 9)
        np.testing.assert_allclose(discretize_curve(np.column_stack([p, p]), 5).values, [0, 0.25, 0.5, 0.75, 1])

    def test_two_point_grid(self):
        np.testing.assert_array_equal(discretize_curve([(0.3, 0.6)], 2).values, [0.0, 1.0])

    def test_curve_validation(self):
        with pytest.raises(ValidationError):
            CalibrationCurve(np.array([0.5]))
        with pytest.raises(ValidationError):
            CalibrationCurve(np.array([0.0, 1.2]))


class TestPca:
    def test_identical_curves(self):
        c = grid(50) ** 2
        basis = fit_pca_basis(np.tile(c, (4, 1)), 2)
        np.testing.assert_array_equal(basis.explained_variance_ratio, [0.0, 0.0])
        np.testing.assert_allclose(reconstruct_curve(basis, project_curve(basis, c)), c, atol=0)

    def test_two_curves_one_direction(self):
        basis = fit_pca_basis(analytic_family(2), 1)
        assert basis.explained_variance_ratio[0] == pytest.approx(1.0)

    def test_analytic_family_is_low_dimensional(self):
        basis = fit_pca_basis(analytic_family(), 3)
        assert basis.explained_variance_ratio.sum() >= 0.99
        assert np.all(np.diff(basis.explained_variance_ratio) <= 0)

    def test_orthonormal_and_sign_convention(self):
        basis = fit_pca_basis(analytic_family(), 3)
        np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(3), atol=1e-10)
        mag = np.abs(basis.components)
        idx = np.argmax(mag >= mag.max(axis=1, keepdims=True) * (1 - 1e-8), axis=1)
        assert np.all(basis.components[np.arange(3), idx] > 0)

    def test_order_invariance(self):
        V = analytic_family()
        a = fit_pca_basis(V, 3)
        b = fit_pca_basis(V[::-1], 3)
        np.testing.assert_allclose(a.explained_variance_ratio, b.explained_variance_ratio, rtol=1e-10)
        np.testing.assert_allclose(a.components, b.components, atol=1e-9)

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            fit_pca_basis(analytic_family(1), 1)
        with pytest.raises(ValidationError):
            fit_pca_basis(analytic_family(3), 3)

    def test_project_and_reconstruct(self):
        basis = fit_pca_basis(analytic_family(), 3)
        np.testing.assert_allclose(project_curve(basis, basis.mean), 0, atol=1e-12)
        np.testing.assert_allclose(project_curve(basis, basis.mean + basis.components[0]), [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(reconstruct_curve(basis, [1, 0, 0]), basis.mean + basis.components[0])
        np.testing.assert_array_equal(reconstruct_curve(basis, [0, 0, 0]), basis.mean)
        with pytest.raises(ValidationError):
            reconstruct_curve(basis, [1, 0])
        with pytest.raises(ValidationError):
            project_curve(basis, np.zeros(10))

    def test_full_rank_round_trip(self):
        V = analytic_family(4, 40)
        basis = fit_pca_basis(V, 3)
        for c in V:
            np.testing.assert_allclose(reconstruct_curve(basis, project_curve(basis, c)), c, atol=1e-8)

    def test_residual_bounded_by_explained_variance(self):
        # the total squared residual over the training set equals the unexplained variance
        V = analytic_family()
        full = fit_pca_basis(V, 20)
        basis = fit_pca_basis(V, 3)
        total = np.sum((V - V.mean(axis=0)) ** 2)
        resid = np.array([c - reconstruct_curve(basis, project_curve(basis, c)) for c in V])
        unexplained = total * (1 - basis.explained_variance_ratio.sum())
        assert np.sum(resid**2) == pytest.approx(unexplained, rel=1e-6)
        assert np.allclose(full.explained_variance_ratio[:3], basis.explained_variance_ratio)

    def test_fit_project_reconstruct_monotonize(self):
        V = analytic_family()
        basis = fit_pca_basis(V, 3)
        for c in V:
            raw = reconstruct_curve(basis, project_curve(basis, c))
            trunc = np.max(np.abs(raw - c))
            m = monotonize_curve(raw)
            assert np.max(np.abs(m(grid(len(c))) - c)) <= trunc + 1e-8

    def test_dict_round_trip(self):
        basis = fit_pca_basis(analytic_family(), 3)
        back = PcaCurveBasis.from_dict(basis.to_dict())
        np.testing.assert_array_equal(back.components, basis.components)
        np.testing.assert_array_equal(back.mean, basis.mean)
        assert back.m_grid == 384 and back.n_components == 3

    def test_basis_validation(self):
        with pytest.raises(ValidationError):
            PcaCurveBasis(np.zeros(3), np.ones((1, 3)), np.array([0.5]))
        with pytest.raises(ValidationError):
            PcaCurveBasis(np.zeros(2), np.eye(2), np.array([0.2, 0.5]))


class TestMonotonize:
    def test_monotone_input_unchanged(self):
        raw = np.array([0.0, 0.1, 0.4, 0.8, 1.0])
        m = monotonize_curve(raw)
        np.testing.assert_allclose(m.outputs, raw)

    def test_pooling_before_anchoring(self):
        np.testing.assert_allclose(pava(np.array([0.8, 0.2])), [0.5, 0.5])
        np.testing.assert_allclose(monotonize_curve([0.8, 0.2]).outputs, [0.0, 1.0])
        m = monotonize_curve([0.0, 0.8, 0.2, 1.0])
        np.testing.assert_allclose(m.outputs, [0.0, 0.5, 0.5, 1.0])

    def test_clamp(self):
        m = monotonize_curve([0.0, 0.5, 1.3, 1.0])
        np.testing.assert_allclose(m.outputs, [0.0, 0.5, 1.0, 1.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-0.5, 1.5), min_size=2, max_size=40))
    def test_always_valid_map(self, raw):
        m = monotonize_curve(raw)
        assert m.outputs[0] == 0.0 and m.outputs[-1] == 1.0
        assert np.all(np.diff(m.outputs) >= 0)
