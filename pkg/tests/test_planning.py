import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metacal import (
    CandidateView,
    DomainError,
    IsotonicMap,
    ValidationError,
    gamma_grid,
    generate_scene,
    information_gain_curve,
    psnr,
    render_scene_outputs,
    select_next_view,
)
from metacal.experiments import oracle_maps


def constant_view(i, u, shape=(4, 4)):
    return CandidateView(i, np.zeros(shape + (3,)), None, np.full(shape, u))


class TestPsnr:
    def test_examples(self):
        a = np.full((4, 4, 3), 0.3)
        assert psnr(a, a) == 100.0
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
        assert psnr(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestInformationGain:
    def test_gamma_grid(self):
        np.testing.assert_allclose(gamma_grid(), np.linspace(0, 0.5, 11))

    def test_zero_gamma_is_plain_psnr(self):
        rng = np.random.default_rng(0)
        pred, truth, u = rng.random((5, 5, 3)), rng.random((5, 5, 3)), rng.random((5, 5))
        assert information_gain_curve(pred, truth, u, [0.0])[0][1] == psnr(pred, truth)

    def test_single_bad_pixel(self):
        truth = np.zeros((2, 2, 3))
        pred = truth.copy()
        pred[1, 0] = 0.5
        u = np.array([[0.1, 0.2], [0.9, 0.3]])
        assert information_gain_curve(pred, truth, u, [0.25])[0][1] == 100.0

    def test_ties_go_to_row_major_order(self):
        truth = np.zeros((2, 2, 3))
        pred = truth.copy()
        pred[0, 1] = 0.5
        u = np.full((2, 2), 0.4)
        # floor(0.25 * 4) = 1 pixel: the first in row-major order, which is correct already
        assert information_gain_curve(pred, truth, u, [0.25])[0][1] < 100.0
        pred[0, 1], pred[0, 0] = 0.0, 0.5
        assert information_gain_curve(pred, truth, u, [0.25])[0][1] == 100.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nondecreasing(self, seed):
        rng = np.random.default_rng(seed)
        pred, truth, u = rng.random((6, 7, 3)), rng.random((6, 7, 3)), rng.random((6, 7))
        values = [v for _, v in information_gain_curve(pred, truth, u, gamma_grid())]
        assert np.all(np.diff(values) >= 0)
        assert values[-1] >= values[0]

    def test_gamma_range(self):
        z = np.zeros((2, 2, 3))
        with pytest.raises(DomainError):
            information_gain_curve(z, z, np.zeros((2, 2)), [0.6])

    def test_congruence(self):
        with pytest.raises(ValidationError):
            information_gain_curve(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((3, 2)), [0.1])


class TestSelection:
    def test_argmax(self):
        views = [constant_view(i, u) for i, u in enumerate([0.1, 0.3, 0.2])]
        assert select_next_view(views) == 1

    def test_ties_lowest_id(self):
        views = [constant_view(5, 0.2), constant_view(2, 0.2), constant_view(7, 0.1)]
        assert select_next_view(views) == 2

    def test_empty(self):
        with pytest.raises(ValidationError):
            select_next_view([])

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        views = [CandidateView(i, np.zeros((4, 4, 3)), None, rng.random((4, 4))) for i in range(5)]
        scaled = [CandidateView(v.id, v.pred_image, None, 3.7 * v.umap) for v in views]
        assert select_next_view(views) == select_next_view(scaled)

    def test_identity_maps_match_uncalibrated(self):
        scenes = [generate_scene(k=k, seed=i, height=8, width=8, family="shape-heterogeneous") for i, k in enumerate([0.5, 2.0, 1.2])]
        views = []
        for i, s in enumerate(scenes):
            pred, u = render_scene_outputs(s)
            views.append(CandidateView(i, pred, s.truth, u))
        ident = [IsotonicMap.identity()] * 3
        chosen = select_next_view(views, ident, [s.forecasts for s in scenes])
        assert chosen == select_next_view(views) == 1

    def test_maps_need_forecasts(self):
        with pytest.raises(ValidationError):
            select_next_view([constant_view(0, 0.1)], maps=[IsotonicMap.identity()])


def test_calibration_reorders_shape_heterogeneous_pixels():
    scene = generate_scene(family="shape-heterogeneous", k=2.0, seed=0, height=32, width=32)
    _, u_uncal = render_scene_outputs(scene)
    _, u_cal = render_scene_outputs(scene, oracle_maps(scene))
    n = u_uncal.size
    order_uncal = np.lexsort((np.arange(n), -u_uncal.ravel()))
    order_cal = np.lexsort((np.arange(n), -u_cal.ravel()))
    assert not np.array_equal(order_uncal, order_cal)
