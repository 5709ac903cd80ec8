import numpy as np
import pytest
from scipy import stats as scipy_stats

from superad.io import HsiCube
from superad.rxd import BackgroundStats, fit_stats, rxd_detect


class TestFitStats:
    def test_two_pixel_one_band(self):
        cube = HsiCube(np.array([0.0, 2.0]).reshape(1, 2, 1))
        stats = fit_stats(cube)
        assert stats.mean[0] == 1.0
        assert stats.covariance[0, 0] == pytest.approx(2.0 + stats.ridge, abs=0)

    def test_constant_cube_gives_ridge_identity(self):
        cube = HsiCube(np.full((3, 3, 2), 4.0))
        stats = fit_stats(cube, ridge=1e-3)
        np.testing.assert_allclose(stats.covariance, 1e-3 * np.eye(2), rtol=0, atol=0)

    def test_matches_naive_two_pass(self):
        rng = np.random.default_rng(0)
        cube = HsiCube(rng.random((8, 9, 4)))
        stats = fit_stats(cube, ridge=0.0)
        flat = cube.data.reshape(-1, 4)
        mu = flat.sum(axis=0) / flat.shape[0]
        cov = np.zeros((4, 4))
        for row in flat:
            d = row - mu
            cov += np.outer(d, d)
        cov /= flat.shape[0] - 1
        np.testing.assert_allclose(stats.covariance, cov, atol=1e-12)

    def test_needs_two_pixels(self):
        with pytest.raises(ValueError):
            fit_stats(HsiCube(np.ones((1, 1, 3))))

    def test_singular_covariance_reports_ridge_hint(self):
        cube = HsiCube(np.full((2, 2, 2), 1.0))
        with pytest.raises(np.linalg.LinAlgError, match="ridge"):
            fit_stats(cube, ridge=0.0)


class TestRxdDetect:
    def test_pixel_at_mean_scores_zero(self):
        rng = np.random.default_rng(1)
        flat = rng.random((15, 3))
        cube = HsiCube(flat.reshape(3, 5, 3))
        stats = BackgroundStats(mean=flat[3].copy(), covariance=np.eye(3), ridge=0.0)
        scores = rxd_detect(cube, stats).scores.reshape(-1)
        assert scores[3] == 0.0

    def test_identity_metric_example(self):
        cube = HsiCube(np.array([[3.0, 0.0], [0.0, 0.0]]).reshape(1, 2, 2))
        stats = BackgroundStats(mean=np.zeros(2), covariance=np.eye(2), ridge=0.0)
        scores = rxd_detect(cube, stats).scores
        assert scores[0, 0] == 9.0
        assert scores[0, 1] == 0.0

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(2)
        cube = HsiCube(rng.random((16, 16, 4)))
        stats = fit_stats(cube)
        fast = rxd_detect(cube, stats).scores.reshape(-1)
        inv = np.linalg.inv(stats.covariance)
        centered = cube.data.reshape(-1, 4) - stats.mean
        slow = np.einsum("ij,jk,ik->i", centered, inv, centered)
        np.testing.assert_allclose(fast, slow, atol=1e-9)

    def test_band_count_mismatch(self):
        stats = BackgroundStats(mean=np.zeros(3), covariance=np.eye(3), ridge=0.0)
        with pytest.raises(ValueError):
            rxd_detect(HsiCube(np.ones((2, 2, 4))), stats)

    def test_scores_non_negative(self):
        rng = np.random.default_rng(3)
        cube = HsiCube(rng.standard_normal((10, 10, 5)))
        scores = rxd_detect(cube, fit_stats(cube)).scores
        assert (scores >= 0).all()

    def test_affine_invariance_of_ranking(self):
        rng = np.random.default_rng(4)
        cube = HsiCube(rng.random((12, 12, 3)))
        base = rxd_detect(cube, fit_stats(cube, ridge=1e-12)).scores.reshape(-1)

        a = rng.standard_normal((3, 3)) + 2 * np.eye(3)  # invertible w.h.p.
        assert abs(np.linalg.det(a)) > 1e-6
        mapped = HsiCube((cube.data.reshape(-1, 3) @ a.T).reshape(12, 12, 3))
        warped = rxd_detect(mapped, fit_stats(mapped, ridge=1e-12)).scores.reshape(-1)
        rho = scipy_stats.spearmanr(base, warped).statistic
        assert rho == pytest.approx(1.0, abs=1e-12)
