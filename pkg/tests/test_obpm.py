import math

import numpy as np
import pytest

import superad.diffkit as dk
from superad.obpm import (
    ObpmConfig,
    l1_loss,
    l2_loss,
    obpm_loss,
    obpm_pointwise,
    pixel_errors,
    segment_cutoff,
)
from superad.superpixel import SegmentLabels


class TestPixelErrors:
    def test_mean_absolute_over_bands(self):
        xhat = np.array([[1.0, 2.0]])
        x = np.array([[1.0, 0.0]])
        np.testing.assert_array_equal(pixel_errors(xhat, x).values, [[1.0]])

    def test_identity_is_zero(self):
        x = np.random.default_rng(0).random((6, 3))
        np.testing.assert_array_equal(pixel_errors(x, x).values, np.zeros((6, 1)))

    def test_mixed_signs(self):
        xhat = np.array([[-1.0, 3.0]])
        x = np.zeros((1, 2))
        np.testing.assert_array_equal(pixel_errors(xhat, x).values, [[2.0]])


class TestPointwise:
    def test_zero_error_beta_one(self):
        out = obpm_pointwise(np.asarray(0.0), ObpmConfig(alpha=0.0, beta=1.0))
        assert float(out.values) == 1.0

    def test_zero_error_beta_two_with_gradient(self):
        x = dk.DiffTensor(np.asarray(0.0))
        out = obpm_pointwise(x, ObpmConfig(alpha=1.0, beta=2.0))
        assert float(out.values) == 0.5
        dk.backward(out)
        assert float(x.grad) == 2.0  # exp(0) + alpha

    def test_unit_error(self):
        out = obpm_pointwise(np.asarray(1.0), ObpmConfig(alpha=0.0, beta=1.0))
        np.testing.assert_allclose(float(out.values), math.e, rtol=1e-15)

    def test_derivative_matches_closed_form_at_random_points(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            alpha = float(rng.uniform(0.0, 5.0))
            beta = float(rng.uniform(0.5, 2.0))
            x0 = float(rng.uniform(0.0, 2.0))
            cfg = ObpmConfig(alpha=alpha, beta=beta)
            err = dk.grad_check(lambda t: dk.sum(obpm_pointwise(t, cfg)), np.asarray([x0]), eps=1e-6)
            assert err < 1e-6
            leaf = dk.DiffTensor(np.asarray([x0]))
            dk.backward(dk.sum(obpm_pointwise(leaf, cfg)))
            np.testing.assert_allclose(leaf.grad, [math.exp(beta * x0) + alpha], rtol=1e-12)

    def test_gradient_monotone_in_error(self):
        cfg = ObpmConfig(alpha=0.5, beta=1.5)
        xs = np.sort(np.random.default_rng(2).uniform(0.0, 3.0, size=32))
        grads = np.exp(cfg.beta * xs) + cfg.alpha
        assert (np.diff(grads) > 0).all()


class TestSegmentCutoff:
    def test_worked_example(self):
        errors = np.array([[0.1, 0.12, 0.11, 0.9]])
        labels = SegmentLabels(np.zeros((1, 4), dtype=int), 1)
        report = segment_cutoff(errors, labels)
        np.testing.assert_allclose(report.sorted_errors[0], [0.1, 0.11, 0.12, 0.9])
        assert report.q[0] == 3
        assert report.boundary[0] == 0.12
        assert report.retained[0] == 3
        np.testing.assert_array_equal(report.keep_mask, [[True, True, True, False]])

    def test_singleton_segment_retained(self):
        errors = np.array([[0.7, 0.1]])
        labels = SegmentLabels(np.array([[0, 1]]), 2)
        report = segment_cutoff(errors, labels)
        assert report.retained.tolist() == [1, 1]
        assert report.keep_mask.all()

    def test_tie_breaks_toward_largest_j(self):
        errors = np.array([[1.0, 2.0, 3.0]])
        labels = SegmentLabels(np.zeros((1, 3), dtype=int), 1)
        report = segment_cutoff(errors, labels)
        assert report.q[0] == 2
        assert report.boundary[0] == 2.0
        np.testing.assert_array_equal(report.keep_mask, [[True, True, False]])

    def test_every_segment_retains_at_least_one(self):
        rng = np.random.default_rng(3)
        errors = rng.random((8, 8))
        labels = SegmentLabels(rng.integers(0, 4, size=(8, 8)), 4)
        report = segment_cutoff(errors, labels)
        assert (report.retained >= 1).all()
        assert report.q.min() >= 1

    def test_scaling_preserves_retained_set(self):
        rng = np.random.default_rng(4)
        errors = rng.random((6, 6))
        labels = SegmentLabels(rng.integers(0, 3, size=(6, 6)), 3)
        base = segment_cutoff(errors, labels)
        for lam in (0.5, 2.0, 4.0):  # powers of two scale floats exactly
            scaled = segment_cutoff(errors * lam, labels)
            np.testing.assert_array_equal(base.keep_mask, scaled.keep_mask)

    def test_csv_rows(self):
        errors = np.array([[0.1, 0.12, 0.11, 0.9]])
        labels = SegmentLabels(np.zeros((1, 4), dtype=int), 1)
        rows = segment_cutoff(errors, labels).csv_rows()
        assert rows == ["0,3,0.12,3"]


class TestObpmLoss:
    def test_zero_error_loss_and_uniform_gradient(self):
        # All residuals zero, beta=1, alpha=0: each retained pixel costs 1.0
        # and the gradient through the mean-abs chain is +-1/c at every band.
        n, c = 6, 4
        x = np.random.default_rng(5).random((n, c))
        xhat = dk.DiffTensor(x.copy())
        labels = SegmentLabels(np.zeros((1, n), dtype=int), 1)
        loss, report = obpm_loss(xhat, x, labels, ObpmConfig(alpha=0.0, beta=1.0))
        assert float(loss.values) == float(n)
        assert report.retained_fraction() == 1.0
        dk.backward(loss)
        np.testing.assert_allclose(np.abs(xhat.grad), np.full((n, c), 1.0 / c), rtol=0, atol=0)

    def test_dropped_pixel_gets_exactly_zero_gradient(self):
        # Reconstruction residuals reproduce the worked cutoff example.
        x = np.zeros((4, 1))
        xhat_values = np.array([[0.1], [0.12], [0.11], [0.9]])
        xhat = dk.DiffTensor(xhat_values)
        labels = SegmentLabels(np.zeros((1, 4), dtype=int), 1)
        loss, report = obpm_loss(xhat, x, labels, ObpmConfig(alpha=1.0, beta=1.0))
        dk.backward(loss)
        assert report.keep_mask.ravel().tolist() == [True, True, True, False]
        assert xhat.grad[3, 0] == 0.0
        assert (xhat.grad[:3, 0] != 0.0).all()

    def test_loss_counts_only_retained(self):
        x = np.zeros((3, 1))
        xhat = dk.DiffTensor(np.array([[0.0], [0.0], [10.0]]))
        labels = SegmentLabels(np.zeros((1, 3), dtype=int), 1)
        cfg = ObpmConfig(alpha=0.0, beta=1.0)
        loss, report = obpm_loss(xhat, x, labels, cfg)
        assert report.retained[0] == 2
        assert float(loss.values) == 2.0  # two retained zero-error pixels

    def test_frozen_mask_grad_check(self):
        rng = np.random.default_rng(6)
        h = w = 4
        c = 3
        x = rng.random((h * w, c))
        xhat0 = x + rng.standard_normal((h * w, c)) * 0.2
        labels = SegmentLabels(rng.integers(0, 3, size=(h, w)), 3)
        cfg = ObpmConfig(alpha=0.7, beta=1.3)
        mask = segment_cutoff(pixel_errors(xhat0, x).values.reshape(h, w), labels).keep_mask

        def f(t):
            loss, _ = obpm_loss(t, x, labels, cfg, keep_mask=mask)
            return loss

        assert dk.grad_check(f, xhat0, eps=1e-6) < 1e-4


class TestPlainLosses:
    def test_identity_zero(self):
        x = np.random.default_rng(7).random((5, 2))
        assert float(l1_loss(x.copy(), x).values) == 0.0
        assert float(l2_loss(x.copy(), x).values) == 0.0

    def test_single_entry(self):
        xhat = np.array([[2.0]])
        x = np.array([[0.0]])
        assert float(l1_loss(xhat, x).values) == 2.0
        assert float(l2_loss(xhat, x).values) == 4.0

    def test_l2_matches_naive_loop(self):
        rng = np.random.default_rng(8)
        xhat = rng.standard_normal((7, 3))
        x = rng.standard_normal((7, 3))
        expected = 0.0
        for i in range(7):
            for j in range(3):
                expected += (xhat[i, j] - x[i, j]) ** 2
        expected /= 21.0
        np.testing.assert_allclose(float(l2_loss(xhat, x).values), expected, rtol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 2))
        x0 = x + rng.standard_normal((4, 2))
        assert dk.grad_check(lambda t: l2_loss(t, x), x0, eps=1e-6) < 1e-8
        assert dk.grad_check(lambda t: l1_loss(t, x), x0, eps=1e-6) < 1e-6


def test_obpm_config_validation():
    with pytest.raises(ValueError):
        ObpmConfig(alpha=-0.1, beta=1.0)
    with pytest.raises(ValueError):
        ObpmConfig(alpha=0.0, beta=0.0)
