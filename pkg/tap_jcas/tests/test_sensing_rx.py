"""Tests for the sensing receiver."""

import logging

import numpy as np
import pytest

from tap_jcas.neural import mlp_init
from tap_jcas.numerics import InvalidArgumentError, RngStream, sample_cnormal
from tap_jcas.sensing_rx import (
    N_WIN_SCALE,
    calibrate_threshold,
    correlate,
    correlate_backward,
    detect,
    estimate_aoa,
    sensing_features,
    sensing_features_backward,
    sufficient_statistic,
    sufficient_statistic_approx,
    thresholds_for,
)
from tap_jcas.streams.utils import HeadType

K = 3


@pytest.fixture
def window() -> np.ndarray:
    """Return one received window of shape (K, 4)."""
    return sample_cnormal(RngStream(1), 0.0, 1.0, (K, 4))


class TestCorrelate:
    """Short-term spatial autocorrelation."""

    def test_hermitian_and_scaled(self, window: np.ndarray) -> None:
        """Test R = Z Z^H / N_win."""
        corr = correlate(window)
        np.testing.assert_allclose(corr, window @ np.conj(window.T) / 4)
        np.testing.assert_allclose(corr, np.conj(corr.T))

    def test_padding_drops_out(self, window: np.ndarray) -> None:
        """Test that zero padding columns do not change the correlation."""
        padded = np.concatenate([window, np.zeros((K, 3))], axis=1)
        np.testing.assert_allclose(correlate(padded[None], np.array([4]))[0], correlate(window))

    def test_needs_a_snapshot(self) -> None:
        """Test that an empty window raises."""
        with pytest.raises(InvalidArgumentError):
            correlate(np.zeros((K, 0)))

    def test_approximate_statistic_is_correlation(self, window: np.ndarray) -> None:
        """Test that the approximate sufficient statistic equals the correlation."""
        np.testing.assert_allclose(sufficient_statistic_approx(window), correlate(window))

    def test_sufficient_statistic(self, window: np.ndarray) -> None:
        """Test eta = Z Y^H / sqrt(N_win) and its shape check."""
        y = sample_cnormal(RngStream(2), 0.0, 1.0, (K, 4))
        np.testing.assert_allclose(sufficient_statistic(window, y), window @ np.conj(y.T) / 2.0)
        with pytest.raises(InvalidArgumentError):
            sufficient_statistic(window, y[:, :2])


class TestFeatures:
    """Network input construction."""

    def test_layout(self, window: np.ndarray) -> None:
        """Test the 2K^2 + 2 layout with window length and noise level last."""
        features = sensing_features(correlate(window), 4, 0.1)
        assert features.shape == (1, 2 * K * K + 2)
        assert features[0, -2] == pytest.approx(4 / N_WIN_SCALE)
        assert features[0, -1] == pytest.approx(-1.0)
        np.testing.assert_allclose(features[0, : K * K], (correlate(window) / 0.1).real.ravel())

    def test_nonpositive_noise_rejected(self, window: np.ndarray) -> None:
        """Test that the noise variance must be positive."""
        with pytest.raises(InvalidArgumentError):
            sensing_features(correlate(window), 4, 0.0)

    def test_backward_through_correlation(self, window: np.ndarray) -> None:
        """Test dL/dZ through features and correlation against central differences."""
        sigma = np.array([0.5])
        c = RngStream(3).generator.standard_normal((1, 2 * K * K))

        def loss(z: np.ndarray) -> float:
            features = sensing_features(correlate(z[None], np.array([4])), 4, sigma)
            return float(np.sum(c * features[:, : 2 * K * K]))

        g_features = np.concatenate([c, np.zeros((1, 2))], axis=1)
        g_corr = sensing_features_backward(g_features, K, sigma)
        g_z = correlate_backward(g_corr, window[None], np.array([4]))[0]

        h = 1e-6
        numeric = np.zeros(window.shape, dtype=complex)
        for index in np.ndindex(window.shape):
            for unit in (1.0, 1j):
                step = np.zeros(window.shape, dtype=complex)
                step[index] = unit * h
                slope = (loss(window + step) - loss(window - step)) / (2 * h)
                numeric[index] += slope if unit == 1.0 else 1j * slope
        np.testing.assert_allclose(g_z, numeric, atol=1e-6)


class TestDetection:
    """Detector thresholds and angle estimates."""

    @pytest.fixture
    def features(self) -> np.ndarray:
        """Return features of windows with lengths 1, 2 and 3."""
        z = sample_cnormal(RngStream(4), 0.0, 1.0, (3, K, 3))
        n_win = np.array([1, 2, 3])
        z = z * (np.arange(3)[None, None, :] < n_win[:, None, None])
        return sensing_features(correlate(z, n_win), n_win, np.ones(3))

    def test_threshold_per_window_length(self, features: np.ndarray) -> None:
        """Test that tau is looked up from the window length feature."""
        net = mlp_init(features.shape[1], (4,), 1, RngStream(5), HeadType.SIGMOID_OFFSET)
        result = detect(net, features, {1: 0.0, 2: 5.0, 3: -5.0})
        assert result.calibrated
        expected = 1.0 / (1.0 + np.exp(-(result.score + np.array([0.0, 5.0, -5.0]))))
        np.testing.assert_allclose(result.p_t, expected)
        np.testing.assert_array_equal(result.decision, (expected > 0.5).astype(np.int8))

    def test_missing_threshold_falls_back(
        self, features: np.ndarray, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Test that an uncalibrated window length uses tau = 0 and is reported."""
        net = mlp_init(features.shape[1], (4,), 1, RngStream(5), HeadType.SIGMOID_OFFSET)
        with caplog.at_level(logging.WARNING):
            result = detect(net, features, {1: 0.0})
        assert not result.calibrated
        assert "N_win=[2, 3]" in caplog.text

    def test_thresholds_for(self) -> None:
        """Test the table lookup."""
        tau, complete = thresholds_for({1: -2.0, 2: -3.0}, np.array([2, 1, 2]))
        np.testing.assert_array_equal(tau, [-3.0, -2.0, -3.0])
        assert complete

    def test_angle_estimate_bounded(self, features: np.ndarray) -> None:
        """Test that the angle estimate stays inside [-pi/2, pi/2]."""
        net = mlp_init(features.shape[1], (4,), 1, RngStream(6), HeadType.SCALED_TANH)
        theta, _ = estimate_aoa(net, 1e3 * features)
        assert theta.shape == (3,)
        assert np.all(np.abs(theta) <= np.pi / 2)


class TestCalibrateThreshold:
    """Threshold limiting."""

    def test_order_statistic(self) -> None:
        """Test that exactly a P_f fraction of calibration scores is declared a target."""
        scores = np.arange(1.0, 101.0)
        result = calibrate_threshold(scores, 0.01)
        assert result.tau == -99.0
        assert np.mean(scores + result.tau > 0) == pytest.approx(0.01)
        assert not result.degenerate

    def test_degenerate_scores(self, caplog: pytest.LogCaptureFixture) -> None:
        """Test that constant scores are flagged."""
        with caplog.at_level(logging.WARNING):
            result = calibrate_threshold(np.zeros(500), 0.01)
        assert result.degenerate
        assert "degenerate" in caplog.text

    def test_few_scores_warn(self, caplog: pytest.LogCaptureFixture) -> None:
        """Test that fewer than 1 / P_f scores produce a warning."""
        with caplog.at_level(logging.WARNING):
            calibrate_threshold(np.arange(10.0), 0.01)
        assert "coarse" in caplog.text

    @pytest.mark.parametrize("scores, p_f", [([], 0.01), ([1.0, 2.0], 0.0), ([1.0], 1.0)])
    def test_invalid(self, scores: list, p_f: float) -> None:
        """Test the domain checks."""
        with pytest.raises(InvalidArgumentError):
            calibrate_threshold(scores, p_f)
