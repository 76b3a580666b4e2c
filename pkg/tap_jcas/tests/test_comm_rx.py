"""Tests for equalization and demapping."""

import numpy as np
import pytest

from tap_jcas.comm_rx import (
    NOISE_FEATURE_CLIP,
    demap_mld,
    demap_nn,
    demapper_features,
    demapper_features_backward,
    harden,
    mmse_equalize,
    mmse_equalize_backward,
)
from tap_jcas.constellation import make_psk, make_qam
from tap_jcas.neural import mlp_init
from tap_jcas.numerics import InvalidArgumentError, RngStream, sample_cnormal


class TestMmse:
    """Single-tap MMSE equalizer."""

    def test_high_snr_recovers_symbol(self) -> None:
        """Test that x_eq approaches x as the noise vanishes."""
        gamma = np.array([0.8 - 0.3j, -1.2 + 0.1j])
        x = np.array([1 + 1j, -1 + 1j]) / np.sqrt(2)
        x_eq, snr = mmse_equalize(gamma * x, gamma, 1e-9)
        np.testing.assert_allclose(x_eq, x, atol=1e-8)
        np.testing.assert_allclose(snr, np.abs(gamma) ** 2 / 1e-9)

    def test_nonpositive_noise_rejected(self) -> None:
        """Test that the noise variance must be positive."""
        with pytest.raises(InvalidArgumentError):
            mmse_equalize(np.ones(2), np.ones(2), 0.0)

    def test_backward(self) -> None:
        """Test the received-sample, channel and noise gradients."""
        rng = RngStream(1)
        z = sample_cnormal(rng, 0.0, 1.0, 3)
        gamma = sample_cnormal(rng, 0.0, 1.0, 3)
        w = sample_cnormal(rng, 0.0, 1.0, 3)
        sigma = np.array([0.3, 0.5, 0.7])

        def loss(z_: np.ndarray, gamma_: np.ndarray, sigma_: np.ndarray) -> float:
            x_eq, _ = mmse_equalize(z_, gamma_, sigma_)
            return float(np.real(np.sum(np.conj(w) * x_eq)))

        g_z, g_gamma, g_sigma = mmse_equalize_backward(w, z, gamma, sigma)
        h = 1e-6
        for i in range(3):
            step = np.zeros(3, dtype=complex)
            step[i] = h
            dz = (loss(z + step, gamma, sigma) - loss(z - step, gamma, sigma)) / (2 * h)
            dzi = (loss(z + 1j * step, gamma, sigma) - loss(z - 1j * step, gamma, sigma)) / (2 * h)
            assert g_z[i] == pytest.approx(dz + 1j * dzi, abs=1e-6)
            dg = (loss(z, gamma + step, sigma) - loss(z, gamma - step, sigma)) / (2 * h)
            dgi = (loss(z, gamma + 1j * step, sigma) - loss(z, gamma - 1j * step, sigma)) / (2 * h)
            assert g_gamma[i] == pytest.approx(dg + 1j * dgi, abs=1e-6)
            ds = (loss(z, gamma, sigma + step.real) - loss(z, gamma, sigma - step.real)) / (2 * h)
            assert g_sigma[i] == pytest.approx(ds, abs=1e-6)

    def test_weight_minimizes_mse(self) -> None:
        """Test that perturbing the MMSE weight never lowers the mean squared error."""
        gamma, sigma = 0.7 - 0.4j, 0.35
        w_opt, _ = mmse_equalize(np.ones(1), np.full(1, gamma), sigma)

        def mse(w: complex) -> float:
            # unit-power symbols and independent noise
            return float(abs(w * gamma - 1.0) ** 2 + abs(w) ** 2 * sigma)

        best = mse(w_opt[0])
        assert best == pytest.approx(sigma / (abs(gamma) ** 2 + sigma))
        rng = RngStream(9)
        for delta in sample_cnormal(rng, 0.0, 0.01, 50):
            assert mse(w_opt[0] + delta) >= best


class TestDemapping:
    """Neural and max-likelihood demappers."""

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_mld_noiseless_decisions(self, order: int) -> None:
        """Test that MLD hard decisions recover every label at very high SNR."""
        c = make_qam(order)
        gamma = np.full(order, 0.9 + 0.4j)
        llrs = demap_mld(c, gamma * c.points, gamma, 1e-6)
        assert llrs.shape == (order, c.bits_per_symbol)
        np.testing.assert_array_equal(harden(llrs), c.bit_labels)

    def test_mld_sign_convention(self) -> None:
        """Test that a positive LLR favours bit zero."""
        c = make_psk(4)
        llrs = demap_mld(c, c.points[:1], np.ones(1), 0.5)
        assert np.all(llrs[0] > 0)

    def test_mld_zero_channel_is_uninformative(self) -> None:
        """Test that a zero channel gives zero LLRs for a symmetric labelling."""
        c = make_qam(16)
        llrs = demap_mld(c, np.array([0.3 + 0.1j]), np.zeros(1), 1.0)
        np.testing.assert_allclose(llrs, 0.0, atol=1e-12)

    def test_mld_rejects_nonpositive_noise(self) -> None:
        """Test that the noise variance must be positive."""
        with pytest.raises(InvalidArgumentError):
            demap_mld(make_qam(4), np.ones(1), np.ones(1), 0.0)

    def test_features_clip_noise(self) -> None:
        """Test the feature layout and the clipped noise column."""
        features = demapper_features(np.array([[1 + 2j, 3 - 1j]]), np.array([[0.0, 100.0]]))
        assert features.shape == (2, 3)
        np.testing.assert_allclose(features[:, 0], [1.0, 3.0])
        np.testing.assert_allclose(features[:, 2], [NOISE_FEATURE_CLIP, -2.0])

    def test_nn_shapes(self) -> None:
        """Test that the neural demapper returns c LLRs per sample."""
        net = mlp_init(3, (8,), 4, RngStream(2))
        llrs, _ = demap_nn(net, np.ones((2, 5), dtype=complex), np.ones((2, 5)))
        assert llrs.shape == (10, 4)

    def test_harden(self) -> None:
        """Test that negative LLRs decide for one."""
        np.testing.assert_array_equal(harden(np.array([-0.1, 0.0, 2.0])), [1, 0, 0])

    def test_features_batched(self) -> None:
        """Test that a per-window SNR column broadcasts over a batch of windows."""
        x_eq = np.arange(12).reshape(3, 4) * (1 + 1j)
        snr = np.array([[1.0], [10.0], [100.0]])
        features = demapper_features(x_eq, snr)
        assert features.shape == (12, 3)
        np.testing.assert_allclose(features[:, 0], np.arange(12))
        np.testing.assert_allclose(features[:, 2], np.repeat([0.0, -1.0, -2.0], 4))

    def test_features_backward(self) -> None:
        """Test the channel and noise gradients of the noise feature, zero where clipped."""
        rng = RngStream(6)
        gamma = sample_cnormal(rng, 0.0, 1.0, (2, 3))
        gamma[1, 2] = 1e-5
        sigma = np.array([[0.2], [0.6]])
        x_eq = sample_cnormal(rng, 0.0, 1.0, (2, 3))
        weights = rng.generator.standard_normal((6, 3))

        def loss(gamma_: np.ndarray, sigma_: np.ndarray) -> float:
            features = demapper_features(x_eq, np.abs(gamma_) ** 2 / sigma_)
            return float(np.sum(weights * features))

        g_x, g_gamma, g_sigma = demapper_features_backward(weights, gamma, sigma)
        np.testing.assert_allclose(g_x.ravel(), weights[:, 0] + 1j * weights[:, 1])
        assert g_gamma[1, 2] == 0
        h = 1e-6
        for index in np.ndindex(gamma.shape):
            step = np.zeros(gamma.shape, dtype=complex)
            step[index] = h
            d_re = (loss(gamma + step, sigma) - loss(gamma - step, sigma)) / (2 * h)
            d_im = (loss(gamma + 1j * step, sigma) - loss(gamma - 1j * step, sigma)) / (2 * h)
            assert g_gamma[index] == pytest.approx(d_re + 1j * d_im, abs=1e-5)
        for row in range(2):
            step = np.zeros_like(sigma)
            step[row] = h
            d_sigma = (loss(gamma, sigma + step) - loss(gamma, sigma - step)) / (2 * h)
            assert g_sigma[row].sum() == pytest.approx(d_sigma, abs=1e-5)

    @pytest.mark.parametrize("order", [4, 16])
    def test_mld_matches_brute_force_posterior(self, order: int) -> None:
        """Test the LLRs against explicit sums of the Gaussian likelihoods."""
        c = make_qam(order)
        rng = RngStream(order)
        z = sample_cnormal(rng, 0.0, 1.0, 5)
        gamma = sample_cnormal(rng, 0.0, 1.0, 5)
        sigma = 0.4
        llrs = demap_mld(c, z, gamma, sigma)
        for n in range(5):
            likelihood = np.exp(-np.abs(z[n] - gamma[n] * c.points) ** 2 / sigma)
            for bit in range(c.bits_per_symbol):
                zero = likelihood[c.bit_labels[:, bit] == 0].sum()
                one = likelihood[c.bit_labels[:, bit] == 1].sum()
                assert llrs[n, bit] == pytest.approx(np.log(zero / one), abs=1e-9)
