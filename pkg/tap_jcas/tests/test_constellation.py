"""Tests for modulation alphabets and shaping analytics."""

import numpy as np
import pytest

from tap_jcas.constellation import (
    ApskSpec,
    Constellation,
    apsk_from_kappa,
    dmin_from_kappa,
    gray,
    gray_inverse,
    kurtosis,
    make_apsk,
    make_psk,
    make_qam,
    mean_min_distance,
)
from tap_jcas.numerics import InvalidArgumentError


def nearest_neighbours_differ_in_one_bit(c: Constellation) -> bool:
    """Return whether every pair at the minimum distance differs in exactly one bit."""
    distances = np.abs(c.points[:, None] - c.points[None, :])
    np.fill_diagonal(distances, np.inf)
    d_min = distances.min()
    labels = c.bit_labels
    for i, j in zip(*np.nonzero(np.isclose(distances, d_min))):
        if np.sum(labels[i] != labels[j]) != 1:
            return False
    return True


class TestGray:
    """Binary-reflected Gray code."""

    def test_adjacent_codes_differ_in_one_bit(self) -> None:
        """Test the defining property of the code."""
        codes = gray(np.arange(64))
        flips = np.array([bin(int(a ^ b)).count("1") for a, b in zip(codes[:-1], codes[1:])])
        assert np.all(flips == 1)

    def test_inverse(self) -> None:
        """Test that the inverse undoes the code."""
        n = np.arange(256)
        np.testing.assert_array_equal(gray_inverse(gray(n)), n)


class TestQam:
    """Square QAM."""

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_power_and_gray_labels(self, order: int) -> None:
        """Test unit mean power and Gray labelling of nearest neighbours."""
        c = make_qam(order)
        assert c.mean_power == pytest.approx(1.0)
        assert nearest_neighbours_differ_in_one_bit(c)

    def test_16qam_shape(self) -> None:
        """Test kurtosis 1.32 and mean minimum distance 2/sqrt(10)."""
        c = make_qam(16)
        assert kurtosis(c) == pytest.approx(1.32)
        assert mean_min_distance(c) == pytest.approx(2.0 / np.sqrt(10.0))

    def test_unsupported_order(self) -> None:
        """Test that non-square orders are refused."""
        with pytest.raises(InvalidArgumentError):
            make_qam(8)


class TestPsk:
    """Phase-shift keying."""

    def test_16psk_shape(self) -> None:
        """Test constant modulus and mean minimum distance 2 sin(pi/16)."""
        c = make_psk(16)
        assert kurtosis(c) == pytest.approx(1.0)
        assert mean_min_distance(c) == pytest.approx(0.3902, abs=1e-4)
        assert nearest_neighbours_differ_in_one_bit(c)


class TestApsk:
    """Two-ring APSK and its kurtosis parametrization."""

    @pytest.mark.parametrize("kappa", [1.0, 1.1, 1.32, 1.6, 1.9])
    def test_kurtosis_parametrization(self, kappa: float) -> None:
        """Test that the ring radii reproduce the requested kurtosis at unit power."""
        c = make_apsk(apsk_from_kappa(kappa))
        assert c.mean_power == pytest.approx(1.0)
        assert kurtosis(c) == pytest.approx(kappa)

    @pytest.mark.parametrize("kappa", [1.0, 1.05, 1.1])
    def test_closed_form_dmin(self, kappa: float) -> None:
        """Test the closed-form distance against brute force where it is valid."""
        closed, valid = dmin_from_kappa(kappa)
        assert valid
        assert closed == pytest.approx(mean_min_distance(make_apsk(apsk_from_kappa(kappa))))

    def test_closed_form_flags_narrow_inner_ring(self) -> None:
        """Test that the closed form reports itself invalid once the inner ring is too tight."""
        _, valid = dmin_from_kappa(1.32)
        assert not valid

    def test_unit_kurtosis_is_psk(self) -> None:
        """Test that kappa = 1 degenerates to the 16-PSK distance."""
        closed, _ = dmin_from_kappa(1.0)
        assert closed == pytest.approx(2.0 * np.sin(np.pi / 16))

    @pytest.mark.parametrize("kappa", [0.9, 2.0])
    def test_out_of_range(self, kappa: float) -> None:
        """Test that kurtosis outside [1, 2) raises."""
        with pytest.raises(InvalidArgumentError):
            dmin_from_kappa(kappa)

    @pytest.mark.parametrize("radius", [1.2, 0.0, -0.3])
    def test_inner_radius_bounds(self, radius: float) -> None:
        """Test that a collapsed, negative or oversized inner ring is refused up front."""
        with pytest.raises(InvalidArgumentError, match="Inner radius"):
            make_apsk(ApskSpec(inner_radius=radius))


class TestConstellationValidation:
    """Alphabet invariants."""

    def test_order_must_be_power_of_two(self) -> None:
        """Test that three points are refused."""
        with pytest.raises(InvalidArgumentError):
            Constellation(np.array([1, -1, 1j], dtype=complex))

    def test_points_must_be_distinct(self) -> None:
        """Test that repeated points are refused."""
        with pytest.raises(InvalidArgumentError):
            Constellation(np.array([1, 1, -1, 1j], dtype=complex))

    def test_bit_labels_are_natural_binary(self) -> None:
        """Test that symbol m carries the binary label of m, MSB first."""
        labels = make_qam(16).bit_labels
        np.testing.assert_array_equal(labels[6], [0, 1, 1, 0])
