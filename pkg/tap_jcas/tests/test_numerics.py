"""Tests for the linear algebra, sampling and special-function kernels."""

import numpy as np
import pytest
from scipy import stats

from tap_jcas.numerics import (
    InvalidArgumentError,
    RngStream,
    chi2_quantile,
    hermitian_eig,
    pseudo_inverse,
    sample_cnormal,
)


def random_hermitian(seed: int, size: int) -> np.ndarray:
    """Return a random Hermitian matrix."""
    a = sample_cnormal(RngStream(seed, 99), 0.0, 1.0, (size, size))
    return a + np.conj(a.T)


class TestRngStream:
    """Stream identity decides the draws."""

    def test_same_identity_replays(self) -> None:
        """Test that equal (seed, stream id) pairs give equal draws."""
        a = RngStream(7, 3).generator.standard_normal(5)
        b = RngStream(7, 3).generator.standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_ids_differ(self) -> None:
        """Test that stream ids separate the draws."""
        a = RngStream(7, 3).generator.standard_normal(5)
        b = RngStream(7, 4).generator.standard_normal(5)
        assert not np.allclose(a, b)

    def test_child_shares_seed(self) -> None:
        """Test that a child stream keeps the seed and takes the new id."""
        child = RngStream(11, 0).child(5)
        assert (child.seed, child.stream_id) == (11, 5)

    def test_tuple_ids(self) -> None:
        """Test that a scalar id equals its one-element tuple and tuple ids never wrap."""
        scalar = RngStream(7, 3).generator.standard_normal(4)
        single = RngStream(7, (3,)).generator.standard_normal(4)
        np.testing.assert_array_equal(scalar, single)
        wide = RngStream(7, (3_000_000, 1, 1000)).generator.standard_normal(4)
        next_length = RngStream(7, (3_000_000, 2, 0)).generator.standard_normal(4)
        assert not np.allclose(wide, next_length)


class TestSampleCnormal:
    """Circularly-symmetric complex normal draws."""

    def test_variance_and_circularity(self) -> None:
        """Test the total variance and the equal split between real and imaginary parts."""
        z = sample_cnormal(RngStream(1), 0.0, 2.0, 200_000)
        assert np.mean(np.abs(z) ** 2) == pytest.approx(2.0, rel=0.02)
        assert np.var(z.real) == pytest.approx(1.0, rel=0.02)
        assert abs(np.mean(z * z)) < 0.05

    def test_shape_and_mean(self) -> None:
        """Test tuple shapes and a nonzero mean."""
        z = sample_cnormal(RngStream(2), 1 + 1j, 0.0, (3, 4))
        assert z.shape == (3, 4)
        np.testing.assert_array_equal(z, np.full((3, 4), 1 + 1j))

    def test_negative_variance_rejected(self) -> None:
        """Test that a negative variance raises."""
        with pytest.raises(InvalidArgumentError):
            sample_cnormal(RngStream(0), 0.0, -1.0, 3)

    def test_streams_uncorrelated(self) -> None:
        """Test that draws of two stream ids are uncorrelated."""
        a = sample_cnormal(RngStream(3, 1), 0.0, 1.0, 200_000)
        b = sample_cnormal(RngStream(3, 2), 0.0, 1.0, 200_000)
        assert abs(np.mean(a * np.conj(b))) < 0.01


class TestHermitianEig:
    """Eigen-decomposition of Hermitian matrices."""

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_reconstruction(self, method: str) -> None:
        """Test that eigenpairs satisfy A u = lambda u with descending eigenvalues."""
        a = random_hermitian(3, 6)
        values, vectors = hermitian_eig(a, method=method)
        assert np.all(np.diff(values) <= 1e-12)
        np.testing.assert_allclose(a @ vectors, vectors * values, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=0), 1.0, atol=1e-12)

    def test_jacobi_matches_lapack(self) -> None:
        """Test that both solvers agree on the spectrum."""
        a = random_hermitian(4, 8)
        lapack, _ = hermitian_eig(a)
        jacobi, _ = hermitian_eig(a, method="jacobi")
        np.testing.assert_allclose(jacobi, lapack, atol=1e-10)

    def test_stack(self) -> None:
        """Test that a stack of matrices is decomposed matrix by matrix."""
        stack = np.stack([random_hermitian(s, 4) for s in range(3)])
        values, _ = hermitian_eig(stack)
        assert values.shape == (3, 4)
        single, _ = hermitian_eig(stack[1])
        np.testing.assert_allclose(values[1], single)

    def test_non_hermitian_rejected(self) -> None:
        """Test that an asymmetric matrix raises."""
        with pytest.raises(InvalidArgumentError):
            hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_unknown_method_rejected(self) -> None:
        """Test that an unknown solver name raises."""
        with pytest.raises(InvalidArgumentError):
            hermitian_eig(np.eye(2), method="qr")  # type: ignore[arg-type]


class TestChi2Quantile:
    """Chi-squared quantiles."""

    def test_reference_value(self) -> None:
        """Test the 0.99 quantile with 32 degrees of freedom."""
        assert chi2_quantile(32, 0.99) == pytest.approx(53.4858, abs=1e-3)

    def test_two_degrees_closed_form(self) -> None:
        """Test against -2 ln(1 - p) for two degrees of freedom."""
        assert chi2_quantile(2, 0.9) == pytest.approx(-2.0 * np.log(0.1), rel=1e-10)

    @pytest.mark.parametrize("dof, p", [(0, 0.5), (4, 0.0), (4, 1.0)])
    def test_invalid_arguments(self, dof: int, p: float) -> None:
        """Test the domain checks."""
        with pytest.raises(InvalidArgumentError):
            chi2_quantile(dof, p)

    @pytest.mark.parametrize("dof", [2, 8, 32, 160])
    def test_matches_scipy_and_monotone(self, dof: int) -> None:
        """Test agreement with scipy and that quantiles increase with p."""
        probabilities = np.linspace(0.01, 0.99, 25)
        values = np.array([chi2_quantile(dof, p) for p in probabilities])
        np.testing.assert_allclose(values, stats.chi2.ppf(probabilities, dof), rtol=1e-8)
        assert np.all(np.diff(values) > 0)


class TestPseudoInverse:
    """Moore-Penrose pseudoinverse."""

    def test_penrose_identity(self) -> None:
        """Test A A+ A = A for a tall matrix."""
        a = sample_cnormal(RngStream(5), 0.0, 1.0, (5, 2))
        np.testing.assert_allclose(a @ pseudo_inverse(a) @ a, a, atol=1e-12)

    def test_empty_rejected(self) -> None:
        """Test that an empty matrix raises."""
        with pytest.raises(InvalidArgumentError):
            pseudo_inverse(np.zeros((0, 3)))
