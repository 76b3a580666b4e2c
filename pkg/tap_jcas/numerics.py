"""Complex linear algebra, random sampling and special functions.

Every other module of the simulator consumes these kernels. Complex matrices
are plain ``numpy`` ``complex128`` arrays, which store each entry as an
interleaved (real, imag) pair of 64-bit floats in one flat buffer.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

logger = logging.getLogger(__name__)

CMat = npt.NDArray[np.complex128]
RVec = npt.NDArray[np.float64]
StreamId = Union[int, Tuple[int, ...]]

HERMITIAN_TOL = 1e-10


class InvalidArgumentError(ValueError):
    """Raised when an operation receives an argument outside its domain."""


class ContractViolationError(RuntimeError):
    """Raised when a caller breaks a usage contract (stale tape, shape mismatch)."""


@dataclass
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    The generator is a counter-based Philox keyed by a ``SeedSequence`` whose
    spawn key is the stream id, so distinct ids give independent streams and
    identical ids replay identical draws regardless of evaluation order. A
    tuple id such as ``(phase, n_win, chunk)`` is used as the spawn key as is.
    """

    seed: int
    stream_id: StreamId = 0
    _generator: Optional[np.random.Generator] = field(default=None, init=False, repr=False)

    @property
    def generator(self) -> np.random.Generator:
        """Return the (lazily created) generator owned by this handle."""
        if self._generator is None:
            key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
            sequence = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
            self._generator = np.random.Generator(np.random.Philox(sequence))
        return self._generator

    def child(self, stream_id: StreamId) -> "RngStream":
        """Return a fresh stream sharing the seed with a different id."""
        return RngStream(self.seed, stream_id)


def sample_cnormal(
    rng: RngStream, mean: complex, variance: float, n: int | Tuple[int, ...]
) -> CMat:
    """Draw circularly-symmetric complex normal samples.

    Args
    ----
    rng : RngStream
        Stream to draw from; it advances.
    mean : complex
        Mean of the distribution.
    variance : float
        Total variance E|z - mean|^2; real and imaginary parts get half each.
    n : int | tuple
        Number of draws or output shape.

    Returns
    -------
    CMat
        Complex samples with the requested shape.

    """
    if variance < 0:
        raise InvalidArgumentError(f"Variance must be nonnegative, got {variance}.")
    shape = (n,) if isinstance(n, (int, np.integer)) else tuple(n)
    scale = np.sqrt(variance / 2.0)
    draws = rng.generator.standard_normal(shape + (2,))
    return mean + scale * (draws[..., 0] + 1j * draws[..., 1])


def _check_hermitian(m: CMat) -> float:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise InvalidArgumentError(f"Expected square matrices, got shape {m.shape}.")
    norm = float(np.max(np.linalg.norm(m, axis=(-2, -1)))) if m.size else 0.0
    asym = float(np.max(np.abs(m - np.conj(np.swapaxes(m, -1, -2))))) if m.size else 0.0
    if asym > HERMITIAN_TOL * max(norm, 1.0):
        raise InvalidArgumentError(f"Matrix is not Hermitian (asymmetry {asym:.3e}).")
    return norm


def jacobi_eig(m: CMat, tol: float = 1e-14, max_sweeps: int = 100) -> Tuple[RVec, CMat]:
    """Diagonalize one Hermitian matrix with cyclic complex Jacobi rotations.

    Each rotation first removes the phase of the pivot with a diagonal unitary
    and then applies the real symmetric Jacobi rotation that zeroes it.
    """
    a = np.array(m, dtype=np.complex128)
    k = a.shape[0]
    v = np.eye(k, dtype=np.complex128)
    scale = max(float(np.linalg.norm(a)), np.finfo(float).tiny)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(a) ** 2) - np.sum(np.abs(np.diag(a)) ** 2))
        if off <= tol * scale:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                h = a[p, q]
                mag = abs(h)
                if mag <= tol * scale * 1e-3:
                    continue
                phase = h / mag
                app, aqq = a[p, p].real, a[q, q].real
                angle = 0.5 * np.arctan2(2.0 * mag, aqq - app)
                c, s = np.cos(angle), np.sin(angle)
                rot = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
                cols = [p, q]
                a[:, cols] = a[:, cols] @ rot
                a[cols, :] = np.conj(rot.T) @ a[cols, :]
                v[:, cols] = v[:, cols] @ rot
                a[p, q] = a[q, p] = 0.0
    else:
        logger.warning(f"Jacobi eigensolver stopped after {max_sweeps} sweeps.")

    return np.real(np.diag(a)).copy(), v


def hermitian_eig(
    m: CMat, method: Literal["lapack", "jacobi"] = "lapack"
) -> Tuple[RVec, CMat]:
    """Eigen-decompose a Hermitian matrix (or a stack of them).

    Args
    ----
    m : CMat
        Hermitian matrix of shape (K, K) or stack (..., K, K).
    method : str
        ``lapack`` uses ``numpy.linalg.eigh``; ``jacobi`` uses the cyclic Jacobi
        solver (single matrix only).

    Returns
    -------
    Tuple[RVec, CMat]
        Eigenvalues sorted descending and unit-norm eigenvectors as columns.

    """
    m = np.asarray(m, dtype=np.complex128)
    _check_hermitian(m)
    match method:
        case "lapack":
            hermitian = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
            values, vectors = np.linalg.eigh(hermitian)
            return values[..., ::-1].copy(), vectors[..., ::-1].copy()
        case "jacobi":
            if m.ndim != 2:
                raise InvalidArgumentError("Jacobi solver accepts a single matrix only.")
            values, vectors = jacobi_eig(m)
            order = np.argsort(values)[::-1]
            vectors = vectors[:, order]
            return values[order], vectors / np.linalg.norm(vectors, axis=0)
        case _:
            raise InvalidArgumentError(f"Unknown eigensolver method: {method}")


def chi2_quantile(dof: int, p: float) -> float:
    """Return the ``p``-quantile of the chi-squared distribution.

    The CDF is the regularized lower incomplete gamma function
    ``P(dof/2, x/2)``; the quantile is bracketed and solved with Brent's method.
    """
    if dof < 1:
        raise InvalidArgumentError(f"Degrees of freedom must be >= 1, got {dof}.")
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"Probability must lie in (0, 1), got {p}.")

    half = dof / 2.0

    def residual(x: float) -> float:
        return float(special.gammainc(half, x / 2.0)) - p

    upper = max(2.0 * dof, 10.0)
    while residual(upper) < 0.0:
        upper *= 2.0
    return float(optimize.brentq(residual, 0.0, upper, xtol=1e-14, rtol=1e-14, maxiter=500))


def pseudo_inverse(m: CMat) -> CMat:
    """Return the Moore-Penrose pseudoinverse of a nonempty matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=np.complex128))
    if m.size == 0:
        raise InvalidArgumentError("Pseudoinverse of an empty matrix is undefined.")
    return np.linalg.pinv(m)
