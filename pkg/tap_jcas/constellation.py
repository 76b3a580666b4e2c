"""Classical and shaped modulation alphabets and their shaping analytics.

Symbols are indexed by ``m`` and carry the natural binary label of ``m``
(MSB first). Classical alphabets place the points so that this labeling is a
Gray mapping; shaped alphabets keep the natural order as the fixed mapping.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from tap_jcas.numerics import CMat, InvalidArgumentError

logger = logging.getLogger(__name__)


def gray(n: np.ndarray | int) -> np.ndarray:
    """Return the binary-reflected Gray code of ``n``."""
    n = np.asarray(n, dtype=np.int64)
    return n ^ (n >> 1)


def gray_inverse(g: np.ndarray | int) -> np.ndarray:
    """Invert :func:`gray` elementwise."""
    n = np.array(g, dtype=np.int64, copy=True)
    shift = n >> 1
    while np.any(shift):
        n ^= shift
        shift >>= 1
    return n


def bit_labels(order: int) -> np.ndarray:
    """Return the ``(M, log2 M)`` natural binary labels, MSB first."""
    bits = int(np.log2(order))
    index = np.arange(order)[:, None]
    return ((index >> np.arange(bits - 1, -1, -1)[None, :]) & 1).astype(np.int8)


@dataclass(frozen=True)
class Constellation:
    """Modulation alphabet with a fixed bit mapping."""

    points: CMat
    name: str = "custom"

    def __post_init__(self) -> None:
        order = len(self.points)
        if order < 2 or order & (order - 1):
            raise InvalidArgumentError(f"Constellation order must be a power of two, got {order}.")
        if not np.all(np.isfinite(self.points)):
            raise InvalidArgumentError("Constellation points must be finite.")
        distances = np.abs(self.points[:, None] - self.points[None, :])
        np.fill_diagonal(distances, np.inf)
        if np.min(distances) <= 1e-12:
            raise InvalidArgumentError("Constellation points must be distinct.")

    @property
    def order(self) -> int:
        """Return the number of points ``M``."""
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        """Return ``c = log2 M``."""
        return int(np.log2(self.order))

    @property
    def bit_labels(self) -> np.ndarray:
        """Return the ``(M, c)`` label matrix."""
        return bit_labels(self.order)

    @property
    def mean_power(self) -> float:
        """Return ``(1/M) sum |x_m|^2``."""
        return float(np.mean(np.abs(self.points) ** 2))


def normalize(points: CMat) -> CMat:
    """Scale points to unit average power."""
    points = np.asarray(points, dtype=np.complex128)
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def make_qam(order: int) -> Constellation:
    """Build a square Gray-labeled QAM with unit average power.

    The first half of each label selects the in-phase level, the second half the
    quadrature level; each half is Gray-mapped onto its axis.
    """
    if order not in (4, 16, 64):
        raise InvalidArgumentError(f"Unsupported QAM order {order}; use 4, 16 or 64.")
    half_bits = int(np.log2(order)) // 2
    side = 1 << half_bits
    index = np.arange(order)
    i_level = gray_inverse(index >> half_bits)
    q_level = gray_inverse(index & (side - 1))
    amplitudes = 2 * np.arange(side) - (side - 1)
    points = amplitudes[i_level] + 1j * amplitudes[q_level]
    return Constellation(normalize(points), name=f"{order}-QAM")


def make_psk(order: int) -> Constellation:
    """Build a Gray-labeled PSK on the unit circle."""
    if order < 2:
        raise InvalidArgumentError(f"PSK order must be >= 2, got {order}.")
    position = gray_inverse(np.arange(order))
    return Constellation(np.exp(2j * np.pi * position / order), name=f"{order}-PSK")


@dataclass(frozen=True)
class ApskSpec:
    """Two-ring 16-APSK with inner radius ``R2`` and power-normalized outer radius."""

    inner_radius: float
    order: int = 16

    @property
    def outer_radius(self) -> float:
        """Return ``R1 = sqrt(2 - R2^2)``."""
        return float(np.sqrt(2.0 - self.inner_radius**2))


def make_apsk(spec: ApskSpec) -> Constellation:
    """Build the two-ring APSK: 8 inner points, 8 outer points rotated by ``2*pi/M``."""
    if spec.order != 16:
        raise InvalidArgumentError(f"APSK is defined for M=16 only, got {spec.order}.")
    if not 0.0 < spec.inner_radius <= 1.0:
        raise InvalidArgumentError(f"Inner radius must lie in (0, 1], got {spec.inner_radius}.")
    ring = np.arange(spec.order // 2)
    inner = spec.inner_radius * np.exp(2j * np.pi * ring / (spec.order // 2))
    outer = spec.outer_radius * np.exp(2j * np.pi * (ring / (spec.order // 2) + 1 / spec.order))
    return Constellation(np.concatenate([inner, outer]), name=f"16-APSK(R2={spec.inner_radius})")


def apsk_from_kappa(kappa: float) -> ApskSpec:
    """Return the APSK whose kurtosis equals ``kappa`` (``1 <= kappa < 2``)."""
    if not 1.0 <= kappa < 2.0:
        raise InvalidArgumentError(f"APSK kurtosis must lie in [1, 2), got {kappa}.")
    # R1^2 + R2^2 = 2 and R1^2 R2^2 = 2 - kappa
    return ApskSpec(inner_radius=float(np.sqrt(1.0 - np.sqrt(kappa - 1.0))))


def kurtosis(c: Constellation) -> float:
    """Return the fourth standardized moment of the alphabet."""
    centered = c.points - np.mean(c.points)
    sigma2 = np.mean(np.abs(centered) ** 2)
    return float(np.mean(np.abs(centered) ** 4) / sigma2**2)


def mean_min_distance(c: Constellation) -> float:
    """Return the mean over symbols of the distance to the nearest other symbol."""
    distances = np.abs(c.points[:, None] - c.points[None, :])
    np.fill_diagonal(distances, np.inf)
    return float(np.mean(np.min(distances, axis=1)))


def dmin_from_kappa(kappa: float, order: int = 16) -> Tuple[float, bool]:
    """Closed-form mean minimum distance of the two-ring APSK with kurtosis ``kappa``.

    Returns the inter-ring nearest-neighbour distance and whether it is the
    actual minimum, i.e. whether the inner ring is still wide enough.
    """
    if kappa < 1.0:
        raise InvalidArgumentError(f"Kurtosis must be >= 1, got {kappa}.")
    if kappa >= 2.0:
        raise InvalidArgumentError(f"Two-ring APSK kurtosis is below 2, got {kappa}.")
    value = float(np.sqrt(2.0 - 2.0 * np.sqrt(2.0 - kappa) * np.cos(2 * np.pi / order)))
    inner = apsk_from_kappa(kappa).inner_radius
    valid = value <= 2.0 * inner * np.sin(2 * np.pi / order) + 1e-12
    if not valid:
        logger.debug(f"Closed-form d_min outside its validity region at kappa={kappa}.")
    return value, bool(valid)
