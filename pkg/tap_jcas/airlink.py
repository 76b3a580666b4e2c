"""Transmit chain, communication and sensing channels, and beam analytics.

Arrays are batched over scenarios: a batch of ``B`` windows padded to ``N``
snapshots carries symbols ``(B, N)``, transmit signals ``(B, K, N)`` and
sensing echoes ``(B, K, N)``. Padded snapshots have zero channel taps and zero
noise so that they drop out of every correlation and loss.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from tap_jcas.constellation import bit_labels
from tap_jcas.numerics import CMat, InvalidArgumentError, RngStream, RVec, sample_cnormal

logger = logging.getLogger(__name__)

BEAM_GRID_STEP = np.deg2rad(0.25)


def _interval(value: Any) -> Tuple[float, float]:
    lo, hi = (float(v) for v in value)
    return lo, hi


@dataclass(frozen=True)
class ScenarioConfig:
    """Single-user JCAS scenario; angles in radians, SNR ranges in dB."""

    K: int = 16
    M: int = 16
    comm_area: Tuple[float, float] = (float(np.deg2rad(30.0)), float(np.deg2rad(50.0)))
    sens_area: Tuple[float, float] = (float(np.deg2rad(-20.0)), float(np.deg2rad(20.0)))
    sigma_c2: float = 1.0
    sigma_s2: float = 1.0
    snr_c_db: Tuple[float, float] = (5.0, 30.0)
    snr_s_db: Tuple[float, float] = (-10.0, 10.0)
    n_win_min: int = 1
    n_win_max: int = 15
    target_prior: float = 0.5
    p_f: float = 1e-2

    def __post_init__(self) -> None:
        if self.K < 2:
            raise InvalidArgumentError(f"Need at least two antennas, got K={self.K}.")
        if self.M < 2 or self.M & (self.M - 1):
            raise InvalidArgumentError(f"Constellation order must be a power of two, got {self.M}.")
        for name in ("comm_area", "sens_area"):
            lo, hi = getattr(self, name)
            if not -np.pi / 2 < lo <= hi < np.pi / 2:
                raise InvalidArgumentError(f"{name} must be a nonempty interval in (-pi/2, pi/2).")
        if self.sigma_c2 <= 0 or self.sigma_s2 <= 0:
            raise InvalidArgumentError("Channel variances must be positive.")
        if not 1 <= self.n_win_min <= self.n_win_max:
            raise InvalidArgumentError(
                f"Invalid window range [{self.n_win_min}, {self.n_win_max}]."
            )
        if not 0.0 <= self.target_prior <= 1.0:
            raise InvalidArgumentError(f"Target prior must lie in [0, 1], got {self.target_prior}.")
        if not 0.0 < self.p_f < 1.0:
            raise InvalidArgumentError(f"False-alarm target must lie in (0, 1), got {self.p_f}.")
        lo, hi = self.comm_area
        s_lo, s_hi = self.sens_area
        if lo < s_hi and s_lo < hi:
            logger.warning("Communication and sensing areas overlap.")

    @property
    def areas(self) -> RVec:
        """Return the beamformer input ``(phi_min, phi_max, theta_min, theta_max)``."""
        return np.array([*self.comm_area, *self.sens_area], dtype=np.float64)

    @property
    def bits_per_symbol(self) -> int:
        """Return ``log2 M``."""
        return int(np.log2(self.M))

    @classmethod
    def from_dict(cls, section: Optional[Mapping[str, Any]]) -> "ScenarioConfig":
        """Build a scenario from a config section with areas given in degrees."""
        section = dict(section or {})
        kwargs: Dict[str, Any] = {}
        known = {f.name for f in fields(cls)}
        for key, value in section.items():
            match key:
                case "comm_area_deg" | "sens_area_deg":
                    kwargs[key[: -len("_deg")]] = tuple(np.deg2rad(_interval(value)).tolist())
                case "snr_c_db" | "snr_s_db":
                    kwargs[key] = _interval(value)
                case _ if key in known:
                    kwargs[key] = value
                case _:
                    raise InvalidArgumentError(f"Unknown scenario field: {key}")
        return cls(**kwargs)


@dataclass
class FrameBatch:
    """One Monte-Carlo batch of ``B`` scenario windows padded to ``N`` snapshots.

    Noise draws are stored with unit variance; :attr:`comm_noise` and
    :attr:`sens_noise` scale them by each scenario's noise level, so baselines and
    networks can be evaluated on identical draws.
    """

    symbols: np.ndarray
    bits: np.ndarray
    phi: RVec
    theta: RVec
    target: np.ndarray
    alpha_c: CMat
    alpha_s: CMat
    noise_c: CMat
    noise_s: CMat
    n_win: np.ndarray
    sigma_nc2: RVec
    sigma_ns2: RVec
    mask: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        """Return the number of scenarios ``B``."""
        return len(self.n_win)

    @property
    def comm_noise(self) -> CMat:
        """Return the scaled communication noise ``n_c``."""
        return np.sqrt(self.sigma_nc2)[:, None] * self.noise_c

    @property
    def sens_noise(self) -> CMat:
        """Return the scaled sensing noise ``N_s``."""
        return np.sqrt(self.sigma_ns2)[:, None, None] * self.noise_s


def _fixed_or_uniform(
    generator: np.random.Generator, fixed: Optional[float], bounds: Tuple[float, float], n: int
) -> RVec:
    if fixed is not None:
        return np.full(n, float(fixed))
    return generator.uniform(bounds[0], bounds[1], size=n)


def generate_batch(
    cfg: ScenarioConfig,
    rng: RngStream,
    n_scenarios: int,
    n_win: Optional[int] = None,
    snr_s_db: Optional[float] = None,
    snr_c_db: Optional[float] = None,
    target: Optional[int] = None,
) -> FrameBatch:
    """Draw a batch of scenario windows.

    Args
    ----
    cfg : ScenarioConfig
        Scenario areas, variances and sampling ranges.
    rng : RngStream
        Stream to draw from; the batch is a pure function of it.
    n_scenarios : int
        Number of windows ``B``.
    n_win : int, optional
        Fix every window length; otherwise uniform on the configured range.
    snr_s_db, snr_c_db : float, optional
        Fix the sensing or communication SNR; otherwise uniform in dB.
    target : int, optional
        Fix the target flag; otherwise Bernoulli with the configured prior.

    Returns
    -------
    FrameBatch
        The padded batch.

    """
    if n_scenarios < 0:
        raise InvalidArgumentError(f"Batch size must be nonnegative, got {n_scenarios}.")
    gen = rng.generator
    if n_win is None:
        windows = gen.integers(cfg.n_win_min, cfg.n_win_max + 1, size=n_scenarios)
    else:
        if n_win < 1:
            raise InvalidArgumentError(f"Window length must be >= 1, got {n_win}.")
        windows = np.full(n_scenarios, int(n_win))
    n_max = int(windows.max()) if n_scenarios else (n_win or cfg.n_win_max)
    mask = np.arange(n_max)[None, :] < windows[:, None]

    theta = gen.uniform(*cfg.sens_area, size=n_scenarios)
    phi = gen.uniform(*cfg.comm_area, size=n_scenarios)
    if target is None:
        flags = (gen.random(n_scenarios) < cfg.target_prior).astype(np.int8)
    else:
        flags = np.full(n_scenarios, int(target), dtype=np.int8)
    snr_s = _fixed_or_uniform(gen, snr_s_db, cfg.snr_s_db, n_scenarios)
    snr_c = _fixed_or_uniform(gen, snr_c_db, cfg.snr_c_db, n_scenarios)

    symbols = gen.integers(0, cfg.M, size=(n_scenarios, n_max)) * mask
    alpha_c = sample_cnormal(rng, 0.0, cfg.sigma_c2, (n_scenarios, n_max)) * mask
    alpha_s = sample_cnormal(rng, 0.0, cfg.sigma_s2, (n_scenarios, n_max)) * mask
    noise_c = sample_cnormal(rng, 0.0, 1.0, (n_scenarios, n_max)) * mask
    noise_s = sample_cnormal(rng, 0.0, 1.0, (n_scenarios, cfg.K, n_max)) * mask[:, None, :]

    return FrameBatch(
        symbols=symbols,
        bits=bit_labels(cfg.M)[symbols],
        phi=phi,
        theta=theta,
        target=flags,
        alpha_c=alpha_c,
        alpha_s=alpha_s,
        noise_c=noise_c,
        noise_s=noise_s,
        n_win=windows,
        sigma_nc2=cfg.sigma_c2 * 10.0 ** (-snr_c / 10.0),
        sigma_ns2=cfg.sigma_s2 * 10.0 ** (-snr_s / 10.0),
        mask=mask,
    )


def modulate(points: CMat, batch: FrameBatch) -> CMat:
    """Map the batch's symbol indices onto the alphabet, zero on padding."""
    return points[batch.symbols] * batch.mask


def steering_vector(theta: float | RVec, K: int) -> CMat:
    """Return ``a(theta)`` with ``a_k = exp(j pi k sin theta)``, shape ``(..., K)``."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.exp(1j * np.pi * np.sin(theta)[..., None] * np.arange(K))


def transmit(x: CMat, v: CMat) -> CMat:
    """Return ``Y = v x^T`` for one window or a batch of windows."""
    x = np.asarray(x)
    v = np.asarray(v)
    return v[..., :, None] * x[..., None, :]


def transmit_backward(g_y: CMat, x: CMat, v: CMat) -> Tuple[CMat, CMat]:
    """Propagate ``dL/dY`` to the precoder (summed over the batch) and the symbols."""
    g_v = np.einsum("...kn,...n->...k", g_y, np.conj(x))
    g_x = np.einsum("...kn,...k->...n", g_y, np.conj(v))
    if g_v.ndim > 1 and np.ndim(v) == 1:
        g_v = g_v.reshape(-1, g_v.shape[-1]).sum(axis=0)
    return g_v, g_x


def comm_channel(
    y: CMat, phi: float | RVec, alpha_c: CMat, noise: CMat, v: CMat
) -> Tuple[CMat, CMat]:
    """Pass the transmit signal through the single-tap Rayleigh link.

    Returns the received samples ``z_c[n] = a(phi)^T Y[:, n] alpha_c[n] + n_c[n]``
    and the perfect channel state ``gamma[n] = (v^T a(phi)) alpha_c[n]``.
    """
    a = steering_vector(phi, y.shape[-2])
    z = np.einsum("...k,...kn->...n", a, y) * alpha_c + noise
    gain = np.einsum("...k,...k->...", a, np.broadcast_to(v, a.shape))
    return z, np.asarray(gain)[..., None] * alpha_c


def comm_channel_backward(
    g_z: CMat, g_gamma: CMat, phi: float | RVec, alpha_c: CMat, K: int
) -> Tuple[CMat, CMat]:
    """Return ``(dL/dY, dL/dv)`` for :func:`comm_channel`, ``dL/dv`` summed over the batch."""
    a_conj = np.conj(steering_vector(phi, K))
    g_y = a_conj[..., :, None] * (np.conj(alpha_c) * g_z)[..., None, :]
    g_gain = np.sum(np.conj(alpha_c) * g_gamma, axis=-1)
    g_v = g_gain[..., None] * a_conj
    if g_v.ndim > 1:
        g_v = g_v.reshape(-1, K).sum(axis=0)
    return g_y, g_v


def sensing_channel(
    y: CMat, theta: float | RVec, target: int | np.ndarray, alpha_s: CMat, noise: CMat
) -> CMat:
    """Return the monostatic echo ``Z_s = T a(theta) a(theta)^T Y diag(alpha_s) + N_s``."""
    a = steering_vector(theta, y.shape[-2])
    flag = np.asarray(target, dtype=np.float64)
    echo = np.einsum("...k,...kn->...n", a, y) * alpha_s
    return flag[..., None, None] * a[..., :, None] * echo[..., None, :] + noise


def sensing_channel_backward(
    g_z: CMat, theta: float | RVec, target: int | np.ndarray, alpha_s: CMat
) -> CMat:
    """Return ``dL/dY`` for :func:`sensing_channel`."""
    a_conj = np.conj(steering_vector(theta, g_z.shape[-2]))
    flag = np.asarray(target, dtype=np.float64)
    projected = np.einsum("...k,...kn->...n", a_conj, g_z) * np.conj(alpha_s)
    return flag[..., None, None] * a_conj[..., :, None] * projected[..., None, :]


def angle_grid(lo: float, hi: float, step: float = BEAM_GRID_STEP) -> RVec:
    """Return a uniform grid over ``[lo, hi]`` including both ends."""
    if step <= 0:
        raise InvalidArgumentError(f"Grid step must be positive, got {step}.")
    if hi < lo:
        raise InvalidArgumentError(f"Empty angular interval [{lo}, {hi}].")
    count = int(np.round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, count)


def beam_pattern(v: CMat, grid: RVec) -> RVec:
    """Return ``|v^T a(theta_g)|^2`` per grid angle; ``v`` may be ``(K,)`` or ``(K, U)``."""
    v = np.asarray(v)
    a = steering_vector(grid, v.shape[0])
    return np.abs(a @ v) ** 2


def area_power_fractions(
    v: CMat, cfg: ScenarioConfig, grid_step: float = BEAM_GRID_STEP
) -> Tuple[float, float, float]:
    """Split the radiated power into sensing, communication and remaining angles."""
    grid = angle_grid(-np.pi / 2, np.pi / 2, grid_step)
    power = beam_pattern(v, grid)
    if power.ndim > 1:
        power = power.sum(axis=-1)
    sens = (grid >= cfg.sens_area[0]) & (grid <= cfg.sens_area[1])
    comm = (grid >= cfg.comm_area[0]) & (grid <= cfg.comm_area[1]) & ~sens
    total = float(power.sum())
    frac_sens = float(power[sens].sum()) / total
    frac_comm = float(power[comm].sum()) / total
    return frac_sens, frac_comm, float(power[~(sens | comm)].sum()) / total


def avg_beam_gain(v: CMat, area: Tuple[float, float], grid_step: float = BEAM_GRID_STEP) -> float:
    """Return the mean of ``|v^T a(theta)|^2`` over the area grid."""
    return float(np.mean(beam_pattern(v, angle_grid(area[0], area[1], grid_step))))
