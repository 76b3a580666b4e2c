"""Multi-user downlink extension: one precoder column per UE, shared sensing.

Each UE receives the superposition of all streams and treats the other
streams as noise; its demapper sees the MMSE estimate computed with the full
effective channel row ``a(theta_ue)^T V`` as side information.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pendulum

from tap_jcas.airlink import (
    FrameBatch,
    ScenarioConfig,
    angle_grid,
    beam_pattern,
    generate_batch,
    steering_vector,
)
from tap_jcas.comm_rx import (
    demap_nn,
    demapper_features_backward,
    harden,
    mmse_equalize,
    mmse_equalize_backward,
)
from tap_jcas.constellation import Constellation, bit_labels, make_qam
from tap_jcas.neural import (
    Mlp,
    Tape,
    adam_init,
    adam_step,
    complex_to_pairs,
    mlp_backward,
    mlp_forward,
    mlp_from_dict,
    mlp_init,
    mlp_to_dict,
)
from tap_jcas.numerics import (
    CMat,
    ContractViolationError,
    InvalidArgumentError,
    RngStream,
    sample_cnormal,
)
from tap_jcas.objectives import (
    BatchLabels,
    LossParts,
    LossWeights,
    loss_alpha_fair,
    loss_comm_bce,
    loss_detect_bce,
    loss_total,
    metric_ber,
    metric_bmi,
)
from tap_jcas.streams.utils import HeadType
from tap_jcas.trainer import (
    STREAM_FINETUNE,
    STREAM_PRETRAIN,
    STREAM_SWEEP,
    TrainPlan,
    TrainReport,
    angle_loss_fn,
    limit,
    read_checkpoint,
    sensing_backward,
    sensing_forward,
    sensing_input_size,
    write_checkpoint,
)

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9


@dataclass(frozen=True)
class MimoScenario:
    """UE directions, fairness and sensing weight of a multi-user run."""

    ue_angles: Tuple[float, ...] = (float(np.deg2rad(50.0)), float(np.deg2rad(70.0)))
    alpha: float = 1.0
    w_s: float = 0.7
    order: int = 4
    ue_snr_offset_db: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not self.ue_angles:
            raise InvalidArgumentError("A multi-user scenario needs at least one UE.")
        if any(abs(a) >= np.pi / 2 for a in self.ue_angles):
            raise InvalidArgumentError("UE angles must lie in (-pi/2, pi/2).")
        if self.order not in (4, 16, 64):
            raise InvalidArgumentError(f"Per-UE QAM order must be 4, 16 or 64, got {self.order}.")
        if len(self.ue_angles) < 2:
            logger.warning("Multi-user scenario with a single UE.")
        if self.ue_snr_offset_db is not None and len(self.ue_snr_offset_db) != self.n_ue:
            raise InvalidArgumentError("Need one SNR offset per UE.")
        LossWeights(self.w_s, self.alpha)

    @property
    def n_ue(self) -> int:
        """Return the number of UEs."""
        return len(self.ue_angles)

    @property
    def offsets_db(self) -> np.ndarray:
        """Return the per-UE SNR offsets."""
        if self.ue_snr_offset_db is None:
            return np.zeros(self.n_ue)
        return np.asarray(self.ue_snr_offset_db, dtype=np.float64)

    @classmethod
    def from_dict(cls, section: Mapping[str, Any]) -> "MimoScenario":
        """Build a scenario from a config section with angles in degrees."""
        kwargs: Dict[str, Any] = {}
        if "ue_angles_deg" in section:
            kwargs["ue_angles"] = tuple(np.deg2rad(section["ue_angles_deg"]).tolist())
        for key in ("alpha", "w_s", "order"):
            if key in section:
                kwargs[key] = section[key]
        if "ue_snr_offset_db" in section:
            kwargs["ue_snr_offset_db"] = tuple(section["ue_snr_offset_db"])
        return cls(**kwargs)


@dataclass
class MimoBatch:
    """Shared sensing draws plus per-UE symbols, taps and noise, indexed ``[u, b, n]``."""

    sensing: FrameBatch
    symbols: np.ndarray
    bits: np.ndarray
    alpha_c: CMat
    noise_c: CMat
    sigma_nc2: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        """Return the snapshot mask ``(B, N)``."""
        return self.sensing.mask


def generate_mimo_batch(
    cfg: ScenarioConfig,
    scenario: MimoScenario,
    rng: RngStream,
    n_scenarios: int,
    snr_c_db: Optional[float] = None,
    **sensing: Any,
) -> MimoBatch:
    """Draw sensing windows and independent per-UE communication draws."""
    base = generate_batch(cfg, rng, n_scenarios, snr_c_db=snr_c_db, **sensing)
    gen = rng.generator
    shape = (scenario.n_ue,) + base.mask.shape
    symbols = gen.integers(0, scenario.order, size=shape) * base.mask
    alpha_c = sample_cnormal(rng, 0.0, cfg.sigma_c2, shape) * base.mask
    noise_c = sample_cnormal(rng, 0.0, 1.0, shape) * base.mask
    if snr_c_db is None:
        snr = gen.uniform(*cfg.snr_c_db, size=(scenario.n_ue, n_scenarios))
    else:
        snr = np.full((scenario.n_ue, n_scenarios), float(snr_c_db))
    snr = snr + scenario.offsets_db[:, None]
    return MimoBatch(
        sensing=base,
        symbols=symbols,
        bits=bit_labels(scenario.order)[symbols],
        alpha_c=alpha_c,
        noise_c=noise_c,
        sigma_nc2=cfg.sigma_c2 * 10.0 ** (-snr / 10.0),
    )


def mimo_transmit(v: CMat, x: CMat) -> CMat:
    """Return ``Y = V X`` for ``V`` of shape ``(K, U)`` and ``X`` of shape ``(..., U, N)``.

    The sum runs over an explicit UE axis, so a single UE reproduces the
    single-user outer product exactly.
    """
    v = np.asarray(v)
    x = np.asarray(x)
    return np.sum(v[:, :, None] * x[..., None, :, :], axis=-2)


def mimo_transmit_backward(g_y: CMat, v: CMat, x: CMat) -> Tuple[CMat, CMat]:
    """Return ``dL/dV`` (summed over the batch) and ``dL/dX``."""
    K, U, N = g_y.shape[-2], x.shape[-2], x.shape[-1]
    g_v = np.einsum("bkn,bun->ku", g_y.reshape(-1, K, N), np.conj(x).reshape(-1, U, N))
    g_x = np.einsum("...kn,ku->...un", g_y, np.conj(v))
    return g_v, g_x


def mimo_comm_channel(
    y: CMat, ue_angle: float, alpha: CMat, noise: CMat, v: CMat
) -> Tuple[CMat, CMat]:
    """Receive at one UE.

    Returns ``z[n] = a^T Y[:, n] alpha[n] + noise[n]`` and the effective channel
    ``gamma[..., u, n] = (a^T V)[u] alpha[n]`` for every stream ``u``.
    """
    a = steering_vector(ue_angle, y.shape[-2])
    z = np.einsum("k,...kn->...n", a, y) * alpha + noise
    row = a @ v
    return z, row[:, None] * alpha[..., None, :]


def mimo_comm_channel_backward(
    g_z: CMat, g_gamma: CMat, ue_angle: float, alpha: CMat, K: int
) -> Tuple[CMat, CMat]:
    """Return ``(dL/dY, dL/dV)`` for :func:`mimo_comm_channel`."""
    a_conj = np.conj(steering_vector(ue_angle, K))
    g_y = a_conj[:, None] * (np.conj(alpha) * g_z)[..., None, :]
    U, N = g_gamma.shape[-2:]
    g_row = np.einsum(
        "bun,bn->u", g_gamma.reshape(-1, U, N), np.conj(alpha).reshape(-1, N)
    )
    return g_y, a_conj[:, None] * g_row[None, :]


def mimo_beamformer_head(net: Mlp, inputs: np.ndarray, n_ue: int) -> Tuple[CMat, Tape]:
    """Return the Frobenius-normalized ``(K, U)`` precoding matrix and its tape."""
    out, tape = mlp_forward(net, np.asarray(inputs, dtype=np.float64).reshape(1, -1))
    pairs = out.reshape(n_ue, -1, 2)
    return (pairs[..., 0] + 1j * pairs[..., 1]).T, tape


def _interference_equalize(
    z: CMat, gamma: CMat, ue: int, sigma_nc2: np.ndarray
) -> Tuple[CMat, np.ndarray, np.ndarray]:
    others = np.delete(np.arange(gamma.shape[-2]), ue)
    noise = sigma_nc2[:, None] + np.sum(np.abs(gamma[..., others, :]) ** 2, axis=-2)
    x_eq, snr = mmse_equalize(z, gamma[..., ue, :], noise)
    return x_eq, snr, noise


@dataclass
class MimoNetworks:
    """Precoder, per-UE demappers and the shared sensing networks."""

    precoder: Mlp
    demappers: List[Mlp]
    detector: Mlp
    angle: Mlp
    scenario: MimoScenario
    sens_area: Tuple[float, float]
    thresholds: Dict[int, float] = field(default_factory=dict)

    @property
    def inputs(self) -> np.ndarray:
        """Return ``(theta_min, theta_max, theta_ue1, ...)``."""
        return np.array([*self.sens_area, *self.scenario.ue_angles])

    def constellation(self) -> Constellation:
        """Return the per-UE alphabet (QPSK by default)."""
        return make_qam(self.scenario.order)

    def precoding_matrix(self) -> CMat:
        """Return the current precoding matrix."""
        v, _ = mimo_beamformer_head(self.precoder, self.inputs, self.scenario.n_ue)
        return v


def build_mimo_networks(cfg: ScenarioConfig, scenario: MimoScenario, seed: int) -> MimoNetworks:
    """Initialize the multi-user networks."""
    K, U = cfg.K, scenario.n_ue
    c = int(np.log2(scenario.order))
    features = sensing_input_size(K)
    return MimoNetworks(
        precoder=mlp_init(
            2 + U,
            (K * U, K * U, 2 * K * U),
            2 * K * U,
            RngStream(seed, 11),
            HeadType.POWER_NORMALIZED,
        ),
        demappers=[
            mlp_init(3, (10 * scenario.order,) * 4, c, RngStream(seed, 20 + u), HeadType.LINEAR)
            for u in range(U)
        ],
        detector=mlp_init(
            features, (2 * K, 2 * K, K), 1, RngStream(seed, 12), HeadType.SIGMOID_OFFSET
        ),
        angle=mlp_init(
            features, (8 * K, 4 * K, 4 * K, K), 1, RngStream(seed, 13), HeadType.SCALED_TANH
        ),
        scenario=scenario,
        sens_area=cfg.sens_area,
    )


def mimo_gradients(
    nets: MimoNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    batch: MimoBatch,
    weights: LossWeights,
) -> Tuple[LossParts, np.ndarray, Dict[str, Any]]:
    """Return the losses, the per-UE rates and the gradients of every network; no update."""
    U, K = nets.scenario.n_ue, cfg.K
    c = int(np.log2(nets.scenario.order))
    v, tape_v = mimo_beamformer_head(nets.precoder, nets.inputs, U)
    power = float(np.sum(np.abs(v) ** 2))
    if abs(power - 1.0) > NORM_TOL:
        raise ContractViolationError(f"Precoding matrix power drifted to {power}.")

    points = nets.constellation().points
    x = np.moveaxis(points[batch.symbols] * batch.mask, 0, -2)
    y = mimo_transmit(v, x)

    sens = batch.sensing
    sp = sensing_forward(nets.detector, nets.angle, sens, y)
    labels = BatchLabels.from_batch(sens)
    l_detect = loss_detect_bce(sp.detection.p_t, sens.target)
    l_angle = angle_loss_fn(plan.angle_loss)(sp.theta_hat, labels)

    passes, bce, rates = [], [], np.zeros(U)
    for u in range(U):
        noise = np.sqrt(batch.sigma_nc2[u])[:, None] * batch.noise_c[u]
        z, gamma = mimo_comm_channel(y, nets.scenario.ue_angles[u], batch.alpha_c[u], noise, v)
        x_eq, snr, eff = _interference_equalize(z, gamma, u, batch.sigma_nc2[u])
        llrs, tape = demap_nn(nets.demappers[u], x_eq, snr)
        term = loss_comm_bce(llrs.reshape(batch.bits[u].shape), batch.bits[u], batch.mask)
        rates[u] = c * (1.0 - term.value)
        passes.append((z, gamma, eff, tape))
        bce.append(term)
    fair = loss_alpha_fair(rates, nets.scenario.alpha)
    parts = LossParts(fair.value, l_detect.value, l_angle.value)

    det_grads, angle_grads, g_y = sensing_backward(
        sp,
        nets.detector,
        nets.angle,
        sens,
        weights.w_s * l_detect.grad,
        weights.w_s * l_angle.grad,
    )
    g_v = np.zeros_like(v)
    grads: Dict[str, Any] = {"detector": det_grads, "angle": angle_grads}
    for u, ((z, gamma, eff, tape), term) in enumerate(zip(passes, bce)):
        g_llr = weights.comm * fair.grad[u] * (-c) * term.grad
        grads[f"demapper{u}"], g_in = mlp_backward(
            nets.demappers[u], tape, g_llr.reshape(-1, c)
        )
        g_x, g_self_feat, g_eff_feat = demapper_features_backward(g_in, gamma[..., u, :], eff)
        g_z, g_self, g_noise = mmse_equalize_backward(g_x, z, gamma[..., u, :], eff)
        g_gamma = 2.0 * (g_noise + g_eff_feat)[..., None, :] * gamma
        g_gamma[..., u, :] = g_self + g_self_feat
        g_y_u, g_v_u = mimo_comm_channel_backward(
            g_z, g_gamma, nets.scenario.ue_angles[u], batch.alpha_c[u], K
        )
        g_y = g_y + g_y_u
        g_v = g_v + g_v_u
    g_v_tx, _ = mimo_transmit_backward(g_y, v, x)
    g_v = g_v + g_v_tx
    grads["precoder"], _ = mlp_backward(
        nets.precoder, tape_v, complex_to_pairs(g_v.T).reshape(1, -1)
    )
    return parts, rates, grads


def _mimo_step(
    nets: MimoNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    batch: MimoBatch,
    weights: LossWeights,
    optimizers: Dict[str, Any],
) -> Tuple[LossParts, np.ndarray]:
    parts, rates, grads = mimo_gradients(nets, cfg, plan, batch, weights)
    named = _named(nets)
    for name, state in optimizers.items():
        adam_step(named[name], grads[name], state)
    return parts, rates


def _named(nets: MimoNetworks) -> Dict[str, Mlp]:
    named = {"precoder": nets.precoder, "detector": nets.detector, "angle": nets.angle}
    named.update({f"demapper{u}": net for u, net in enumerate(nets.demappers)})
    return named


def _mimo_phase(
    phase: str,
    nets: MimoNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    weights: LossWeights,
    live: Sequence[str],
    steps: int,
    stream_base: int,
) -> TrainReport:
    start = pendulum.now("UTC")
    report = TrainReport(seed=plan.seed)
    named = _named(nets)
    optimizers = {name: adam_init(named[name], plan.learning_rate) for name in live}
    windows = plan.windows_per_batch(cfg)
    logger.info(f"mimo {phase}: {steps} steps of {windows} windows")
    for step in range(steps):
        rng = RngStream(plan.seed, stream_base + step)
        batch = generate_mimo_batch(cfg, nets.scenario, rng, windows)
        parts, rates = _mimo_step(nets, cfg, plan, batch, weights, optimizers)
        row: Dict[str, Any] = {
            "step": step,
            "phase": f"mimo_{phase}",
            "l_comm": parts.comm,
            "l_detect": parts.detect,
            "l_angle": parts.angle,
            "l_total": loss_total(parts, weights).value,
        }
        row.update({f"rate_ue{u + 1}": float(r) for u, r in enumerate(rates)})
        report.losses.append(row)
        if plan.log_every and step % plan.log_every == 0:
            logger.info(f"mimo {phase} step {step}: rates={np.round(rates, 3).tolist()}")
    report.elapsed_seconds = (pendulum.now("UTC") - start).total_seconds()
    return report


def mimo_train(
    plan: TrainPlan,
    scenario: MimoScenario,
    cfg: ScenarioConfig,
    nets: Optional[MimoNetworks] = None,
) -> Tuple[MimoNetworks, TrainReport]:
    """Train the multi-user system: sensing pre-training, alpha-fair fine-tuning, limiting."""
    cfg = replace(cfg, M=scenario.order)
    nets = nets or build_mimo_networks(cfg, scenario, plan.seed)
    sensing_only = ("precoder", "detector", "angle")
    report = _mimo_phase(
        "pretrain",
        nets,
        cfg,
        plan,
        LossWeights(1.0, scenario.alpha),
        sensing_only,
        plan.steps(plan.pretrain_symbols),
        STREAM_PRETRAIN,
    )
    weights = LossWeights(scenario.w_s, scenario.alpha)
    live = ["precoder"]
    if weights.comm > 0:
        live += [f"demapper{u}" for u in range(scenario.n_ue)]
    if weights.w_s > 0:
        live += ["detector", "angle"]
    report.extend(
        _mimo_phase(
            "finetune",
            nets,
            cfg,
            plan,
            weights,
            live,
            plan.steps(plan.finetune_symbols),
            STREAM_FINETUNE,
        )
    )
    report.extend(limit(plan, nets, cfg))
    return nets, report


def mimo_ber_table(
    nets: MimoNetworks, cfg: ScenarioConfig, grid: Sequence[float], trials: int, seed: int
) -> List[Dict[str, Any]]:
    """Return per-UE ``(snr_c_db, ue, ber, bmi)`` rows on shared draws."""
    if trials < 0:
        raise InvalidArgumentError(f"Trials must be nonnegative, got {trials}.")
    if trials == 0:
        return []
    cfg = replace(cfg, M=nets.scenario.order)
    U = nets.scenario.n_ue
    c = int(np.log2(nets.scenario.order))
    v = nets.precoding_matrix()
    points = nets.constellation().points
    rows = []
    for index, snr in enumerate(grid):
        rng = RngStream(seed, STREAM_SWEEP + index)
        batch = generate_mimo_batch(cfg, nets.scenario, rng, trials, snr_c_db=float(snr))
        x = np.moveaxis(points[batch.symbols] * batch.mask, 0, -2)
        y = mimo_transmit(v, x)
        for u in range(U):
            noise = np.sqrt(batch.sigma_nc2[u])[:, None] * batch.noise_c[u]
            z, gamma = mimo_comm_channel(y, nets.scenario.ue_angles[u], batch.alpha_c[u], noise, v)
            x_eq, snr_post, _ = _interference_equalize(z, gamma, u, batch.sigma_nc2[u])
            llrs, _ = demap_nn(nets.demappers[u], x_eq, snr_post)
            llrs = llrs.reshape(batch.bits[u].shape)
            rows.append(
                {
                    "snr_c_db": float(snr),
                    "ue": u + 1,
                    "ber": metric_ber(harden(llrs), batch.bits[u], batch.mask),
                    "bmi": metric_bmi(llrs, batch.bits[u], 2**c, batch.mask),
                }
            )
    return rows


def mimo_beam_table(nets: MimoNetworks) -> List[Dict[str, Any]]:
    """Return per-UE beam patterns ``(angle_deg, p_ue1, ..., p_sum)`` on the 0.25 degree grid."""
    v = nets.precoding_matrix()
    grid = angle_grid(-np.pi / 2, np.pi / 2)
    patterns = beam_pattern(v, grid)
    rows = []
    for angle, powers in zip(np.rad2deg(grid), patterns):
        row: Dict[str, Any] = {"angle_deg": float(angle)}
        row.update({f"p_ue{u + 1}": float(p) for u, p in enumerate(powers)})
        row["p_sum"] = float(powers.sum())
        rows.append(row)
    return rows


def mimo_sensing_check(nets: MimoNetworks, cfg: ScenarioConfig, trials: int, seed: int) -> float:
    """Return the detection rate on target-present windows at the configured SNR range."""
    cfg = replace(cfg, M=nets.scenario.order)
    rng = RngStream(seed, STREAM_SWEEP)
    batch = generate_mimo_batch(cfg, nets.scenario, rng, trials, target=1)
    x = np.moveaxis(nets.constellation().points[batch.symbols] * batch.mask, 0, -2)
    y = mimo_transmit(nets.precoding_matrix(), x)
    sp = sensing_forward(nets.detector, nets.angle, batch.sensing, y, nets.thresholds)
    return float(np.mean(sp.detection.decision))


def save_mimo_checkpoint(nets: MimoNetworks, path: str, partial: bool = False) -> str:
    """Serialize the multi-user networks; returns the file hash."""
    payload = {
        "partial": partial,
        "ue_angles": list(nets.scenario.ue_angles),
        "alpha": nets.scenario.alpha,
        "w_s": nets.scenario.w_s,
        "order": nets.scenario.order,
        "ue_snr_offset_db": (
            list(nets.scenario.ue_snr_offset_db) if nets.scenario.ue_snr_offset_db else None
        ),
        "sens_area": list(nets.sens_area),
        "thresholds": {str(n): tau for n, tau in sorted(nets.thresholds.items())},
        "networks": {name: mlp_to_dict(net) for name, net in _named(nets).items()},
    }
    return write_checkpoint(payload, path, kind="mimo")


def load_mimo_checkpoint(path: str) -> MimoNetworks:
    """Load networks written by :func:`save_mimo_checkpoint`."""
    document = read_checkpoint(path, kind="mimo")
    scenario = MimoScenario(
        ue_angles=tuple(document["ue_angles"]),
        alpha=document["alpha"],
        w_s=document["w_s"],
        order=document["order"],
        ue_snr_offset_db=(
            tuple(document["ue_snr_offset_db"]) if document.get("ue_snr_offset_db") else None
        ),
    )
    nets = {name: mlp_from_dict(data) for name, data in document["networks"].items()}
    return MimoNetworks(
        precoder=nets["precoder"],
        demappers=[nets[f"demapper{u}"] for u in range(scenario.n_ue)],
        detector=nets["detector"],
        angle=nets["angle"],
        scenario=scenario,
        sens_area=(document["sens_area"][0], document["sens_area"][1]),
        thresholds={int(n): float(t) for n, t in document["thresholds"].items()},
    )
