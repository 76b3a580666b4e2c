"""Three-phase training (pre-training, fine-tuning, limiting) and evaluation sweeps.

Random draws are keyed by ``(seed, stream id)``: every training step, limiting
chunk and sweep point has its own stream, so reruns are bit-identical and a
sweep point does not depend on the points evaluated before it.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import pendulum

from tap_jcas.airlink import (
    FrameBatch,
    ScenarioConfig,
    avg_beam_gain,
    comm_channel,
    comm_channel_backward,
    generate_batch,
    modulate,
    sensing_channel,
    sensing_channel_backward,
    transmit,
    transmit_backward,
)
from tap_jcas.baselines import CrbParams, crb_full, esprit_aoa, np_detector
from tap_jcas.comm_rx import (
    demap_mld,
    demap_nn,
    demapper_features_backward,
    harden,
    mmse_equalize,
    mmse_equalize_backward,
)
from tap_jcas.constellation import (
    ApskSpec,
    Constellation,
    kurtosis,
    make_apsk,
    make_psk,
    make_qam,
)
from tap_jcas.neural import (
    AdamState,
    Mlp,
    Tape,
    adam_init,
    adam_step,
    beamformer_head,
    complex_to_pairs,
    mlp_backward,
    mlp_from_dict,
    mlp_init,
    mlp_to_dict,
    modulator_head,
)
from tap_jcas.numerics import CMat, InvalidArgumentError, RngStream
from tap_jcas.objectives import (
    BatchLabels,
    LossParts,
    LossWeights,
    bce_floor,
    ergodic_capacity,
    loss_angle_crb_normalized,
    loss_angle_unmodified,
    loss_comm_bce,
    loss_detect_bce,
    loss_total,
    metric_ber,
    metric_bmi,
    metric_sensing,
)
from tap_jcas.sensing_rx import (
    DetectionResult,
    calibrate_threshold,
    correlate,
    correlate_backward,
    detect,
    estimate_aoa,
    sensing_features,
    sensing_features_backward,
)
from tap_jcas.streams.utils import AngleLoss, HeadType, ModulationMode, SweepAxis

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_OUTPUT_DIR = "./output"

STREAM_PRETRAIN = 1_000_000
STREAM_FINETUNE = 2_000_000
STREAM_LIMIT = 3_000_000
STREAM_SWEEP = 4_000_000
STREAM_HELDOUT = 5_000_000

EVAL_CHUNK = 1_000


class CheckpointVersionError(ValueError):
    """Raised when a checkpoint was written by an incompatible format version."""

    def __init__(self, found: Any, expected: int = CHECKPOINT_VERSION) -> None:
        super().__init__(f"Checkpoint version {found} is not supported (expected {expected}).")
        self.found = found
        self.expected = expected


@dataclass
class TrainPlan:
    """Phase budgets and optimizer settings.

    Budgets are stated at full scale and divided by ``budget_divisor``; the
    default divisor of 25 gives 10^6 pre-training and 2*10^6 fine-tuning symbols.
    """

    pretrain_symbols: int = 25_000_000
    finetune_symbols: int = 50_000_000
    limit_windows: int = 10_000
    budget_divisor: int = 25
    batch_size: int = 10_000
    learning_rate: float = 1e-4
    w_s: float = 0.5
    angle_loss: AngleLoss = AngleLoss.MODIFIED
    seed: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        if isinstance(self.angle_loss, str):
            self.angle_loss = AngleLoss(self.angle_loss)
        if min(self.pretrain_symbols, self.finetune_symbols, self.limit_windows) < 0:
            raise InvalidArgumentError("Phase budgets must be nonnegative.")
        if self.batch_size < 1 or self.budget_divisor < 1:
            raise InvalidArgumentError("Batch size and budget divisor must be >= 1.")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"Learning rate must be positive, got {self.learning_rate}.")
        LossWeights(self.w_s)

    def steps(self, symbols: int) -> int:
        """Return the number of batches for a full-scale symbol budget."""
        return math.ceil((symbols // self.budget_divisor) / self.batch_size)

    def windows_per_batch(self, cfg: ScenarioConfig) -> int:
        """Return the number of windows whose mean symbol count fills one batch."""
        mean_window = 0.5 * (cfg.n_win_min + cfg.n_win_max)
        return max(1, int(round(self.batch_size / mean_window)))

    @classmethod
    def from_dict(cls, section: Optional[Mapping[str, Any]], seed: int) -> "TrainPlan":
        """Build a plan from a config section."""
        section = dict(section or {})
        known = {f.name for f in fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise InvalidArgumentError(f"Unknown plan field(s): {sorted(unknown)}")
        section.setdefault("seed", seed)
        return cls(**section)


@dataclass
class JcasNetworks:
    """The trainable transceiver and its calibrated detection thresholds."""

    beamformer: Mlp
    detector: Mlp
    angle: Mlp
    demapper: Mlp
    modulator: Optional[Mlp] = None
    mode: ModulationMode = ModulationMode.QAM
    order: int = 16
    apsk_inner_radius: Optional[float] = None
    thresholds: Dict[int, float] = field(default_factory=dict)
    w_s: Optional[float] = None

    def fixed_constellation(self) -> Constellation:
        """Return the classical alphabet; trained mode falls back to QAM."""
        match self.mode:
            case ModulationMode.PSK:
                return make_psk(self.order)
            case ModulationMode.APSK:
                if self.apsk_inner_radius is None:
                    raise InvalidArgumentError("APSK mode needs an inner radius.")
                return make_apsk(ApskSpec(self.apsk_inner_radius, self.order))
            case _:
                return make_qam(self.order)

    def constellation(self) -> Constellation:
        """Return the alphabet the transmitter currently uses."""
        if self.mode is ModulationMode.TRAINED and self.modulator is not None:
            points, _ = modulator_head(self.modulator)
            return Constellation(points, name="trained")
        return self.fixed_constellation()

    def named(self) -> Dict[str, Mlp]:
        """Return the networks by name."""
        nets = {
            "beamformer": self.beamformer,
            "detector": self.detector,
            "angle": self.angle,
            "demapper": self.demapper,
        }
        if self.modulator is not None:
            nets["modulator"] = self.modulator
        return nets

    def fingerprints(self) -> Dict[str, str]:
        """Return a parameter hash per network."""
        return {name: net.fingerprint() for name, net in self.named().items()}


def sensing_input_size(K: int) -> int:
    """Return the ``2K^2 + 2`` width of the sensing network input."""
    return 2 * K * K + 2


def build_networks(
    cfg: ScenarioConfig,
    mode: ModulationMode = ModulationMode.QAM,
    seed: int = 0,
    apsk_inner_radius: Optional[float] = None,
) -> JcasNetworks:
    """Initialize all networks with the reference layer sizes."""
    K, M, c = cfg.K, cfg.M, cfg.bits_per_symbol
    features = sensing_input_size(K)
    return JcasNetworks(
        beamformer=mlp_init(
            4, (K, K, 2 * K), 2 * K, RngStream(seed, 1), HeadType.POWER_NORMALIZED
        ),
        detector=mlp_init(
            features, (2 * K, 2 * K, K), 1, RngStream(seed, 2), HeadType.SIGMOID_OFFSET
        ),
        angle=mlp_init(
            features, (8 * K, 4 * K, 4 * K, K), 1, RngStream(seed, 3), HeadType.SCALED_TANH
        ),
        demapper=mlp_init(3, (10 * M,) * 4, c, RngStream(seed, 4), HeadType.LINEAR),
        modulator=(
            mlp_init(M, (8 * M,) * 3, 2, RngStream(seed, 5), HeadType.POWER_NORMALIZED)
            if mode is ModulationMode.TRAINED
            else None
        ),
        mode=mode,
        order=M,
        apsk_inner_radius=apsk_inner_radius,
    )


def write_checkpoint(payload: Dict[str, Any], path: str, kind: str) -> str:
    """Write a versioned JSON checkpoint and return its SHA-256."""
    document = {"version": CHECKPOINT_VERSION, "kind": kind, **payload}
    text = json.dumps(document, sort_keys=True)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w") as handle:
        handle.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_checkpoint(path: str, kind: str) -> Dict[str, Any]:
    """Read a checkpoint, refusing other versions and kinds."""
    with open(path) as handle:
        document = json.load(handle)
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(document.get("version"))
    if document.get("kind") != kind:
        raise InvalidArgumentError(f"{path} holds a '{document.get('kind')}' checkpoint.")
    if document.get("partial"):
        logger.warning(f"Checkpoint {path} was written by an interrupted run.")
    return document


def save_checkpoint(nets: JcasNetworks, path: str, partial: bool = False) -> str:
    """Serialize the networks and thresholds; returns the file hash."""
    payload = {
        "mode": nets.mode.value,
        "order": nets.order,
        "apsk_inner_radius": nets.apsk_inner_radius,
        "w_s": nets.w_s,
        "partial": partial,
        "thresholds": {str(n): tau for n, tau in sorted(nets.thresholds.items())},
        "networks": {name: mlp_to_dict(net) for name, net in nets.named().items()},
    }
    return write_checkpoint(payload, path, kind="jcas")


def load_checkpoint(path: str) -> JcasNetworks:
    """Load networks written by :func:`save_checkpoint`."""
    document = read_checkpoint(path, kind="jcas")
    nets = {name: mlp_from_dict(data) for name, data in document["networks"].items()}
    return JcasNetworks(
        beamformer=nets["beamformer"],
        detector=nets["detector"],
        angle=nets["angle"],
        demapper=nets["demapper"],
        modulator=nets.get("modulator"),
        mode=ModulationMode(document["mode"]),
        order=int(document["order"]),
        apsk_inner_radius=document.get("apsk_inner_radius"),
        thresholds={int(n): float(tau) for n, tau in document["thresholds"].items()},
        w_s=document.get("w_s"),
    )


@dataclass
class SensingPass:
    """Forward intermediates of the sensing receiver."""

    z_s: CMat
    features: np.ndarray
    detection: DetectionResult
    theta_hat: np.ndarray
    angle_tape: Tape


def sensing_forward(
    detector: Mlp,
    angle: Mlp,
    batch: FrameBatch,
    y: CMat,
    thresholds: Optional[Mapping[int, float]] = None,
) -> SensingPass:
    """Illuminate, correlate and run both sensing networks on a batch."""
    z_s = sensing_channel(y, batch.theta, batch.target, batch.alpha_s, batch.sens_noise)
    features = sensing_features(correlate(z_s, batch.n_win), batch.n_win, batch.sigma_ns2)
    detection = detect(detector, features, thresholds)
    theta_hat, angle_tape = estimate_aoa(angle, features)
    return SensingPass(z_s, features, detection, theta_hat, angle_tape)


def sensing_backward(
    sp: SensingPass,
    detector: Mlp,
    angle: Mlp,
    batch: FrameBatch,
    g_p: np.ndarray,
    g_theta: np.ndarray,
) -> Tuple[List[np.ndarray], List[np.ndarray], CMat]:
    """Return detector and angle gradients and ``dL/dY`` through the echo."""
    assert sp.detection.tape is not None
    det_grads, g_feat = mlp_backward(detector, sp.detection.tape, g_p[:, None])
    angle_grads, g_feat_a = mlp_backward(angle, sp.angle_tape, g_theta[:, None])
    K = sp.z_s.shape[-2]
    g_corr = sensing_features_backward(g_feat + g_feat_a, K, batch.sigma_ns2)
    g_z = correlate_backward(g_corr, sp.z_s, batch.n_win)
    g_y = sensing_channel_backward(g_z, batch.theta, batch.target, batch.alpha_s)
    return det_grads, angle_grads, g_y


@dataclass
class CommPass:
    """Forward intermediates of the communication receiver."""

    z_c: CMat
    gamma: CMat
    x_eq: CMat
    snr_post: np.ndarray
    llrs: np.ndarray
    tape: Tape


def comm_forward(demapper: Mlp, batch: FrameBatch, y: CMat, v: CMat) -> CommPass:
    """Pass the signal through the Rayleigh link, equalize and demap."""
    z_c, gamma = comm_channel(y, batch.phi, batch.alpha_c, batch.comm_noise, v)
    x_eq, snr_post = mmse_equalize(z_c, gamma, batch.sigma_nc2[:, None])
    llrs, tape = demap_nn(demapper, x_eq, snr_post)
    return CommPass(z_c, gamma, x_eq, snr_post, llrs.reshape(batch.bits.shape), tape)


def comm_backward(
    cp: CommPass, demapper: Mlp, batch: FrameBatch, g_llr: np.ndarray, K: int
) -> Tuple[List[np.ndarray], CMat, CMat]:
    """Return demapper gradients, ``dL/dY`` and the CSI path's ``dL/dv``."""
    grads, g_in = mlp_backward(demapper, cp.tape, g_llr.reshape(-1, g_llr.shape[-1]))
    sigma = batch.sigma_nc2[:, None]
    g_x, g_gamma_feat, _ = demapper_features_backward(g_in, cp.gamma, sigma)
    g_z, g_gamma, _ = mmse_equalize_backward(g_x, cp.z_c, cp.gamma, sigma)
    g_y, g_v = comm_channel_backward(g_z, g_gamma + g_gamma_feat, batch.phi, batch.alpha_c, K)
    return grads, g_y, g_v


def scatter_symbol_grads(g_x: CMat, batch: FrameBatch, order: int) -> CMat:
    """Accumulate per-snapshot symbol gradients onto the alphabet points."""
    g_points = np.zeros(order, dtype=np.complex128)
    np.add.at(g_points, batch.symbols[batch.mask], g_x[batch.mask])
    return g_points


def angle_loss_fn(kind: AngleLoss) -> Callable:
    """Return the angle loss for the plan's loss design."""
    match kind:
        case AngleLoss.MODIFIED:
            return loss_angle_crb_normalized
        case AngleLoss.UNMODIFIED:
            return loss_angle_unmodified
        case _:
            raise InvalidArgumentError(f"Unknown angle loss: {kind}")


@dataclass
class TrainReport:
    """Loss traces and final state of a training run."""

    seed: int
    losses: List[Dict[str, Any]] = field(default_factory=list)
    thresholds: Dict[int, float] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    checkpoint: Optional[str] = None
    elapsed_seconds: float = field(default=0.0, compare=False)

    def extend(self, other: "TrainReport") -> "TrainReport":
        """Append another phase's report."""
        self.losses.extend(other.losses)
        self.thresholds.update(other.thresholds)
        self.metrics.update(other.metrics)
        self.elapsed_seconds += other.elapsed_seconds
        return self


def joint_gradients(
    nets: JcasNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    batch: FrameBatch,
    weights: LossWeights,
    use_trained_alphabet: bool,
) -> Tuple[LossParts, Dict[str, List[np.ndarray]]]:
    """Return the component losses and the parameter gradients of the weighted loss.

    Gradients cover every network on the forward path; the modulator only
    when ``use_trained_alphabet`` is set. Nothing is updated.
    """
    v, tape_v = beamformer_head(nets.beamformer, cfg.areas)
    if use_trained_alphabet:
        assert nets.modulator is not None
        points, tape_m = modulator_head(nets.modulator)
    else:
        points, tape_m = nets.fixed_constellation().points, None
    x = modulate(points, batch)
    y = transmit(x, v)

    labels = BatchLabels.from_batch(batch)
    sp = sensing_forward(nets.detector, nets.angle, batch, y)
    cp = comm_forward(nets.demapper, batch, y, v)
    l_comm = loss_comm_bce(cp.llrs, batch.bits, batch.mask)
    l_detect = loss_detect_bce(sp.detection.p_t, batch.target)
    l_angle = angle_loss_fn(plan.angle_loss)(sp.theta_hat, labels)
    parts = LossParts(l_comm.value, l_detect.value, l_angle.value)

    det_grads, angle_grads, g_y = sensing_backward(
        sp,
        nets.detector,
        nets.angle,
        batch,
        weights.w_s * l_detect.grad,
        weights.w_s * l_angle.grad,
    )
    dem_grads, g_y_comm, g_v = comm_backward(
        cp, nets.demapper, batch, weights.comm * l_comm.grad, cfg.K
    )
    g_v_tx, g_x = transmit_backward(g_y + g_y_comm, x, v)
    g_v = g_v + g_v_tx

    grads = {"detector": det_grads, "angle": angle_grads, "demapper": dem_grads}
    grads["beamformer"], _ = mlp_backward(
        nets.beamformer, tape_v, complex_to_pairs(g_v).reshape(1, -1)
    )
    if tape_m is not None:
        assert nets.modulator is not None
        g_points = scatter_symbol_grads(g_x, batch, cfg.M)
        grads["modulator"], _ = mlp_backward(nets.modulator, tape_m, complex_to_pairs(g_points))
    return parts, grads


def _train_step(
    nets: JcasNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    batch: FrameBatch,
    weights: LossWeights,
    optimizers: Dict[str, AdamState],
    use_trained_alphabet: bool,
) -> LossParts:
    """Run one forward/backward pass and update the networks in ``optimizers``."""
    parts, grads = joint_gradients(nets, cfg, plan, batch, weights, use_trained_alphabet)
    for name, state in optimizers.items():
        adam_step(nets.named()[name], grads[name], state)
    return parts


def _run_phase(
    phase: str,
    nets: JcasNetworks,
    cfg: ScenarioConfig,
    plan: TrainPlan,
    weights: LossWeights,
    live: Sequence[str],
    steps: int,
    stream_base: int,
    use_trained_alphabet: bool,
) -> TrainReport:
    start = pendulum.now("UTC")
    report = TrainReport(seed=plan.seed)
    optimizers = {name: adam_init(nets.named()[name], plan.learning_rate) for name in live}
    windows = plan.windows_per_batch(cfg)
    logger.info(f"{phase}: {steps} steps of {windows} windows, updating {sorted(live)}")
    for step in range(steps):
        batch = generate_batch(cfg, RngStream(plan.seed, stream_base + step), windows)
        parts = _train_step(nets, cfg, plan, batch, weights, optimizers, use_trained_alphabet)
        total = loss_total(parts, weights).value
        report.losses.append(
            {
                "step": step,
                "phase": phase,
                "l_comm": parts.comm,
                "l_detect": parts.detect,
                "l_angle": parts.angle,
                "l_total": total,
            }
        )
        if plan.log_every and step % plan.log_every == 0:
            logger.info(
                f"{phase} step {step}: L_comm={parts.comm:.4f} L_detect={parts.detect:.4f} "
                f"L_angle={parts.angle:.4f} L={total:.4f}"
            )
    report.elapsed_seconds = (pendulum.now("UTC") - start).total_seconds()
    logger.info(f"{phase} finished in {report.elapsed_seconds:.1f}s")
    return report


def pretrain(plan: TrainPlan, nets: JcasNetworks, cfg: ScenarioConfig) -> TrainReport:
    """Train detector, angle estimator and beamformer on the sensing losses alone.

    The demapper and modulator are not updated; a trained modulator is replaced
    by QAM for this phase.
    """
    weights = LossWeights(w_s=1.0)
    live = ("beamformer", "detector", "angle")
    steps = plan.steps(plan.pretrain_symbols)
    return _run_phase(
        "pretrain", nets, cfg, plan, weights, live, steps, STREAM_PRETRAIN, False
    )


def finetune(plan: TrainPlan, nets: JcasNetworks, cfg: ScenarioConfig) -> TrainReport:
    """Train every network with the weighted joint loss.

    Networks that only appear in a zero-weighted term are left untouched.
    """
    weights = LossWeights(w_s=plan.w_s)
    trained = nets.mode is ModulationMode.TRAINED and nets.modulator is not None
    live = ["beamformer"]
    if weights.comm > 0:
        live.append("demapper")
    if weights.w_s > 0:
        live += ["detector", "angle"]
    if trained:
        live.append("modulator")
    steps = plan.steps(plan.finetune_symbols)
    report = _run_phase(
        "finetune", nets, cfg, plan, weights, live, steps, STREAM_FINETUNE, trained
    )
    nets.w_s = plan.w_s
    return report


def noise_only_scores(
    detector: Mlp, cfg: ScenarioConfig, n_win: int, windows: int, seed: int, stream_base: int
) -> np.ndarray:
    """Return raw detector scores on target-free windows of one length."""
    scores = []
    chunk = max(1, EVAL_CHUNK)
    for index, start in enumerate(range(0, windows, chunk)):
        count = min(chunk, windows - start)
        rng = RngStream(seed, (stream_base, n_win, index))
        batch = generate_batch(cfg, rng, count, n_win=n_win, target=0)
        features = sensing_features(
            correlate(batch.sens_noise, batch.n_win), batch.n_win, batch.sigma_ns2
        )
        scores.append(detect(detector, features).score)
    return np.concatenate(scores) if scores else np.empty(0)


class Calibratable(Protocol):
    """Anything carrying a detection network and its threshold table."""

    detector: Mlp
    thresholds: Dict[int, float]


def limit(plan: TrainPlan, nets: Calibratable, cfg: ScenarioConfig) -> TrainReport:
    """Calibrate one detection threshold per window length; no parameter changes."""
    start = pendulum.now("UTC")
    report = TrainReport(seed=plan.seed)
    if plan.limit_windows == 0:
        logger.warning("Limiting budget is zero; thresholds stay uncalibrated.")
        return report
    for n_win in range(cfg.n_win_min, cfg.n_win_max + 1):
        scores = noise_only_scores(
            nets.detector, cfg, n_win, plan.limit_windows, plan.seed, STREAM_LIMIT
        )
        result = calibrate_threshold(scores, cfg.p_f)
        nets.thresholds[n_win] = result.tau
        report.thresholds[n_win] = result.tau
        logger.info(f"limit N_win={n_win}: tau={result.tau:.4f} from {result.n_scores} windows")
    report.elapsed_seconds = (pendulum.now("UTC") - start).total_seconds()
    return report


def train(plan: TrainPlan, nets: JcasNetworks, cfg: ScenarioConfig) -> TrainReport:
    """Run pre-training, fine-tuning and limiting in order."""
    report = pretrain(plan, nets, cfg)
    report.extend(finetune(plan, nets, cfg))
    report.extend(limit(plan, nets, cfg))
    constellation = nets.constellation()
    report.metrics.update(
        {
            "w_s": plan.w_s,
            "kurtosis": kurtosis(constellation),
            "mean_power": constellation.mean_power,
        }
    )
    return report


def heldout_false_alarm(
    nets: Calibratable, cfg: ScenarioConfig, n_win: int, windows: int, seed: int
) -> float:
    """Return the false-alarm rate of the calibrated detector on fresh noise."""
    scores = noise_only_scores(nets.detector, cfg, n_win, windows, seed, STREAM_HELDOUT)
    tau = nets.thresholds.get(n_win, 0.0)
    return float(np.mean(scores + tau > 0.0)) if scores.size else float("nan")


@dataclass
class EvalOutputs:
    """Network and baseline outputs on one batch of draws."""

    batch: FrameBatch
    v: CMat
    constellation: Constellation
    detection: DetectionResult
    theta_hat: np.ndarray
    llrs: np.ndarray
    llrs_mld: np.ndarray
    np_decision: np.ndarray
    esprit_theta: np.ndarray


def evaluate_batch(nets: JcasNetworks, cfg: ScenarioConfig, batch: FrameBatch) -> EvalOutputs:
    """Evaluate networks and classical baselines on identical draws."""
    v, _ = beamformer_head(nets.beamformer, cfg.areas)
    constellation = nets.constellation()
    x = modulate(constellation.points, batch)
    y = transmit(x, v)
    sp = sensing_forward(nets.detector, nets.angle, batch, y, nets.thresholds)
    cp = comm_forward(nets.demapper, batch, y, v)
    llrs_mld = demap_mld(constellation, cp.z_c, cp.gamma, batch.sigma_nc2[:, None])
    np_result = np_detector(sp.z_s, batch.sigma_ns2, cfg.p_f, batch.n_win)
    esprit = esprit_aoa(correlate(sp.z_s, batch.n_win))
    return EvalOutputs(
        batch=batch,
        v=v,
        constellation=constellation,
        detection=sp.detection,
        theta_hat=sp.theta_hat,
        llrs=cp.llrs,
        llrs_mld=llrs_mld,
        np_decision=np_result.decision,
        esprit_theta=esprit.theta,
    )


@dataclass
class SweepFixed:
    """Values held fixed along a sweep axis; ``None`` samples the training range."""

    n_win: Optional[int] = None
    snr_s_db: Optional[float] = None
    snr_c_db: Optional[float] = None


def _half_width(p: Optional[float], n: int) -> Optional[float]:
    if p is None or n == 0:
        return None
    return float(1.96 * np.sqrt(p * (1.0 - p) / n))


def _concat(chunks: List[EvalOutputs], name: str) -> np.ndarray:
    return np.concatenate([getattr(chunk, name) for chunk in chunks])


def _sweep_point(
    nets: JcasNetworks,
    cfg: ScenarioConfig,
    axis: SweepAxis,
    value: float,
    trials: int,
    seed: int,
    stream: int,
    fixed: SweepFixed,
) -> Dict[str, Any]:
    kwargs: Dict[str, Any] = {
        "n_win": fixed.n_win,
        "snr_s_db": fixed.snr_s_db,
        "snr_c_db": fixed.snr_c_db,
    }
    match axis:
        case SweepAxis.SNR_S:
            kwargs["snr_s_db"] = value
        case SweepAxis.SNR_C:
            kwargs["snr_c_db"] = value
        case SweepAxis.N_WIN:
            kwargs["n_win"] = int(value)

    chunks = []
    for index, start in enumerate(range(0, trials, EVAL_CHUNK)):
        rng = RngStream(seed, (stream, index))
        batch = generate_batch(cfg, rng, min(EVAL_CHUNK, trials - start), **kwargs)
        chunks.append(evaluate_batch(nets, cfg, batch))

    bits = np.concatenate([c.batch.bits.reshape(-1, cfg.bits_per_symbol) for c in chunks])
    mask = np.concatenate([c.batch.mask.ravel() for c in chunks])
    llrs = np.concatenate([c.llrs.reshape(-1, cfg.bits_per_symbol) for c in chunks])
    llrs_mld = np.concatenate([c.llrs_mld.reshape(-1, cfg.bits_per_symbol) for c in chunks])
    target = np.concatenate([c.batch.target for c in chunks])
    theta = np.concatenate([c.batch.theta for c in chunks])
    decisions = np.concatenate([c.detection.decision for c in chunks])
    theta_hat = _concat(chunks, "theta_hat")
    nn = metric_sensing(decisions, target, theta_hat, theta)
    np_metrics = metric_sensing(_concat(chunks, "np_decision"), target, theta_hat, theta)
    esprit = metric_sensing(decisions, target, _concat(chunks, "esprit_theta"), theta)

    v = chunks[0].v
    beta_s = avg_beam_gain(v, cfg.sens_area)
    beta_c = avg_beam_gain(v, cfg.comm_area)
    present = target.astype(bool)
    crb_rmse = None
    if present.any():
        n_win = np.concatenate([c.batch.n_win for c in chunks])[present]
        sigma = np.concatenate([c.batch.sigma_ns2 for c in chunks])[present]
        bounds = [
            crb_full(CrbParams(cfg.K, float(n), float(s), beta_s, cfg.sigma_s2, float(t)))
            for n, s, t in zip(n_win, sigma, theta[present])
        ]
        crb_rmse = float(np.sqrt(np.mean(bounds)))

    draws = hashlib.sha256()
    for chunk in chunks:
        draws.update(chunk.batch.noise_s.tobytes())
        draws.update(chunk.batch.noise_c.tobytes())
    ber = metric_ber(harden(llrs), bits, mask)
    valid_bits = int(mask.sum()) * cfg.bits_per_symbol
    row: Dict[str, Any] = {
        "axis": axis.value,
        "value": float(value),
        "trials": trials,
        "w_s": nets.w_s,
        "p_d": nn.p_d,
        "p_d_ci": _half_width(nn.p_d, nn.n_present),
        "p_f": nn.p_f,
        "p_f_ci": _half_width(nn.p_f, nn.n_absent),
        "p_d_np": np_metrics.p_d,
        "p_f_np": np_metrics.p_f,
        "rmse_nn": nn.rmse_rad,
        "bias_nn": nn.bias_rad,
        "rmse_esprit": esprit.rmse_rad,
        "bias_esprit": esprit.bias_rad,
        "crb_rmse": crb_rmse,
        "ber": ber,
        "ber_ci": _half_width(ber, valid_bits),
        "ber_mld": metric_ber(harden(llrs_mld), bits, mask),
        "bmi": metric_bmi(llrs, bits, cfg.M, mask),
        "bmi_mld": metric_bmi(llrs_mld, bits, cfg.M, mask),
        "beta_s_db": float(10 * np.log10(beta_s)),
        "beta_c_db": float(10 * np.log10(beta_c)),
        "snr_plus_beta_db": None,
        "ergodic_capacity": None,
        "bce_floor": None,
        "draw_hash": draws.hexdigest()[:16],
    }
    match axis:
        case SweepAxis.SNR_S:
            row["snr_plus_beta_db"] = value + row["beta_s_db"]
        case SweepAxis.SNR_C:
            row["snr_plus_beta_db"] = value + row["beta_c_db"]
            capacity = ergodic_capacity(value, beta_c)
            row["ergodic_capacity"] = capacity
            row["bce_floor"] = bce_floor(cfg.M, capacity)
    return row


def sweep(
    networks: JcasNetworks | Mapping[float, JcasNetworks],
    cfg: ScenarioConfig,
    axis: SweepAxis | str,
    grid: Sequence[float],
    trials: int,
    seed: int = 0,
    fixed: Optional[SweepFixed] = None,
) -> List[Dict[str, Any]]:
    """Evaluate metrics on fresh seeded draws at each grid point.

    Args
    ----
    networks : JcasNetworks | Mapping[float, JcasNetworks]
        Trained transceiver, or one per ``w_s`` value for the ``w_s`` axis.
    cfg : ScenarioConfig
        Scenario to draw from.
    axis : SweepAxis | str
        ``snr_c``, ``snr_s``, ``n_win`` or ``w_s``.
    grid : Sequence[float]
        Axis values.
    trials : int
        Windows per grid point.
    seed : int
        Master seed; point ``i`` uses its own stream.
    fixed : SweepFixed, optional
        Values held constant; the ``n_win`` axis defaults to ``SNR_s = -5 dB``.

    Returns
    -------
    List[Dict[str, Any]]
        One row per grid point; empty when ``trials`` is zero.

    """
    try:
        axis = SweepAxis(axis)
    except ValueError as error:
        raise InvalidArgumentError(f"Unknown sweep axis: {axis}") from error
    if trials < 0:
        raise InvalidArgumentError(f"Trials must be nonnegative, got {trials}.")
    fixed = fixed or SweepFixed()
    if axis is SweepAxis.N_WIN and fixed.snr_s_db is None:
        fixed = SweepFixed(fixed.n_win, -5.0, fixed.snr_c_db)
    if trials == 0:
        return []

    rows = []
    for index, value in enumerate(grid):
        if axis is SweepAxis.W_S:
            if not isinstance(networks, Mapping):
                raise InvalidArgumentError("The w_s axis needs one network set per w_s value.")
            nets = networks[value]
        elif isinstance(networks, Mapping):
            raise InvalidArgumentError(f"The {axis.value} axis takes a single network set.")
        else:
            nets = networks
        logger.info(f"sweep {axis.value}={value}: {trials} trials")
        rows.append(
            _sweep_point(nets, cfg, axis, float(value), trials, seed, STREAM_SWEEP + index, fixed)
        )
    return rows


@dataclass
class ExperimentConfig:
    """A validated experiment configuration."""

    seed: int
    scenario: ScenarioConfig
    plan: TrainPlan
    modulation: ModulationMode = ModulationMode.QAM
    apsk_inner_radius: Optional[float] = None
    output_dir: str = DEFAULT_OUTPUT_DIR
    checkpoints: List[str] = field(default_factory=list)
    mimo: Optional[Dict[str, Any]] = None
    sweep: Optional[Dict[str, Any]] = None

    @classmethod
    def from_dict(cls, config: Mapping[str, Any]) -> "ExperimentConfig":
        """Build the experiment from a (schema-valid) config mapping."""
        seed = int(config["seed"])
        modulation = ModulationMode(config.get("modulation", ModulationMode.QAM.value))
        radius = config.get("apsk_inner_radius")
        if modulation is ModulationMode.APSK and radius is None:
            raise InvalidArgumentError("apsk_inner_radius is required for APSK modulation.")
        checkpoints = list(config.get("checkpoints") or [])
        if config.get("checkpoint"):
            checkpoints.insert(0, config["checkpoint"])
        return cls(
            seed=seed,
            scenario=ScenarioConfig.from_dict(config.get("scenario")),
            plan=TrainPlan.from_dict(config.get("plan"), seed),
            modulation=modulation,
            apsk_inner_radius=radius,
            output_dir=config.get("output_dir")
            or os.getenv("TAP_JCAS_OUTPUT_DIR", DEFAULT_OUTPUT_DIR),
            checkpoints=checkpoints,
            mimo=dict(config["mimo"]) if config.get("mimo") else None,
            sweep=dict(config["sweep"]) if config.get("sweep") else None,
        )

    def networks(self) -> JcasNetworks:
        """Load the first checkpoint, or initialize fresh networks from the seed."""
        if self.checkpoints:
            return load_checkpoint(self.checkpoints[0])
        logger.info("No checkpoint configured; using freshly initialized networks.")
        return build_networks(self.scenario, self.modulation, self.seed, self.apsk_inner_radius)
