"""Dense networks with reverse-mode gradients and Adam.

Every trainable block of the transceiver (beamformer, modulator, detector,
angle estimator, demapper) is an :class:`Mlp`: ELU hidden layers followed by
one of the output heads in :class:`~tap_jcas.streams.utils.HeadType`.

Complex quantities cross the real-valued network boundary as interleaved
``(re, im)`` pairs; a complex gradient ``g`` means ``dL/dRe + j dL/dIm``.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from tap_jcas.numerics import CMat, ContractViolationError, InvalidArgumentError, RngStream
from tap_jcas.streams.utils import HeadType

logger = logging.getLogger(__name__)


@dataclass
class Mlp:
    """Fully connected network; ``weights[i]`` has shape ``(fan_in, fan_out)``."""

    sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head: HeadType = HeadType.LINEAR
    version: int = 0

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise InvalidArgumentError("Layer count does not match the layer sizes.")
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.sizes[index], self.sizes[index + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise InvalidArgumentError(f"Layer {index} has shape {w.shape}, not {expected}.")

    @property
    def parameters(self) -> List[np.ndarray]:
        """Return the parameters in optimizer order ``[W0, b0, W1, b1, ...]``."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def input_size(self) -> int:
        """Return the input width."""
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        """Return the output width."""
        return self.sizes[-1]

    def fingerprint(self) -> str:
        """Return a hash of the parameter bytes, used to assert phase isolation."""
        digest = hashlib.sha256()
        for p in self.parameters:
            digest.update(np.ascontiguousarray(p).tobytes())
        return digest.hexdigest()


@dataclass
class Tape:
    """Forward intermediates of one batch, consumed by :func:`mlp_backward`."""

    version: int
    activations: List[np.ndarray]
    preactivations: List[np.ndarray]
    outputs: np.ndarray
    offset: Optional[np.ndarray] = None


@dataclass
class AdamState:
    """Adam moments for one network."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: List[np.ndarray] = field(default_factory=list)
    second: List[np.ndarray] = field(default_factory=list)


def mlp_init(
    input_size: int,
    hidden: Sequence[int],
    output_size: int,
    rng: RngStream,
    head: HeadType = HeadType.LINEAR,
) -> Mlp:
    """Initialize a network with fan-in scaled uniform weights and zero biases.

    Weights are drawn from ``U(-l, l)`` with ``l = sqrt(3 / fan_in)``, which gives
    unit-variance pre-activations for unit-variance inputs.
    """
    if not hidden:
        raise InvalidArgumentError("A network needs at least one hidden layer.")
    sizes = (int(input_size), *(int(h) for h in hidden), int(output_size))
    if min(sizes) < 1:
        raise InvalidArgumentError(f"Layer sizes must be positive, got {sizes}.")
    generator = rng.generator
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(3.0 / fan_in)
        weights.append(generator.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes=sizes, weights=weights, biases=biases, head=head)


def elu(z: np.ndarray) -> np.ndarray:
    """Exponential linear unit with unit scale."""
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def mlp_forward(
    net: Mlp, batch: np.ndarray, offset: Optional[float | np.ndarray] = None
) -> Tuple[np.ndarray, Tape]:
    """Run a batch through the network.

    Args
    ----
    net : Mlp
        Network to evaluate.
    batch : np.ndarray
        Inputs of shape ``(rows, input_size)``.
    offset : float | np.ndarray, optional
        Threshold ``tau`` added before the sigmoid head, scalar or one per row.

    Returns
    -------
    Tuple[np.ndarray, Tape]
        Head outputs of shape ``(rows, output_size)`` and the tape for backward.

    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != net.input_size:
        raise InvalidArgumentError(f"Expected {net.input_size} input features, got {x.shape[1]}.")

    activations, preactivations = [x], []
    h = x
    last = len(net.weights) - 1
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        preactivations.append(z)
        if index < last:
            h = elu(z)
            activations.append(h)

    z = preactivations[-1]
    tau = None
    match net.head:
        case HeadType.LINEAR:
            out = z
        case HeadType.SIGMOID_OFFSET:
            tau = np.zeros(len(z)) if offset is None else np.broadcast_to(offset, len(z)).copy()
            out = expit(z + tau[:, None])
        case HeadType.SCALED_TANH:
            out = 0.5 * np.pi * np.tanh(z)
        case HeadType.POWER_NORMALIZED:
            total = float(np.sum(z**2))
            if total == 0.0:
                raise InvalidArgumentError("Cannot power-normalize an all-zero output batch.")
            out = z * np.sqrt(len(z) / total)
        case _:
            raise InvalidArgumentError(f"Unknown head: {net.head}")
    return out, Tape(net.version, activations, preactivations, out, tau)


def _head_backward(net: Mlp, tape: Tape, g_out: np.ndarray) -> np.ndarray:
    z, out = tape.preactivations[-1], tape.outputs
    match net.head:
        case HeadType.LINEAR:
            return g_out
        case HeadType.SIGMOID_OFFSET:
            return g_out * out * (1.0 - out)
        case HeadType.SCALED_TANH:
            return g_out * 0.5 * np.pi * (1.0 - np.tanh(z) ** 2)
        case HeadType.POWER_NORMALIZED:
            total = float(np.sum(z**2))
            scale = np.sqrt(len(z) / total)
            return scale * g_out - (scale / total) * float(np.sum(z * g_out)) * z
        case _:
            raise InvalidArgumentError(f"Unknown head: {net.head}")


def mlp_backward(
    net: Mlp, tape: Tape, output_grads: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Back-propagate output gradients through a recorded forward pass.

    Returns
    -------
    Tuple[List[np.ndarray], np.ndarray]
        Parameter gradients in :attr:`Mlp.parameters` order and the gradient
        with respect to the input batch.

    """
    if tape.version != net.version:
        raise ContractViolationError(
            f"Stale tape: recorded at version {tape.version}, network is at {net.version}."
        )
    g = np.asarray(output_grads, dtype=np.float64).reshape(tape.outputs.shape)
    g = _head_backward(net, tape, g)

    grads: List[np.ndarray] = []
    for index in range(len(net.weights) - 1, -1, -1):
        h = tape.activations[index]
        grads.append(g.sum(axis=0))
        grads.append(h.T @ g)
        g = g @ net.weights[index].T
        if index > 0:
            g = g * _elu_grad(tape.preactivations[index - 1])
    grads.reverse()
    return grads, g


def adam_init(net: Mlp, learning_rate: float = 1e-4) -> AdamState:
    """Return a fresh optimizer state for ``net``."""
    return AdamState(
        learning_rate=learning_rate,
        first=[np.zeros_like(p) for p in net.parameters],
        second=[np.zeros_like(p) for p in net.parameters],
    )


def adam_step(net: Mlp, grads: Sequence[np.ndarray], state: AdamState) -> Tuple[Mlp, AdamState]:
    """Apply one bias-corrected Adam update in place and bump the network version."""
    params = net.parameters
    if len(grads) != len(params) or len(state.first) != len(params):
        raise ContractViolationError("Gradient list does not match the network parameters.")
    for p, g, m in zip(params, grads, state.first):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ContractViolationError(
                f"Shape mismatch: parameter {p.shape}, gradient {np.shape(g)}."
            )

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    net.version += 1
    return net, state


def complex_to_pairs(g: CMat) -> np.ndarray:
    """Return ``(..., 2)`` real pairs for a complex array or gradient."""
    return np.stack([np.real(g), np.imag(g)], axis=-1)


def modulator_head(net: Mlp) -> Tuple[CMat, Tape]:
    """Evaluate the modulator on all ``M`` one-hot inputs.

    The power-normalized head scales the whole batch, so the returned alphabet
    has unit mean power.
    """
    order = net.input_size
    out, tape = mlp_forward(net, np.eye(order))
    return out[:, 0] + 1j * out[:, 1], tape


def beamformer_head(net: Mlp, areas: np.ndarray) -> Tuple[CMat, Tape]:
    """Return the unit-norm precoder for one area description."""
    out, tape = mlp_forward(net, np.asarray(areas, dtype=np.float64).reshape(1, -1))
    pairs = out.reshape(-1, 2)
    return pairs[:, 0] + 1j * pairs[:, 1], tape


def mlp_to_dict(net: Mlp) -> Dict[str, Any]:
    """Serialize a network; floats survive a JSON round trip bit-exactly."""
    return {
        "sizes": list(net.sizes),
        "head": net.head.value,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(data: Dict[str, Any]) -> Mlp:
    """Rebuild a network written by :func:`mlp_to_dict`."""
    return Mlp(
        sizes=tuple(int(s) for s in data["sizes"]),
        weights=[np.asarray(w, dtype=np.float64) for w in data["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in data["biases"]],
        head=HeadType(data["head"]),
    )
