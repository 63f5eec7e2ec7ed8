"""Feedforward multi-label classifier with exact backprop and freeze flags.

Layers are dense: `a_out = act(W a_in + b)` with W shaped (output_dim,
input_dim). The training loss is a sum of independent per-class binary
cross-entropies over logistic outputs, with probabilities clamped to
[1e-7, 1 - 1e-7] before the logs. Batch gradients are sums (not means) of
per-example gradients. Layers flagged frozen are never written by training.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ParseError
from .linalg import load_matrix, save_matrix

MODEL_TAG = "model v1"

ACTIVATIONS = ("rectifier", "logistic", "identity")

PROB_CLAMP = 1e-7


@dataclass
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise InputError(f"layer dims must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (output_dim, input_dim)
    biases: np.ndarray  # (output_dim,)
    spec: LayerSpec


@dataclass
class NetworkParams:
    layers: list[Layer]
    frozen: list[bool]

    def __post_init__(self):
        if len(self.frozen) != len(self.layers):
            raise InputError("frozen flags must match the layer count")
        for i, layer in enumerate(self.layers):
            s = layer.spec
            if layer.weights.shape != (s.output_dim, s.input_dim):
                raise InputError(f"layer {i} weight shape {layer.weights.shape} != spec {s}")
            if layer.biases.shape != (s.output_dim,):
                raise InputError(f"layer {i} bias shape {layer.biases.shape} != spec {s}")
            if i > 0 and s.input_dim != self.layers[i - 1].spec.output_dim:
                raise InputError(
                    f"layer {i} input dim {s.input_dim} does not chain from "
                    f"layer {i - 1} output dim {self.layers[i - 1].spec.output_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.output_dim

    def copy(self) -> "NetworkParams":
        layers = [
            Layer(weights=l.weights.copy(), biases=l.biases.copy(), spec=replace(l.spec))
            for l in self.layers
        ]
        return NetworkParams(layers=layers, frozen=list(self.frozen))


@dataclass
class TrainConfig:
    learning_rate: float
    momentum: float
    batch_size: int
    epochs: int
    seed: int

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen: list[bool]  # gradients for frozen layers are computed but flagged


def mlp_specs(dims: list[int], output_activation: str = "logistic") -> list[LayerSpec]:
    """Rectifier hidden layers over consecutive `dims`, then the output activation."""
    if len(dims) < 2:
        raise InputError("need at least an input and an output dimension")
    specs = [
        LayerSpec(dims[i], dims[i + 1], "rectifier") for i in range(len(dims) - 2)
    ]
    specs.append(LayerSpec(dims[-2], dims[-1], output_activation))
    return specs


def glorot_uniform(rng: np.random.Generator, output_dim: int, input_dim: int) -> np.ndarray:
    """Weights uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (input_dim + output_dim))
    return rng.uniform(-limit, limit, size=(output_dim, input_dim))


def init_network(specs: list[LayerSpec], seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, nothing frozen; deterministic per seed."""
    for i in range(1, len(specs)):
        if specs[i].input_dim != specs[i - 1].output_dim:
            raise InputError(
                f"spec {i} input dim {specs[i].input_dim} does not chain from "
                f"spec {i - 1} output dim {specs[i - 1].output_dim}"
            )
    rng = np.random.default_rng(seed)
    layers = []
    for s in specs:
        w = glorot_uniform(rng, s.output_dim, s.input_dim)
        layers.append(Layer(weights=w, biases=np.zeros(s.output_dim), spec=replace(s)))
    return NetworkParams(layers=layers, frozen=[False] * len(specs))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "rectifier":
        return np.maximum(z, 0.0)
    if name == "logistic":
        # Exponentiate only nonpositive magnitudes so large |z| cannot overflow.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "rectifier":
        return (z > 0.0).astype(np.float64)
    if name == "logistic":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward_batch(net: NetworkParams, x: np.ndarray):
    """Forward over a (n, D) batch; returns (activations, preactivations).

    activations[0] is the input; activations[i + 1] pairs with layer i.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(
            f"feature batch shape {x.shape} does not match input dim {net.input_dim}"
        )
    activations = [x]
    preacts = []
    for layer in net.layers:
        z = activations[-1] @ layer.weights.T + layer.biases
        preacts.append(z)
        activations.append(_activate(layer.spec.activation, z))
    return activations, preacts


def forward(net: NetworkParams, features: np.ndarray):
    """Single-example forward pass; returns (scores, per-layer activations)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise InputError(f"features must be a vector, got shape {features.shape}")
    activations, _ = forward_batch(net, features[None, :])
    hidden = [a[0] for a in activations[1:]]
    return hidden[-1], hidden


def loss(scores: np.ndarray, labels) -> float:
    """Summed per-class binary cross-entropy with clamped probabilities."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.zeros(scores.shape[0])
    targets[list(labels)] = 1.0
    return float(_loss_batch(scores[None, :], targets[None, :])[0])


def _loss_batch(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    s = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_class = -(targets * np.log(s) + (1.0 - targets) * np.log1p(-s))
    return per_class.sum(axis=1)


def _loss_grad_wrt_preact(layer: Layer, scores, targets, preact):
    """d(summed BCE)/dz for the output layer; zero where the clamp is active."""
    s = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    active = (scores > PROB_CLAMP) & (scores < 1.0 - PROB_CLAMP)
    if layer.spec.activation == "logistic":
        dz = s - targets  # (s - t)/(s(1-s)) * s(1-s), computed without the ratio
    else:
        ds = (s - targets) / (s * (1.0 - s))
        dz = ds * _activation_grad(layer.spec.activation, preact, scores)
    return np.where(active, dz, 0.0)


def backward_batch(net: NetworkParams, x: np.ndarray, targets: np.ndarray):
    """Gradients of the summed batch loss; returns (Gradients, per-example losses)."""
    activations, preacts = forward_batch(net, x)
    scores = activations[-1]
    losses = _loss_batch(scores, targets)

    grads_w = [None] * len(net.layers)
    grads_b = [None] * len(net.layers)
    dz = _loss_grad_wrt_preact(net.layers[-1], scores, targets, preacts[-1])
    for i in range(len(net.layers) - 1, -1, -1):
        grads_w[i] = dz.T @ activations[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ net.layers[i].weights
            dz = da * _activation_grad(
                net.layers[i - 1].spec.activation, preacts[i - 1], activations[i]
            )
    return Gradients(weights=grads_w, biases=grads_b, frozen=list(net.frozen)), losses


def backward(net: NetworkParams, features: np.ndarray, labels) -> Gradients:
    """Exact loss gradients for one example (frozen layers computed but flagged)."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.zeros(net.output_dim)
    targets[list(labels)] = 1.0
    grads, _ = backward_batch(net, features[None, :], targets[None, :])
    return grads


def sgd_train(net: NetworkParams, data, cfg: TrainConfig):
    """Mini-batch SGD with classical momentum; returns (params, epoch mean losses).

    Batch order is drawn from cfg.seed. Frozen layers come back bit-identical.
    """
    if data.feature_dim != net.input_dim or data.num_labels != net.output_dim:
        raise InputError(
            f"dataset ({data.feature_dim} -> {data.num_labels}) does not match "
            f"network ({net.input_dim} -> {net.output_dim})"
        )
    params = net.copy()
    rng = np.random.default_rng(cfg.seed)
    x = data.features
    targets = data.label_indicator().astype(np.float64)
    n = len(data)

    vel_w = [np.zeros_like(l.weights) for l in params.layers]
    vel_b = [np.zeros_like(l.biases) for l in params.layers]
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads, losses = backward_batch(params, x[batch], targets[batch])
            epoch_loss += float(losses.sum())
            for i, layer in enumerate(params.layers):
                if params.frozen[i]:
                    continue
                vel_w[i] = cfg.momentum * vel_w[i] + grads.weights[i]
                vel_b[i] = cfg.momentum * vel_b[i] + grads.biases[i]
                layer.weights -= cfg.learning_rate * vel_w[i]
                layer.biases -= cfg.learning_rate * vel_b[i]
        trace.append(epoch_loss / n)
    return params, trace


def save_network(net: NetworkParams, directory) -> None:
    """Manifest plus one weight and one bias matrix file per layer."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.txt", "w") as f:
        f.write(MODEL_TAG + "\n")
        for i, layer in enumerate(net.layers):
            w_name = f"layer{i}_weights.txt"
            b_name = f"layer{i}_biases.txt"
            save_matrix(directory / w_name, layer.weights)
            save_matrix(directory / b_name, layer.biases[None, :])
            s = layer.spec
            frozen = "true" if net.frozen[i] else "false"
            f.write(
                f"{s.input_dim} {s.output_dim} {s.activation} {frozen} {w_name} {b_name}\n"
            )


def load_network(directory) -> NetworkParams:
    from pathlib import Path

    directory = Path(directory)
    manifest = directory / "manifest.txt"
    with open(manifest) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MODEL_TAG:
        raise ParseError(f"{manifest}:1: expected format tag '{MODEL_TAG}'")
    layers = []
    frozen = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"{manifest}:{i}: expected 6 fields per layer line")
        try:
            input_dim, output_dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{manifest}:{i}: non-integer layer dims") from None
        activation, frozen_str, w_name, b_name = parts[2:]
        if frozen_str not in ("true", "false"):
            raise ParseError(f"{manifest}:{i}: frozen flag must be 'true' or 'false'")
        try:
            spec = LayerSpec(input_dim, output_dim, activation)
        except InputError as e:
            raise ParseError(f"{manifest}:{i}: {e}") from None
        weights = load_matrix(directory / w_name)
        biases = load_matrix(directory / b_name)
        if biases.shape[0] != 1:
            raise ParseError(f"{directory / b_name}: bias file must hold a 1-row matrix")
        layers.append(Layer(weights=weights, biases=biases[0].copy(), spec=spec))
        frozen.append(frozen_str == "true")
    if not layers:
        raise ParseError(f"{manifest}: no layers listed")
    try:
        return NetworkParams(layers=layers, frozen=frozen)
    except InputError as e:
        raise ParseError(f"{manifest}: inconsistent layer files: {e}") from None
