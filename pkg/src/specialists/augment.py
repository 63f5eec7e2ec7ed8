"""Specialist-head surgery on a trained base classifier.

`augment` keeps the base trunk and generalist stack bit-for-bit (frozen),
attaches one freshly initialized head stack per label cluster, and rebuilds
the classifier layer over the concatenated [generalist | head 0 | ... ]
features. A boolean connectivity mask restricts each head's columns to the
rows (labels) of its own cluster; masked weights are exactly zero at all
times, and training masks the classifier gradient before every update.
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .linalg import load_matrix, save_matrix
from .network import (
    Layer,
    LayerSpec,
    NetworkParams,
    TrainConfig,
    _activate,
    _activation_grad,
    _loss_batch,
    _loss_grad_wrt_preact,
    glorot_uniform,
)
from .partition import LabelPartition, load_partition, save_partition

AUGMENTED_TAG = "augmented v1"

ATTACH_POINTS = ("trunk", "after_generalist")


@dataclass
class AugmentationSpec:
    partition: LabelPartition
    head_layer_dims: list[int]
    head_seed: int
    trunk_layers: int  # how many leading base layers form the trunk
    attach: str = "trunk"

    def __post_init__(self):
        if not self.head_layer_dims or any(d < 1 for d in self.head_layer_dims):
            raise InputError(f"head_layer_dims must be nonempty and >= 1, got {self.head_layer_dims}")
        if self.attach not in ATTACH_POINTS:
            raise InputError(f"attach must be one of {ATTACH_POINTS}, got {self.attach!r}")
        if self.trunk_layers < 1:
            raise InputError("trunk_layers must be >= 1")


@dataclass
class AugmentedNetwork:
    trunk: list[Layer]  # frozen
    generalist: list[Layer]  # frozen, may be empty
    heads: list[list[Layer]]  # one rectifier stack per cluster, trainable
    classifier_weights: np.ndarray  # (C, generalist_width + sum of head widths)
    classifier_bias: np.ndarray  # (C,)
    mask: np.ndarray  # bool, same shape as classifier_weights, fixed for life
    partition: LabelPartition
    attach: str

    @property
    def num_labels(self) -> int:
        return self.classifier_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.trunk[0].spec.input_dim

    @property
    def generalist_width(self) -> int:
        stack = self.generalist if self.generalist else self.trunk
        return stack[-1].spec.output_dim

    @property
    def attach_width(self) -> int:
        if self.attach == "trunk":
            return self.trunk[-1].spec.output_dim
        return self.generalist_width

    def head_column_slice(self, h: int) -> slice:
        start = self.generalist_width
        for i in range(h):
            start += self.heads[i][-1].spec.output_dim
        return slice(start, start + self.heads[h][-1].spec.output_dim)

    def copy(self) -> "AugmentedNetwork":
        def copy_stack(stack):
            return [Layer(l.weights.copy(), l.biases.copy(), replace(l.spec)) for l in stack]

        return AugmentedNetwork(
            trunk=copy_stack(self.trunk),
            generalist=copy_stack(self.generalist),
            heads=[copy_stack(h) for h in self.heads],
            classifier_weights=self.classifier_weights.copy(),
            classifier_bias=self.classifier_bias.copy(),
            mask=self.mask.copy(),
            partition=self.partition,
            attach=self.attach,
        )


def build_mask(partition: LabelPartition, generalist_width: int, head_widths: list[int]) -> np.ndarray:
    """Generalist columns feed every label; head h's columns feed only cluster h."""
    c = partition.num_labels
    mask = np.zeros((c, generalist_width + sum(head_widths)), dtype=bool)
    mask[:, :generalist_width] = True
    start = generalist_width
    for h, width in enumerate(head_widths):
        mask[np.ix_(partition.clusters[h], range(start, start + width))] = True
        start += width
    return mask


def augment(base: NetworkParams, spec: AugmentationSpec) -> AugmentedNetwork:
    """Attach specialist heads to `base`; the trunk and generalist come back frozen.

    The base classifier layer's weights are not reused: the combined
    classifier is re-initialized from scratch (bias zero) and masked.
    """
    if spec.partition.num_labels != base.output_dim:
        raise InputError(
            f"partition covers {spec.partition.num_labels} labels but the base "
            f"network has {base.output_dim} outputs"
        )
    if spec.trunk_layers > len(base.layers) - 1:
        raise InputError(
            f"trunk_layers = {spec.trunk_layers} leaves no classifier layer "
            f"(base has {len(base.layers)} layers)"
        )

    def copy_stack(stack):
        return [Layer(l.weights.copy(), l.biases.copy(), replace(l.spec)) for l in stack]

    trunk = copy_stack(base.layers[: spec.trunk_layers])
    generalist = copy_stack(base.layers[spec.trunk_layers : -1])

    attach_width = trunk[-1].spec.output_dim
    if spec.attach == "after_generalist" and generalist:
        attach_width = generalist[-1].spec.output_dim

    rng = np.random.default_rng(spec.head_seed)
    heads = []
    for _ in range(spec.partition.num_clusters):
        dims = [attach_width] + list(spec.head_layer_dims)
        stack = []
        for i in range(len(dims) - 1):
            s = LayerSpec(dims[i], dims[i + 1], "rectifier")
            stack.append(
                Layer(
                    weights=glorot_uniform(rng, s.output_dim, s.input_dim),
                    biases=np.zeros(s.output_dim),
                    spec=s,
                )
            )
        heads.append(stack)

    generalist_width = (generalist[-1] if generalist else trunk[-1]).spec.output_dim
    head_widths = [spec.head_layer_dims[-1]] * spec.partition.num_clusters
    mask = build_mask(spec.partition, generalist_width, head_widths)
    c = spec.partition.num_labels
    weights = glorot_uniform(rng, c, mask.shape[1])
    weights[~mask] = 0.0

    return AugmentedNetwork(
        trunk=trunk,
        generalist=generalist,
        heads=heads,
        classifier_weights=weights,
        classifier_bias=np.zeros(c),
        mask=mask,
        partition=spec.partition,
        attach=spec.attach,
    )


def _stack_forward(stack: list[Layer], x: np.ndarray):
    activations = [x]
    preacts = []
    for layer in stack:
        z = activations[-1] @ layer.weights.T + layer.biases
        preacts.append(z)
        activations.append(_activate(layer.spec.activation, z))
    return activations, preacts


def frozen_features(net: AugmentedNetwork, x: np.ndarray):
    """(attach input, generalist output) for a batch; both are frozen-path values."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(
            f"feature batch shape {x.shape} does not match input dim {net.input_dim}"
        )
    trunk_out = _stack_forward(net.trunk, x)[0][-1]
    gen_out = _stack_forward(net.generalist, trunk_out)[0][-1] if net.generalist else trunk_out
    attach_in = trunk_out if net.attach == "trunk" else gen_out
    return attach_in, gen_out


def _combined_features(net: AugmentedNetwork, attach_in: np.ndarray, gen_out: np.ndarray):
    head_traces = [_stack_forward(stack, attach_in) for stack in net.heads]
    z = np.hstack([gen_out] + [acts[-1] for acts, _ in head_traces])
    return z, head_traces


def forward_augmented_batch(net: AugmentedNetwork, x: np.ndarray) -> np.ndarray:
    """(n, C) scores: logistic over generalist and per-cluster head contributions."""
    attach_in, gen_out = frozen_features(net, x)
    z, _ = _combined_features(net, attach_in, gen_out)
    return _activate("logistic", z @ net.classifier_weights.T + net.classifier_bias)


def forward_augmented(net: AugmentedNetwork, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise InputError(f"features must be a vector, got shape {features.shape}")
    return forward_augmented_batch(net, features[None, :])[0]


@dataclass
class AugmentedGradients:
    classifier_weights: np.ndarray  # masked: exactly zero where mask is False
    classifier_bias: np.ndarray
    heads: list[list[tuple[np.ndarray, np.ndarray]]]  # per head, per layer (dW, db)


def backward_augmented_from_features(
    net: AugmentedNetwork,
    attach_in: np.ndarray,
    gen_out: np.ndarray,
    targets: np.ndarray,
):
    """Gradients of the summed batch loss w.r.t. heads and (masked) classifier.

    Takes precomputed frozen-path features so training can cache them; no
    gradient flows into the frozen stacks.
    """
    z, head_traces = _combined_features(net, attach_in, gen_out)
    preact = z @ net.classifier_weights.T + net.classifier_bias
    scores = _activate("logistic", preact)
    losses = _loss_batch(scores, targets)

    classifier_layer = Layer(
        weights=net.classifier_weights,
        biases=net.classifier_bias,
        spec=LayerSpec(z.shape[1], net.num_labels, "logistic"),
    )
    dz_out = _loss_grad_wrt_preact(classifier_layer, scores, targets, preact)
    dw_cls = dz_out.T @ z
    dw_cls[~net.mask] = 0.0
    db_cls = dz_out.sum(axis=0)
    dz_feat = dz_out @ net.classifier_weights  # masked weights contribute zero

    head_grads = []
    for h, (acts, preacts) in enumerate(head_traces):
        stack = net.heads[h]
        cols = net.head_column_slice(h)
        dz = dz_feat[:, cols] * _activation_grad(
            stack[-1].spec.activation, preacts[-1], acts[-1]
        )
        grads = [None] * len(stack)
        for i in range(len(stack) - 1, -1, -1):
            grads[i] = (dz.T @ acts[i], dz.sum(axis=0))
            if i > 0:
                da = dz @ stack[i].weights
                dz = da * _activation_grad(stack[i - 1].spec.activation, preacts[i - 1], acts[i])
        head_grads.append(grads)

    return AugmentedGradients(classifier_weights=dw_cls, classifier_bias=db_cls, heads=head_grads), losses


def backward_augmented(net: AugmentedNetwork, features: np.ndarray, labels) -> AugmentedGradients:
    """Single-example gradients for the trainable (head + classifier) parameters."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.zeros(net.num_labels)
    targets[list(labels)] = 1.0
    attach_in, gen_out = frozen_features(net, features[None, :])
    grads, _ = backward_augmented_from_features(net, attach_in, gen_out, targets[None, :])
    return grads


def train_augmented(net: AugmentedNetwork, data, cfg: TrainConfig):
    """SGD over heads and classifier only; returns (network, epoch mean losses).

    The frozen trunk and generalist outputs are computed once and cached:
    no gradient reaches them, so their per-example activations are constant
    throughout training.
    """
    if data.feature_dim != net.input_dim or data.num_labels != net.num_labels:
        raise InputError(
            f"dataset ({data.feature_dim} -> {data.num_labels}) does not match "
            f"augmented network ({net.input_dim} -> {net.num_labels})"
        )
    out = net.copy()
    rng = np.random.default_rng(cfg.seed)
    attach_in, gen_out = frozen_features(out, data.features)
    targets = data.label_indicator().astype(np.float64)
    n = len(data)

    vel_cls_w = np.zeros_like(out.classifier_weights)
    vel_cls_b = np.zeros_like(out.classifier_bias)
    vel_heads = [
        [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in stack]
        for stack in out.heads
    ]

    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads, losses = backward_augmented_from_features(
                out, attach_in[batch], gen_out[batch], targets[batch]
            )
            epoch_loss += float(losses.sum())

            vel_cls_w = cfg.momentum * vel_cls_w + grads.classifier_weights
            vel_cls_b = cfg.momentum * vel_cls_b + grads.classifier_bias
            out.classifier_weights -= cfg.learning_rate * vel_cls_w
            out.classifier_bias -= cfg.learning_rate * vel_cls_b
            for h, stack in enumerate(out.heads):
                for i, layer in enumerate(stack):
                    vw, vb = vel_heads[h][i]
                    vw = cfg.momentum * vw + grads.heads[h][i][0]
                    vb = cfg.momentum * vb + grads.heads[h][i][1]
                    vel_heads[h][i] = (vw, vb)
                    layer.weights -= cfg.learning_rate * vw
                    layer.biases -= cfg.learning_rate * vb
        trace.append(epoch_loss / n)
    return out, trace


def save_augmented(net: AugmentedNetwork, directory) -> None:
    """Manifest with attach point, partition reference, and per-head layers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_partition(net.partition, directory / "partition.txt")

    def write_stack(f, kind: str, stack: list[Layer], frozen: bool, prefix: str):
        f.write(f"{kind} {len(stack)}\n")
        for i, layer in enumerate(stack):
            w_name = f"{prefix}{i}_weights.txt"
            b_name = f"{prefix}{i}_biases.txt"
            save_matrix(directory / w_name, layer.weights)
            save_matrix(directory / b_name, layer.biases[None, :])
            s = layer.spec
            flag = "true" if frozen else "false"
            f.write(f"{s.input_dim} {s.output_dim} {s.activation} {flag} {w_name} {b_name}\n")

    with open(directory / "manifest.txt", "w") as f:
        f.write(AUGMENTED_TAG + "\n")
        f.write(f"attach {net.attach}\n")
        f.write("partition partition.txt\n")
        write_stack(f, "trunk", net.trunk, True, "trunk")
        write_stack(f, "generalist", net.generalist, True, "generalist")
        f.write(f"heads {len(net.heads)}\n")
        for h, stack in enumerate(net.heads):
            write_stack(f, "head", stack, False, f"head{h}_layer")
        save_matrix(directory / "classifier_weights.txt", net.classifier_weights)
        save_matrix(directory / "classifier_biases.txt", net.classifier_bias[None, :])
        f.write("classifier classifier_weights.txt classifier_biases.txt\n")


def load_augmented(directory) -> AugmentedNetwork:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    with open(manifest) as f:
        lines = [l for l in f.read().splitlines() if l]
    if not lines or lines[0] != AUGMENTED_TAG:
        raise ParseError(f"{manifest}:1: expected format tag '{AUGMENTED_TAG}'")

    pos = 1

    def expect(keyword: str):
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(keyword + " "):
            raise ParseError(f"{manifest}:{pos + 1}: expected '{keyword} ...'")
        parts = lines[pos].split()
        pos += 1
        return parts[1:]

    def read_stack(count: int) -> list[Layer]:
        nonlocal pos
        stack = []
        for _ in range(count):
            parts = lines[pos].split()
            if len(parts) != 6:
                raise ParseError(f"{manifest}:{pos + 1}: expected 6 fields per layer line")
            try:
                spec = LayerSpec(int(parts[0]), int(parts[1]), parts[2])
            except (ValueError, InputError) as e:
                raise ParseError(f"{manifest}:{pos + 1}: {e}") from None
            weights = load_matrix(directory / parts[4])
            biases = load_matrix(directory / parts[5])
            stack.append(Layer(weights=weights, biases=biases[0].copy(), spec=spec))
            pos += 1
        return stack

    (attach,) = expect("attach")
    if attach not in ATTACH_POINTS:
        raise ParseError(f"{manifest}:2: unknown attach point {attach!r}")
    (partition_file,) = expect("partition")
    partition = load_partition(directory / partition_file)

    (n_trunk,) = expect("trunk")
    trunk = read_stack(int(n_trunk))
    (n_gen,) = expect("generalist")
    generalist = read_stack(int(n_gen))
    (n_heads,) = expect("heads")
    heads = []
    for _ in range(int(n_heads)):
        (n_layers,) = expect("head")
        heads.append(read_stack(int(n_layers)))
    cls_w_name, cls_b_name = expect("classifier")
    weights = load_matrix(directory / cls_w_name)
    bias = load_matrix(directory / cls_b_name)[0].copy()

    if len(heads) != partition.num_clusters:
        raise ParseError(
            f"{manifest}: {len(heads)} heads but the partition has "
            f"{partition.num_clusters} clusters"
        )
    gen_width = (generalist[-1] if generalist else trunk[-1]).spec.output_dim
    mask = build_mask(partition, gen_width, [h[-1].spec.output_dim for h in heads])
    if weights.shape != mask.shape:
        raise ParseError(
            f"{manifest}: classifier shape {weights.shape} does not match mask {mask.shape}"
        )
    if np.any(weights[~mask] != 0.0):
        raise ParseError(f"{manifest}: classifier has nonzero weights outside the mask")

    return AugmentedNetwork(
        trunk=trunk,
        generalist=generalist,
        heads=heads,
        classifier_weights=weights,
        classifier_bias=bias,
        mask=mask,
        partition=partition,
        attach=attach,
    )
