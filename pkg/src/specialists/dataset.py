"""Synthetic multi-label datasets with planted groups of confusable labels.

Each label belongs to one planted group (round-robin, label % groups). An
example for label l is drawn as

    prototype[l] + confusability * group_direction[group(l)] + N(0, 0.5^2)

so one scalar controls how strongly same-group labels overlap in feature
space. Examples carry 1-3 labels; co-occurring labels come from the same
group with probability 0.8.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError
from .partition import LabelPartition

DATASET_TAG = "dataset v1"

NOISE_STD = 0.5
SAME_GROUP_PROB = 0.8
MAX_LABELS_PER_EXAMPLE = 3


@dataclass
class Example:
    features: np.ndarray  # (D,)
    labels: tuple[int, ...]  # sorted, nonempty, all < C


@dataclass
class Dataset:
    num_labels: int
    feature_dim: int
    features: np.ndarray  # (N, D) float64
    labels: list[tuple[int, ...]]  # per example, sorted label indices
    planted_partition: LabelPartition | None = field(default=None)

    def __post_init__(self):
        if len(self.labels) < 1:
            raise InputError("dataset must contain at least one example")
        if self.features.shape != (len(self.labels), self.feature_dim):
            raise InputError(
                f"feature array shape {self.features.shape} does not match "
                f"{len(self.labels)} examples of dimension {self.feature_dim}"
            )
        for i, labs in enumerate(self.labels):
            if len(labs) == 0:
                raise InputError(f"example {i} has an empty label set")
            if any(l < 0 or l >= self.num_labels for l in labs):
                raise InputError(f"example {i} has a label outside [0, {self.num_labels})")

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, i: int) -> Example:
        return Example(features=self.features[i], labels=self.labels[i])

    def label_indicator(self) -> np.ndarray:
        """(N, C) boolean ground-truth matrix."""
        g = np.zeros((len(self), self.num_labels), dtype=bool)
        for i, labs in enumerate(self.labels):
            g[i, list(labs)] = True
        return g


@dataclass
class SplitSpec:
    train_fraction: float
    holdout_fraction: float
    test_fraction: float
    seed: int

    def __post_init__(self):
        fracs = (self.train_fraction, self.holdout_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise InputError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise InputError(f"split fractions must sum to 1, got {sum(fracs)!r}")


def generate_synthetic(
    num_labels: int,
    groups: int,
    feature_dim: int,
    examples_per_label: int,
    confusability: float,
    seed: int,
) -> Dataset:
    """Generate a dataset with `examples_per_label` examples per primary label."""
    if groups < 1 or groups > num_labels:
        raise InputError(f"groups must be in [1, {num_labels}], got {groups}")
    if not 0.0 <= confusability <= 1.0:
        raise InputError(f"confusability must be in [0, 1], got {confusability}")
    if num_labels < 1 or feature_dim < 1 or examples_per_label < 1:
        raise InputError("num_labels, feature_dim and examples_per_label must be >= 1")

    group_of = [l % groups for l in range(num_labels)]
    clusters = [[l for l in range(num_labels) if group_of[l] == g] for g in range(groups)]
    planted = LabelPartition(num_labels=num_labels, clusters=clusters, provenance="planted")

    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((num_labels, feature_dim))
    group_dirs = rng.standard_normal((groups, feature_dim))

    n = num_labels * examples_per_label
    features = np.empty((n, feature_dim))
    labels: list[tuple[int, ...]] = []
    i = 0
    for primary in range(num_labels):
        for _ in range(examples_per_label):
            features[i] = (
                prototypes[primary]
                + confusability * group_dirs[group_of[primary]]
                + rng.normal(0.0, NOISE_STD, feature_dim)
            )
            labels.append(_draw_label_set(primary, group_of, clusters, num_labels, rng))
            i += 1

    return Dataset(
        num_labels=num_labels,
        feature_dim=feature_dim,
        features=features,
        labels=labels,
        planted_partition=planted,
    )


def _draw_label_set(primary, group_of, clusters, num_labels, rng) -> tuple[int, ...]:
    chosen = {primary}
    extras = int(rng.integers(0, MAX_LABELS_PER_EXAMPLE))
    for _ in range(extras):
        same_group = rng.random() < SAME_GROUP_PROB
        if same_group:
            pool = [l for l in clusters[group_of[primary]] if l not in chosen]
        else:
            pool = [l for l in range(num_labels) if l not in chosen]
        if not pool:
            pool = [l for l in range(num_labels) if l not in chosen]
        if not pool:
            break
        chosen.add(int(pool[rng.integers(len(pool))]))
    return tuple(sorted(chosen))


def split(d: Dataset, s: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint train/holdout/test partition by seeded shuffle."""
    n = len(d)
    n_train = int(round(n * s.train_fraction))
    n_holdout = int(round(n * s.holdout_fraction))
    n_test = n - n_train - n_holdout
    if n_train < 1 or n_holdout < 1 or n_test < 1:
        raise InputError(
            f"split of {n} examples leaves an empty part: "
            f"({n_train}, {n_holdout}, {n_test})"
        )
    perm = np.random.default_rng(s.seed).permutation(n)
    parts = (
        perm[:n_train],
        perm[n_train : n_train + n_holdout],
        perm[n_train + n_holdout :],
    )
    return tuple(_take(d, idx) for idx in parts)


def _take(d: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(
        num_labels=d.num_labels,
        feature_dim=d.feature_dim,
        features=d.features[idx].copy(),
        labels=[d.labels[i] for i in idx],
        planted_partition=d.planted_partition,
    )


def save_dataset(d: Dataset, path) -> None:
    """Write the line-oriented text format: tag, `C D N`, one example per line.

    Example lines are `num_labels l1 l2 ... : f1 f2 ... fD`. The planted
    partition is not part of this format; the pipeline persists it separately.
    """
    with open(path, "w") as f:
        f.write(DATASET_TAG + "\n")
        f.write(f"{d.num_labels} {d.feature_dim} {len(d)}\n")
        for labs, feats in zip(d.labels, d.features):
            lab_part = " ".join(str(l) for l in labs)
            feat_part = " ".join(format(x, ".17e") for x in feats)
            f.write(f"{len(labs)} {lab_part} : {feat_part}\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != DATASET_TAG:
        raise ParseError(f"{path}:1: expected format tag '{DATASET_TAG}'")
    if len(lines) < 2:
        raise ParseError(f"{path}:2: missing 'C D N' header")
    header = lines[1].split()
    if len(header) != 3:
        raise ParseError(f"{path}:2: expected header 'C D N'")
    try:
        num_labels, feature_dim, n = (int(x) for x in header)
    except ValueError:
        raise ParseError(f"{path}:2: non-integer header field") from None

    if len(lines) - 2 != n:
        raise ParseError(
            f"{path}:{len(lines)}: expected {n} example lines, found {len(lines) - 2}"
        )
    features = np.empty((n, feature_dim))
    labels: list[tuple[int, ...]] = []
    for i in range(n):
        lineno = i + 3
        parts = lines[i + 2].split()
        try:
            k = int(parts[0])
        except (IndexError, ValueError):
            raise ParseError(f"{path}:{lineno}: expected leading label count") from None
        if k < 1:
            raise ParseError(f"{path}:{lineno}: label count must be >= 1")
        if len(parts) != 1 + k + 1 + feature_dim or parts[1 + k] != ":":
            raise ParseError(
                f"{path}:{lineno}: expected '{k} labels : {feature_dim} features'"
            )
        try:
            labs = tuple(int(x) for x in parts[1 : 1 + k])
            feats = [float(x) for x in parts[2 + k :]]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric field") from None
        if any(l < 0 or l >= num_labels for l in labs):
            raise ParseError(f"{path}:{lineno}: label index outside [0, {num_labels})")
        features[i] = feats
        labels.append(labs)
    return Dataset(
        num_labels=num_labels, feature_dim=feature_dim, features=features, labels=labels
    )
