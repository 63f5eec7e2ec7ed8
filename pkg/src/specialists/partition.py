"""Label-space partitioning: spectral clustering plus the randomized control.

Spectral clustering follows the classic normalized-affinity recipe: zero the
diagonal, scale by inverse square-root degrees, embed each label as its row
in the top eigenvector matrix, renormalize rows, then k-means the rows. The
randomized control permutes label identities while keeping every cluster
cardinality, isolating the value of the discovered grouping.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError
from .linalg import kmeans, symmetric_eigen

PARTITION_TAG = "partition v1"

PROVENANCES = ("spectral", "randomized", "planted")

DEGREE_EPSILON = 1e-12
ROW_NORM_FLOOR = 1e-12


@dataclass
class LabelPartition:
    num_labels: int
    clusters: list[list[int]]  # disjoint, nonempty, union = [0, num_labels)
    provenance: str

    def __post_init__(self):
        self.clusters = [sorted(int(l) for l in c) for c in self.clusters]
        seen: set[int] = set()
        for i, c in enumerate(self.clusters):
            if not c:
                raise InputError(f"cluster {i} is empty")
            if seen & set(c):
                raise InputError(f"cluster {i} overlaps an earlier cluster")
            seen |= set(c)
        if seen != set(range(self.num_labels)):
            raise InputError("clusters do not cover [0, num_labels) exactly")
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown provenance {self.provenance!r}")

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def cluster_of(self) -> np.ndarray:
        """(C,) array mapping each label to its cluster index."""
        out = np.empty(self.num_labels, dtype=np.int64)
        for c, labels in enumerate(self.clusters):
            out[labels] = c
        return out


@dataclass
class SpectralConfig:
    num_clusters: int
    kmeans_seed: int
    degree_epsilon: float = field(default=DEGREE_EPSILON)


def spectral_cluster(b: np.ndarray, cfg: SpectralConfig) -> LabelPartition:
    """Cluster labels using similarity matrix `b` (C x C, symmetric, >= 0)."""
    b = np.asarray(b, dtype=np.float64)
    c = b.shape[0]
    if b.ndim != 2 or b.shape[1] != c:
        raise InputError(f"similarity matrix must be square, got {b.shape}")
    if cfg.num_clusters < 1 or cfg.num_clusters > c:
        raise InputError(f"num_clusters must be in [1, {c}], got {cfg.num_clusters}")
    if np.max(np.abs(b - b.T)) > 1e-9:
        raise InputError("similarity matrix must be symmetric")
    if np.min(b) < -1e-9:
        raise InputError(f"similarity entries must be nonnegative, min is {np.min(b):.3e}")

    affinity = np.clip(b, 0.0, None)
    np.fill_diagonal(affinity, 0.0)
    if not np.any(affinity > 0.0):
        raise InputError(
            "similarity matrix is all zero off the diagonal; no degree_epsilon "
            "can make spectral clustering meaningful"
        )

    degrees = affinity.sum(axis=1)
    degrees[degrees == 0.0] = cfg.degree_epsilon
    inv_sqrt = 1.0 / np.sqrt(degrees)
    laplacian = inv_sqrt[:, None] * affinity * inv_sqrt[None, :]

    eig = symmetric_eigen(laplacian)
    embedding = eig.vectors[:, : cfg.num_clusters].copy()
    norms = np.sqrt(np.sum(embedding * embedding, axis=1))
    for i in range(c):
        if norms[i] < ROW_NORM_FLOOR:
            embedding[i] = 0.0
            embedding[i, 0] = 1.0
        else:
            embedding[i] /= norms[i]

    result = kmeans(embedding, cfg.num_clusters, cfg.kmeans_seed)
    clusters = [
        [int(l) for l in np.flatnonzero(result.assignments == g)]
        for g in range(cfg.num_clusters)
    ]
    return LabelPartition(num_labels=c, clusters=clusters, provenance="spectral")


def randomized_control(p: LabelPartition, seed: int) -> LabelPartition:
    """Permute label identities uniformly; cluster cardinalities are preserved."""
    perm = np.random.default_rng(seed).permutation(p.num_labels)
    clusters = [[int(perm[l]) for l in c] for c in p.clusters]
    return LabelPartition(num_labels=p.num_labels, clusters=clusters, provenance="randomized")


def partition_quality(p: LabelPartition, reference: LabelPartition) -> float:
    """Adjusted Rand index between two partitions of the same label set."""
    if p.num_labels != reference.num_labels:
        raise InputError(
            f"partitions cover different label counts: {p.num_labels} vs "
            f"{reference.num_labels}"
        )
    a = p.cluster_of()
    b = reference.cluster_of()
    contingency = np.zeros((p.num_clusters, reference.num_clusters), dtype=np.int64)
    for i in range(p.num_labels):
        contingency[a[i], b[i]] += 1

    def comb2(x):
        return x * (x - 1) // 2

    index = sum(comb2(int(n)) for n in contingency.flat)
    sum_a = sum(comb2(int(n)) for n in contingency.sum(axis=1))
    sum_b = sum(comb2(int(n)) for n in contingency.sum(axis=0))
    total = comb2(p.num_labels)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if math.isclose(max_index, expected):
        return 1.0  # both partitions degenerate in the same way
    return (index - expected) / (max_index - expected)


def save_partition(p: LabelPartition, path) -> None:
    """Text format: tag, `C G provenance`, one ascending cluster per line."""
    with open(path, "w") as f:
        f.write(PARTITION_TAG + "\n")
        f.write(f"{p.num_labels} {p.num_clusters} {p.provenance}\n")
        for c in p.clusters:
            f.write(" ".join(str(l) for l in c) + "\n")


def load_partition(path) -> LabelPartition:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != PARTITION_TAG:
        raise ParseError(f"{path}:1: expected format tag '{PARTITION_TAG}'")
    if len(lines) < 2:
        raise ParseError(f"{path}:2: missing 'C G provenance' header")
    header = lines[1].split()
    if len(header) != 3:
        raise ParseError(f"{path}:2: expected header 'C G provenance'")
    try:
        num_labels, g = int(header[0]), int(header[1])
    except ValueError:
        raise ParseError(f"{path}:2: non-integer header field") from None
    provenance = header[2]
    if len(lines) - 2 != g:
        raise ParseError(f"{path}:{len(lines)}: expected {g} cluster lines")
    clusters = []
    for i in range(g):
        try:
            clusters.append([int(x) for x in lines[i + 2].split()])
        except ValueError:
            raise ParseError(f"{path}:{i + 3}: non-integer label index") from None
    try:
        return LabelPartition(num_labels=num_labels, clusters=clusters, provenance=provenance)
    except InputError as e:
        raise ParseError(f"{path}: invalid partition: {e}") from None
