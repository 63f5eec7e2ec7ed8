"""Top-K prediction indicators and the label co-occurrence matrices.

Two C x C statistics over a holdout set, both exact means over the set:

  confusion    a[i, j] = fraction of examples where label i is in the top-K
               predictions while j is a ground-truth label
  codetection  a[i, j] = fraction of examples where labels i and j are both
               in the top-K predictions (no ground truth involved)

Either one is symmetrized as b = a^T a before spectral clustering.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError
from .linalg import read_matrix_block, write_matrix_block
from .network import NetworkParams, forward_batch

CONFUSION_TAG = "confusion v1"

MODES = ("confusion", "codetection")


@dataclass
class TopKPredictions:
    k: int
    num_labels: int
    labels: np.ndarray  # (n, k) ranked by descending score, ties to lower index

    @property
    def num_examples(self) -> int:
        return self.labels.shape[0]

    def indicator(self) -> np.ndarray:
        """(n, C) boolean matrix: example x detects label i."""
        m = np.zeros((self.num_examples, self.num_labels), dtype=bool)
        rows = np.repeat(np.arange(self.num_examples), self.k)
        m[rows, self.labels.ravel()] = True
        return m


@dataclass
class ConfusionMatrix:
    mode: str  # "confusion" or "codetection"
    k: int
    a: np.ndarray  # (C, C), entries in [0, 1]
    holdout_size: int


@dataclass
class SimilarityMatrix:
    b: np.ndarray  # (C, C), symmetric positive semidefinite


def rank_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores per row; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1 or k > scores.shape[1]:
        raise InputError(f"k must be in [1, {scores.shape[1]}], got {k}")
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def top_k(net: NetworkParams, data, k: int) -> TopKPredictions:
    """Each example's k highest-scoring labels under `net`."""
    if k > data.num_labels:
        raise InputError(f"k = {k} exceeds the label count {data.num_labels}")
    activations, _ = forward_batch(net, data.features)
    return TopKPredictions(
        k=k, num_labels=data.num_labels, labels=rank_top_k(activations[-1], k)
    )


def confusion_matrix(preds: TopKPredictions, data) -> ConfusionMatrix:
    if preds.num_examples != len(data) or preds.num_labels != data.num_labels:
        raise InputError(
            f"predictions ({preds.num_examples} examples, {preds.num_labels} labels) "
            f"do not match the dataset ({len(data)} examples, {data.num_labels} labels)"
        )
    n = len(data)
    m = preds.indicator().astype(np.float64)
    g = data.label_indicator().astype(np.float64)
    a = (m.T @ g) / n
    return ConfusionMatrix(mode="confusion", k=preds.k, a=a, holdout_size=n)


def codetection_matrix(preds: TopKPredictions) -> ConfusionMatrix:
    n = preds.num_examples
    if n == 0:
        raise InputError("cannot build a co-detection matrix from zero examples")
    m = preds.indicator().astype(np.float64)
    a = (m.T @ m) / n
    a = 0.5 * (a + a.T)  # exact integer counts; this only forces bit symmetry
    return ConfusionMatrix(mode="codetection", k=preds.k, a=a, holdout_size=n)


def symmetrize(cm: ConfusionMatrix) -> SimilarityMatrix:
    """b = a^T a, symmetric PSD by construction."""
    b = cm.a.T @ cm.a
    return SimilarityMatrix(b=0.5 * (b + b.T))


def save_confusion(cm: ConfusionMatrix, path) -> None:
    """Text format: tag, `mode k holdout_size C`, then the matrix block."""
    with open(path, "w") as f:
        f.write(CONFUSION_TAG + "\n")
        f.write(f"{cm.mode} {cm.k} {cm.holdout_size} {cm.a.shape[0]}\n")
        write_matrix_block(f, cm.a)


def load_confusion(path) -> ConfusionMatrix:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CONFUSION_TAG:
        raise ParseError(f"{path}:1: expected format tag '{CONFUSION_TAG}'")
    if len(lines) < 2:
        raise ParseError(f"{path}:2: missing 'mode k holdout_size C' header")
    parts = lines[1].split()
    if len(parts) != 4 or parts[0] not in MODES:
        raise ParseError(f"{path}:2: expected header 'mode k holdout_size C'")
    try:
        k, holdout_size, c = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ParseError(f"{path}:2: non-integer header field") from None
    a, pos = read_matrix_block(lines, 2, str(path))
    if pos != len(lines):
        raise ParseError(f"{path}:{pos + 1}: trailing content after matrix")
    if a.shape != (c, c):
        raise ParseError(f"{path}: matrix shape {a.shape} does not match C = {c}")
    return ConfusionMatrix(mode=parts[0], k=k, a=a, holdout_size=holdout_size)
