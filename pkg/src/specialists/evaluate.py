"""Test-set evaluation: mAP at truncated top-k detections and cost accounting.

Per example, only the k_eval highest-scoring labels count as detections.
Per class, the detecting examples are ranked by score (ties: lower example
index first) and average precision is computed against ground truth, with
the class's full positive count in the denominator, so positives whose
example never detected the class count as misses. mAP macro-averages the
classes that have at least one positive test example; classes without
positives are reported as NaN and excluded.

Multiply-adds count one per weight per single-example forward pass; biases
and activations are free. Masked classifier connections count ragged (only
the connections a label actually has), matching the real evaluation cost.
"""

import io
from dataclasses import dataclass

import numpy as np

from .augment import AugmentedNetwork, forward_augmented_batch
from .confusion import rank_top_k
from .errors import InputError
from .network import NetworkParams, forward_batch


@dataclass
class ApScores:
    """Ranking-quality fragment of an EvalReport."""

    map_at_k: float
    per_class_ap: np.ndarray  # NaN for classes with no positive test example
    k_eval: int


@dataclass
class EvalReport:
    model_id: str
    map_at_k: float
    per_class_ap: np.ndarray
    multiply_adds: int
    overhead_ratio: float  # vs. a named baseline; 1.0 for the baseline itself
    k_eval: int


def map_at_top_k(scores: np.ndarray, ground_truth, k_eval: int) -> ApScores:
    """Mean average precision with per-example detections truncated to k_eval.

    `ground_truth` is either an (n, C) boolean matrix or a sequence of label
    collections, one per example.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise InputError(f"need a nonempty (n, C) score matrix, got shape {scores.shape}")
    n, c = scores.shape
    gt = _as_indicator(ground_truth, n, c)
    if k_eval < 1 or k_eval > c:
        raise InputError(f"k_eval must be in [1, {c}], got {k_eval}")

    detected = np.zeros((n, c), dtype=bool)
    ranked = rank_top_k(scores, k_eval)
    detected[np.repeat(np.arange(n), k_eval), ranked.ravel()] = True

    per_class = np.full(c, np.nan)
    for cls in range(c):
        npos = int(gt[:, cls].sum())
        if npos == 0:
            continue
        rows = np.flatnonzero(detected[:, cls])
        if rows.size == 0:
            per_class[cls] = 0.0
            continue
        order = np.argsort(-scores[rows, cls], kind="stable")  # stable: index asc on ties
        rel = gt[rows[order], cls]
        hits = np.cumsum(rel)
        ranks = np.arange(1, rows.size + 1)
        per_class[cls] = float(np.sum(hits[rel] / ranks[rel]) / npos)

    defined = per_class[~np.isnan(per_class)]
    if defined.size == 0:
        raise InputError("no class has a positive test example")
    return ApScores(map_at_k=float(defined.mean()), per_class_ap=per_class, k_eval=k_eval)


def _as_indicator(ground_truth, n: int, c: int) -> np.ndarray:
    if isinstance(ground_truth, np.ndarray) and ground_truth.dtype == bool:
        if ground_truth.shape != (n, c):
            raise InputError(
                f"ground truth shape {ground_truth.shape} does not match scores ({n}, {c})"
            )
        return ground_truth
    if len(ground_truth) != n:
        raise InputError(f"{len(ground_truth)} ground-truth entries for {n} examples")
    gt = np.zeros((n, c), dtype=bool)
    for i, labels in enumerate(ground_truth):
        gt[i, list(labels)] = True
    return gt


def count_multiply_adds(net) -> int:
    """Dense-connection multiply-adds for one forward pass of one example."""
    if isinstance(net, NetworkParams):
        return sum(l.spec.input_dim * l.spec.output_dim for l in net.layers)
    if isinstance(net, AugmentedNetwork):
        total = sum(l.spec.input_dim * l.spec.output_dim for l in net.trunk)
        total += sum(l.spec.input_dim * l.spec.output_dim for l in net.generalist)
        for stack in net.heads:
            total += sum(l.spec.input_dim * l.spec.output_dim for l in stack)
        total += int(net.mask.sum())  # ragged classifier: only real connections
        return total
    raise InputError(f"cannot count multiply-adds for {type(net).__name__}")


def model_scores(net, features: np.ndarray) -> np.ndarray:
    """(n, C) output scores for either model kind."""
    if isinstance(net, NetworkParams):
        activations, _ = forward_batch(net, features)
        return activations[-1]
    if isinstance(net, AugmentedNetwork):
        return forward_augmented_batch(net, features)
    raise InputError(f"cannot score with {type(net).__name__}")


def evaluate_model(net, data, k_eval: int, model_id: str, baseline_multiply_adds=None) -> EvalReport:
    ap = map_at_top_k(model_scores(net, data.features), data.labels, k_eval)
    madds = count_multiply_adds(net)
    baseline = baseline_multiply_adds if baseline_multiply_adds else madds
    return EvalReport(
        model_id=model_id,
        map_at_k=ap.map_at_k,
        per_class_ap=ap.per_class_ap,
        multiply_adds=madds,
        overhead_ratio=madds / baseline,
        k_eval=ap.k_eval,
    )


@dataclass
class ComparisonTable:
    """Ordered model comparison; first row is the overhead baseline."""

    rows: list[EvalReport]

    def text(self) -> str:
        width = max(len("model"), max(len(r.model_id) for r in self.rows))
        k = self.rows[0].k_eval
        out = io.StringIO()
        out.write(f"{'model':<{width}}  {'mAP@' + str(k):>10}  {'multiply-adds':>13}  {'overhead':>8}\n")
        for r in self.rows:
            out.write(
                f"{r.model_id:<{width}}  {r.map_at_k:>10.4f}  "
                f"{r.multiply_adds:>13d}  {r.overhead_ratio:>8.3f}\n"
            )
        return out.getvalue()

    def csv(self) -> str:
        lines = ["model,map_at_k,multiply_adds,overhead_ratio"]
        for r in self.rows:
            lines.append(
                f"{r.model_id},{format(r.map_at_k, '.17g')},{r.multiply_adds},"
                f"{r.overhead_ratio:.3f}"
            )
        return "\n".join(lines) + "\n"


def compare(reports: list[EvalReport]) -> ComparisonTable:
    """Rows in input order; overhead recomputed against the first row."""
    if len(reports) < 2:
        raise InputError("need at least two reports to compare")
    k = reports[0].k_eval
    if any(r.k_eval != k for r in reports):
        raise InputError("all reports must share the same k_eval")
    base = reports[0].multiply_adds
    rows = [
        EvalReport(
            model_id=r.model_id,
            map_at_k=r.map_at_k,
            per_class_ap=r.per_class_ap,
            multiply_adds=r.multiply_adds,
            overhead_ratio=r.multiply_adds / base,
            k_eval=r.k_eval,
        )
        for r in reports
    ]
    return ComparisonTable(rows=rows)
