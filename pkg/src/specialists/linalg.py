"""Dense linear algebra: matrices, symmetric eigendecomposition, k-means.

Matrices are plain 2-D float64 numpy arrays (row-major). Everything here is
deterministic: the eigensolver is iteration-order-fixed cyclic Jacobi, and
k-means draws all randomness from an explicit seed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError, ParseError

MATRIX_TAG = "matrix v1"

JACOBI_MAX_SWEEPS = 100
JACOBI_OFF_TOL = 1e-12  # Frobenius norm of the off-diagonal part

KMEANS_MAX_ITER = 100


def as_matrix(m) -> np.ndarray:
    """Validate and return `m` as a 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise InputError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} times "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


@dataclass
class EigenDecomposition:
    """Eigenvalues sorted descending; column i of `vectors` pairs with values[i]."""

    values: np.ndarray
    vectors: np.ndarray


def symmetric_eigen(m) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input may be asymmetric by at most 1e-9 (max-abs); it is symmetrized
    by averaging before the sweeps. Raises ConvergenceError if the
    off-diagonal Frobenius norm is still above JACOBI_OFF_TOL after
    JACOBI_MAX_SWEEPS sweeps.
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[1] != n:
        raise InputError(f"eigendecomposition needs a square matrix, got {m.shape}")
    asym = np.max(np.abs(m - m.T))
    if asym > 1e-9:
        raise InputError(f"matrix is not symmetric: max |m - m^T| = {asym:.3e}")

    a = 0.5 * (m + m.T)
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = _offdiag_norm(a)
        if off <= JACOBI_OFF_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta**2 would overflow
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) if theta != 0 else 1.0
                    t /= abs(theta) + np.hypot(theta, 1.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J applied as row then column plane rotations.
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _offdiag_norm(a)
        if off > JACOBI_OFF_TOL:
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} "
                f"sweeps (off-diagonal residual {off:.3e})",
                residual=float(off),
            )

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values=values[order], vectors=v[:, order])


def _offdiag_norm(a: np.ndarray) -> float:
    # Summing |offdiag|^2 directly avoids the cancellation floor that
    # total - diagonal would hit near machine precision.
    od = a.copy()
    np.fill_diagonal(od, 0.0)
    return float(np.sqrt(np.sum(od * od)))


@dataclass
class KMeansResult:
    assignments: np.ndarray  # (n,) cluster index per row
    centroids: np.ndarray  # (k, dims)
    inertia: float  # sum of squared distances to assigned centroid


def kmeans(points, k: int, seed: int) -> KMeansResult:
    """Lloyd's algorithm with distance-weighted sequential seeding.

    Deterministic for a fixed seed; single restart. Nearest-centroid ties go
    to the lowest cluster index. Empty clusters are repaired by donating the
    point farthest from its current centroid, so every cluster in the result
    is nonempty. Runs to an assignment fixpoint or KMEANS_MAX_ITER.
    """
    points = as_matrix(points)
    n = points.shape[0]
    if k < 1 or k > n:
        raise InputError(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(points, k, rng)

    assignments = None
    for _ in range(KMEANS_MAX_ITER):
        new_assign, centroids, repaired = _lloyd_iteration(points, centroids)
        if not repaired and assignments is not None and np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign

    diffs = points - centroids[assignments]
    inertia = float(np.sum(diffs * diffs))
    return KMeansResult(assignments=assignments, centroids=centroids, inertia=inertia)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All remaining points coincide with a center; take the lowest
            # index not already chosen so seeding stays deterministic.
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _lloyd_iteration(points: np.ndarray, centroids: np.ndarray):
    """One assign + repair + update step; returns (assignments, centroids, repaired)."""
    n = points.shape[0]
    k = centroids.shape[0]
    dist2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assignments = np.argmin(dist2, axis=1)  # argmin takes the lowest index on ties

    repaired = False
    sizes = np.bincount(assignments, minlength=k)
    if np.any(sizes == 0):
        repaired = True
        own_dist = dist2[np.arange(n), assignments].copy()
        for empty in np.flatnonzero(sizes == 0):
            donors = sizes[assignments] >= 2
            candidates = np.where(donors, own_dist, -np.inf)
            donor = int(np.argmax(candidates))  # ties -> lowest point index
            sizes[assignments[donor]] -= 1
            assignments[donor] = empty
            sizes[empty] = 1
            own_dist[donor] = -np.inf  # a donated point stays put this pass

    new_centroids = np.empty_like(centroids)
    for c in range(k):
        new_centroids[c] = points[assignments == c].mean(axis=0)
    return assignments, new_centroids, repaired


def write_matrix_block(f, m: np.ndarray) -> None:
    """Write `rows cols` then one whitespace-separated row per line."""
    m = as_matrix(m)
    f.write(f"{m.shape[0]} {m.shape[1]}\n")
    for row in m:
        f.write(" ".join(format(x, ".17e") for x in row) + "\n")


def read_matrix_block(lines: list[str], pos: int, path: str) -> tuple[np.ndarray, int]:
    """Parse a matrix block from `lines` starting at index `pos`.

    Returns the matrix and the index of the first unconsumed line. Line
    numbers in errors are 1-based.
    """
    if pos >= len(lines):
        raise ParseError(f"{path}:{pos + 1}: expected matrix header 'rows cols'")
    header = lines[pos].split()
    if len(header) != 2:
        raise ParseError(f"{path}:{pos + 1}: expected matrix header 'rows cols'")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise ParseError(f"{path}:{pos + 1}: non-integer matrix dimensions") from None
    if rows < 1 or cols < 1:
        raise ParseError(f"{path}:{pos + 1}: matrix dimensions must be >= 1")
    out = np.empty((rows, cols))
    for i in range(rows):
        lineno = pos + 2 + i
        if pos + 1 + i >= len(lines):
            raise ParseError(f"{path}:{lineno}: truncated matrix (expected {rows} rows)")
        parts = lines[pos + 1 + i].split()
        if len(parts) != cols:
            raise ParseError(
                f"{path}:{lineno}: expected {cols} values, got {len(parts)}"
            )
        try:
            out[i] = [float(x) for x in parts]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric matrix entry") from None
    return out, pos + 1 + rows


def save_matrix(path, m: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write(MATRIX_TAG + "\n")
        write_matrix_block(f, m)


def load_matrix(path) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MATRIX_TAG:
        raise ParseError(f"{path}:1: expected format tag '{MATRIX_TAG}'")
    m, pos = read_matrix_block(lines, 1, str(path))
    if pos != len(lines):
        raise ParseError(f"{path}:{pos + 1}: trailing content after matrix")
    return m
