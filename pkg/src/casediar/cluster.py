"""Cosine-affinity spectral clustering and segment-level speaker assignment."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEGENERATE_GAP = 1e-9
TIE_TOLERANCE = 1e-12


@dataclass
class AffinityMatrix:
    values: np.ndarray
    percentile: float | None = None  # None until refined


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray
    centroids: np.ndarray


def _unit_rows(embeddings) -> np.ndarray:
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"embeddings must be N x D, got {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"embedding {int(zero[0])} has zero norm")
    return X / norms[:, None]


def cosine_affinity(embeddings) -> AffinityMatrix:
    """(1 + cos) / 2 for every pair, so 1 = same direction, 0 = opposite."""
    U = _unit_rows(embeddings)
    A = np.clip((1.0 + U @ U.T) / 2.0, 0.0, 1.0)
    A = (A + A.T) / 2.0
    return AffinityMatrix(A)


def refine_affinity(A: AffinityMatrix | np.ndarray, p: float) -> AffinityMatrix:
    """Row-wise percentile thresholding, diagonal replacement, max-symmetrisation."""
    if not 0 <= p < 100:
        raise ValueError(f"percentile {p} outside [0, 100)")
    M = np.array(A.values if isinstance(A, AffinityMatrix) else A, dtype=np.float64)
    n = M.shape[0]
    if n == 1:
        return AffinityMatrix(np.ones((1, 1)), p)
    off = ~np.eye(n, dtype=bool)
    R = M.copy()
    for i in range(n):
        R[i, i] = M[i, off[i]].max()
        if p > 0:
            # the percentile is taken over the whole row, diagonal included;
            # the tolerance keeps float noise in equal entries from splitting ties
            cut = np.percentile(R[i], p) - TIE_TOLERANCE
            R[i, off[i]] = np.where(R[i, off[i]] < cut, 0.0, R[i, off[i]])
    return AffinityMatrix(np.maximum(R, R.T), p)


def _normalized(M: np.ndarray) -> np.ndarray:
    d = M.sum(axis=1)
    inv = 1.0 / np.sqrt(np.maximum(d, 1e-12))
    return M * inv[:, None] * inv[None, :]


def affinity_spectrum(A: AffinityMatrix | np.ndarray, normalized: bool = True):
    """Eigenvalues (descending) and matching eigenvectors of the affinity."""
    M = np.asarray(A.values if isinstance(A, AffinityMatrix) else A, dtype=np.float64)
    if normalized:
        M = _normalized(M)
    vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def eigengap_count(A: AffinityMatrix | np.ndarray, k_max: int = 8, normalized: bool = True) -> int:
    """Cluster count at the largest drop between consecutive sorted eigenvalues.

    Gaps are taken between positions i and i+1 for 1 <= i <= min(k_max, N), the
    eigenvalue past the end counting as 0.  A largest gap below 1e-9 gives 1.
    """
    M = np.asarray(A.values if isinstance(A, AffinityMatrix) else A)
    if M.shape[0] < 2:
        raise ValueError("eigengap_count needs at least 2 items")
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    vals, _ = affinity_spectrum(M, normalized)
    k_top = min(k_max, len(vals))
    padded = np.append(vals, 0.0)
    gaps = padded[:k_top] - padded[1:k_top + 1]
    if gaps.max() < DEGENERATE_GAP:
        return 1
    return int(np.argmax(gaps)) + 1


def _order_key(X: np.ndarray) -> np.ndarray:
    return np.lexsort(X.T[::-1])


def kmeans(X: np.ndarray, k: int, seed: int = 0, restarts: int = 10, iters: int = 100):
    """Seeded k-means++ with restarts; result does not depend on row order.

    Rows are sorted before seeding and the RNG is keyed on a hash of the
    sorted data, so permuting the input permutes the labels identically.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"kmeans: k={k} with {n} points")
    order = _order_key(np.round(X, 12))
    Xs = X[order]
    digest = hashlib.sha256(np.round(Xs, 10).tobytes()).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = [Xs[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(((Xs[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            if total <= 0:
                centers.append(Xs[rng.integers(n)])
            else:
                centers.append(Xs[rng.choice(n, p=d2 / total)])
        C = np.array(centers)
        labels = np.full(n, -1)
        for _ in range(iters):
            d2 = ((Xs[:, None, :] - C[None]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            if np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                members = Xs[labels == j]
                if len(members):
                    C[j] = members.mean(axis=0)
        inertia = ((Xs - C[labels]) ** 2).sum()
        if inertia < best_inertia - 1e-12:
            best_inertia, best_labels = inertia, labels.copy()
    out = np.empty(n, dtype=np.int64)
    out[order] = best_labels
    return _canonical(out), best_inertia


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters 0..k-1 by first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, l in enumerate(labels):
        out[i] = mapping.setdefault(int(l), len(mapping))
    return out


def spectral_cluster(embeddings, p: float = 0.0, k_max: int = 8, seed: int = 0,
                     restarts: int = 10, normalized: bool = True) -> ClusterResult:
    U = _unit_rows(embeddings)
    if U.shape[0] < 2:
        raise ValueError("spectral_cluster needs at least 2 embeddings")
    A = refine_affinity(cosine_affinity(U), p)
    k = eigengap_count(A, k_max, normalized)
    vals, vecs = affinity_spectrum(A, normalized)
    if k == 1:
        labels = np.zeros(U.shape[0], dtype=np.int64)
    else:
        V = vecs[:, :k]
        V = V / np.maximum(np.linalg.norm(V, axis=1, keepdims=True), 1e-12)
        labels, _ = kmeans(V, k, seed=seed, restarts=restarts)
    k = int(labels.max()) + 1
    centroids = np.stack([U[labels == j].mean(axis=0) for j in range(k)])
    return ClusterResult(labels, k, vals, centroids)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 - float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))


def assign_segments(segment_ids: Sequence, window_segment_ids: Sequence, embeddings,
                    result: ClusterResult) -> dict:
    """Cluster label per segment: the centroid nearest (cosine) to the mean window embedding."""
    U = _unit_rows(embeddings)
    owners = np.asarray(window_segment_ids, dtype=object)
    cnorm = result.centroids / np.linalg.norm(result.centroids, axis=1, keepdims=True)
    labels = {}
    for sid in segment_ids:
        mask = owners == sid
        if not mask.any():
            raise ValueError(f"segment {sid!r} has no window embeddings")
        mean = U[mask].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            labels[sid] = 0
            continue
        dist = 1.0 - cnorm @ (mean / norm)
        labels[sid] = int(np.argmin(dist))  # first minimum = lowest id on ties
    return labels


def dump_matrix(A: AffinityMatrix | np.ndarray) -> str:
    M = np.asarray(A.values if isinstance(A, AffinityMatrix) else A)
    return "".join(" ".join(f"{v:.6f}" for v in row) + "\n" for row in M)
