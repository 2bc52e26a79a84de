"""Speaker counting and normalized spectral clustering on affinity matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .embedding_io import DiarizationHypothesis
from .graph import DEFAULT_EDGE_THRESHOLD, build_session_graph, pairwise_cosine, propagation_matrix
from .refiner import ConfigError, RefinerModel, forward

COUNT_METHODS = ("threshold", "eigengap")
MAX_EIGENGAP_K = 20
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


@dataclass(frozen=True)
class DiarizeConfig:
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD
    count_method: str = "threshold"
    count_threshold: float = 2.0
    max_k: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.count_method not in COUNT_METHODS:
            raise ConfigError(f"unknown count method {self.count_method!r}")
        if self.count_method == "threshold" and not self.count_threshold > 0:
            raise ConfigError("count threshold must be positive")


def sanitize_affinity(A) -> np.ndarray:
    """Clamp negatives to zero and put ones on the diagonal."""
    a = np.array(A, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("affinity must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-9):
        raise ValueError("affinity must be symmetric")
    a = 0.5 * (a + a.T)
    np.maximum(a, 0.0, out=a)
    np.fill_diagonal(a, 1.0)
    return a


def affinity_eigenvalues(S) -> np.ndarray:
    """Eigenvalues of a symmetric affinity, descending."""
    try:
        return np.linalg.eigvalsh(np.asarray(S, dtype=np.float64))[::-1]
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"eigendecomposition failed: {exc}") from None


def count_from_eigenvalues(eigvals, tau: float) -> int:
    return max(1, int(np.count_nonzero(np.asarray(eigvals) > tau)))


def count_speakers_threshold(S, tau: float) -> int:
    if not tau > 0:
        raise ValueError("tau must be positive")
    return count_from_eigenvalues(affinity_eigenvalues(S), tau)


def default_max_k(n: int) -> int:
    return max(1, min(n - 1, MAX_EIGENGAP_K))


def eigengap_from_eigenvalues(eigvals, max_k: int) -> int:
    lam = np.asarray(eigvals)
    if lam.size < 2:
        return 1
    max_k = min(max_k, lam.size - 1)
    gaps = lam[:max_k] - lam[1 : max_k + 1]
    return int(np.argmax(gaps)) + 1


def count_speakers_eigengap(S, max_k: Optional[int] = None) -> int:
    n = np.shape(S)[0]
    if max_k is None:
        max_k = default_max_k(n)
    if n > 1 and max_k >= n:
        raise ValueError(f"max_k must be below N={n}")
    return eigengap_from_eigenvalues(affinity_eigenvalues(S), max_k)


def _farthest_point_init(points, k, rng):
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL):
    """Single Lloyd run from greedy farthest-point seeds. Returns (labels, centers, inertia)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    centers = _farthest_point_init(pts, k, np.random.default_rng(seed))
    return _kernels.active.kmeans_lloyd(pts, centers, max_iter, tol)


def _dense_labels(labels):
    _, inv = np.unique(labels, return_inverse=True)
    # relabel by first appearance so output does not depend on center order
    order = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, v in enumerate(inv):
        out[i] = order.setdefault(int(v), len(order))
    return out


def spectral_embedding(S, k: int) -> np.ndarray:
    s = np.asarray(S, dtype=np.float64)
    deg = s.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    lap = np.eye(s.shape[0]) - inv_sqrt[:, None] * s * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = np.linalg.eigh(lap)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    return emb / np.where(norms > 0, norms, 1.0)


def spectral_cluster(S, k: int, seed: int = 0) -> DiarizationHypothesis:
    n = np.shape(S)[0]
    if not 1 <= k <= max(n, 1):
        raise ConfigError(f"cannot form {k} clusters from {n} nodes")
    if k == 1:
        return DiarizationHypothesis(np.zeros(n, dtype=np.int64), 1)
    labels, _, _ = kmeans(spectral_embedding(S, k), k, seed)
    dense = _dense_labels(labels)
    return DiarizationHypothesis(dense, int(dense.max()) + 1)


def session_affinity(X, model: Optional[RefinerModel] = None, edge_threshold: float = DEFAULT_EDGE_THRESHOLD):
    """Raw affinity for one session: cosine of original embeddings, or the refiner's scores."""
    cos = pairwise_cosine(X)
    if model is None:
        return cos
    g = build_session_graph(X, cos, edge_threshold)
    return forward(model, propagation_matrix(g), X).affinity


def estimate_count(eigvals, n: int, cfg: DiarizeConfig) -> int:
    if cfg.count_method == "threshold":
        k = count_from_eigenvalues(eigvals, cfg.count_threshold)
    else:
        k = eigengap_from_eigenvalues(eigvals, cfg.max_k or default_max_k(n))
    return min(k, n)


def diarize_affinity(S, cfg: DiarizeConfig = DiarizeConfig(), eigvals=None):
    """Count then cluster a sanitized affinity. Returns (hypothesis, estimated count)."""
    n = np.shape(S)[0]
    if n <= 1:
        return DiarizationHypothesis(np.zeros(n, dtype=np.int64), n), n
    if eigvals is None:
        eigvals = affinity_eigenvalues(S)
    k = estimate_count(eigvals, n, cfg)
    return spectral_cluster(S, k, cfg.seed), k


def diarize(X, model: Optional[RefinerModel] = None, cfg: DiarizeConfig = DiarizeConfig()) -> DiarizationHypothesis:
    """Embeddings -> (optional refinement) -> affinity -> count -> spectral clustering."""
    x = np.asarray(getattr(X, "values", X))
    if x.shape[0] <= 1:
        return diarize_affinity(np.ones((x.shape[0], x.shape[0])), cfg)[0]
    s = sanitize_affinity(session_affinity(x, model, cfg.edge_threshold))
    return diarize_affinity(s, cfg)[0]
