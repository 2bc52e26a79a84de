"""Per-session affinity graphs and the GCN propagation matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EDGE_THRESHOLD = 0.2


class DegenerateInputError(ValueError):
    pass


def _as_array(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def pairwise_cosine(X) -> np.ndarray:
    """Cosine similarity between all rows of ``X``.

    ``X`` may be an :class:`EmbeddingMatrix` or a plain array. Raises
    :class:`DegenerateInputError` naming the first zero-norm row.
    """
    x = _as_array(X)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"row {int(zero[0])} has zero norm")
    xn = x / norms[:, None]
    sim = xn @ xn.T
    sim = 0.5 * (sim + sim.T)
    np.clip(sim, -1.0, 1.0, out=sim)
    np.fill_diagonal(sim, 1.0)
    return sim


@dataclass(frozen=True, eq=False)
class SessionGraph:
    features: np.ndarray
    affinity: np.ndarray
    edge_threshold: float

    @property
    def n(self) -> int:
        return self.affinity.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.affinity, 1)))


def build_session_graph(X, scores, threshold: float = DEFAULT_EDGE_THRESHOLD) -> SessionGraph:
    """Keep off-diagonal edges whose score is strictly above ``threshold``."""
    if not threshold >= 0:
        raise ValueError(f"edge threshold must be nonnegative, got {threshold}")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("scores must be a square matrix")
    s = 0.5 * (s + s.T)
    a = np.where(s > threshold, s, 0.0)
    np.fill_diagonal(a, 0.0)
    return SessionGraph(_as_array(X), a, float(threshold))


def propagation_matrix(g) -> np.ndarray:
    """Symmetric self-loop normalization D^-1/2 (A + I) D^-1/2."""
    a = g.affinity if isinstance(g, SessionGraph) else np.asarray(g, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    lap = inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)
