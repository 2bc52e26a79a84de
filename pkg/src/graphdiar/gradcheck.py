"""Finite-difference check of the full refine -> score -> loss pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding_io import adjacency_from_labels
from .graph import build_session_graph, pairwise_cosine, propagation_matrix
from .losses import LossConfig, backward, histogram_piece, numeric_gradient, relative_error, session_loss
from .refiner import forward, init_model

# (scorer, loss kind) combinations the reverse pass supports
CASES = (("cosine", "hist_plus_nuclear"), ("fc", "bce"), ("fc", "hist_plus_nuclear"))


@dataclass
class GradcheckResult:
    seed: int
    scorer: str
    loss_kind: str
    n: int
    dim: int
    max_rel_error: dict  # parameter name -> max elementwise relative error

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def random_instance(seed: int, max_n: int = 12, max_dim: int = 8):
    """Small clustered session: (X, labels, L) with at least two speakers."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, max_n + 1))
    dim = int(rng.integers(3, max_dim + 1))
    k = int(rng.integers(2, min(4, n // 2) + 1))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(labels)
    centers = rng.standard_normal((k, dim))
    x = centers[labels] + 0.6 * rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    g = build_session_graph(x, pairwise_cosine(x), 0.2)
    return x, labels, propagation_matrix(g)


def check_instance(seed: int, scorer: str, loss_kind: str, h: float = 1e-5, fc_hidden: int = 6):
    x, labels, lap = random_instance(seed)
    dim = x.shape[1]
    a_gt = adjacency_from_labels(labels)
    rng = np.random.default_rng(seed + 10_000)
    hidden = int(rng.integers(2, dim + 3))
    out = int(rng.integers(2, dim + 1))
    model = init_model([dim, hidden, out], scorer, seed=seed, fc_hidden=fc_hidden)
    cfg = LossConfig(kind=loss_kind, alpha=0.01 if loss_kind == "hist_plus_nuclear" else 0.0)

    fp = forward(model, lap, x)
    _, d_a = session_loss(fp.affinity, a_gt, cfg)
    analytic = backward(model, fp, d_a)

    params = model.params()
    errors = {}
    for name, value in params.items():

        def with_value(v, name=name):
            return model.with_params({**params, name: v})

        def f(v):
            return session_loss(forward(with_value(v), lap, x).affinity, a_gt, cfg)[0]

        piece = None
        if loss_kind == "hist_plus_nuclear":

            def piece(v):
                return histogram_piece(forward(with_value(v), lap, x).affinity, cfg)

        numeric = numeric_gradient(f, value, h=h, piece=piece)
        errors[name] = float(relative_error(analytic[name], numeric).max())
    return GradcheckResult(seed, scorer, loss_kind, x.shape[0], dim, errors)


def run_suite(n_instances: int = 20, seed: int = 0, cases=CASES):
    results = []
    for i in range(n_instances):
        for scorer, kind in cases:
            results.append(check_instance(seed + i, scorer, kind))
    return results
