import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdiar.graph import (
    DegenerateInputError,
    build_session_graph,
    pairwise_cosine,
    propagation_matrix,
)


def test_cosine_examples():
    assert np.allclose(pairwise_cosine([[1, 0], [1, 0]]), [[1, 1], [1, 1]])
    assert np.allclose(pairwise_cosine([[1, 0], [0, 1]]), np.eye(2))
    assert pairwise_cosine([[1, 0], [-1, 0]])[0, 1] == -1


def test_cosine_zero_row_named():
    with pytest.raises(DegenerateInputError, match="row 1"):
        pairwise_cosine([[1, 0], [0, 0]])


def test_cosine_matches_definition():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 5))
    c = pairwise_cosine(x)
    for i in range(7):
        for j in range(7):
            ref = x[i] @ x[j] / np.linalg.norm(x[i]) / np.linalg.norm(x[j])
            assert c[i, j] == pytest.approx(ref, abs=1e-12)
    assert np.array_equal(c, c.T)
    assert np.all(np.abs(c) <= 1)


def test_build_graph_examples():
    x = np.eye(2)
    g = build_session_graph(x, [[1, 0.5], [0.5, 1]], 0.2)
    assert g.affinity.tolist() == [[0, 0.5], [0.5, 0]]
    g = build_session_graph(x, [[1, 0.1], [0.1, 1]], 0.2)
    assert not g.affinity.any()
    s = np.array([[1, 0.2, 0.7], [0.2, 1, 0.9], [0.7, 0.9, 1]])
    a = build_session_graph(np.eye(3), s, 0.2).affinity
    assert a[0, 1] == 0 and a[0, 2] == 0.7 and a[1, 2] == 0.9


def test_build_graph_rejects_negative_threshold():
    with pytest.raises(ValueError):
        build_session_graph(np.eye(2), np.eye(2), -0.1)


def test_build_graph_symmetrizes_scores():
    s = np.array([[1, 0.9], [0.3, 1]])
    a = build_session_graph(np.eye(2), s, 0.2).affinity
    assert a[0, 1] == a[1, 0] == pytest.approx(0.6)


def test_propagation_examples():
    assert np.allclose(propagation_matrix(np.array([[0, 1], [1, 0]], float)), 0.5)
    assert np.allclose(propagation_matrix(np.zeros((3, 3))), np.eye(3))
    lap = propagation_matrix(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float))
    assert lap[2, 2] == 1 and lap[0, 1] == pytest.approx(0.5)
    assert lap[2, 0] == 0 and lap[2, 1] == 0


def _random_graph(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    return build_session_graph(x, pairwise_cosine(x), float(rng.uniform(0.0, 0.6)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 50))
def test_propagation_spectral_radius(seed, n):
    g = _random_graph(seed, n)
    lap = propagation_matrix(g)
    assert np.array_equal(lap, lap.T)
    lam = np.linalg.eigvalsh(lap)
    assert lam.min() >= -1 - 1e-12 and lam.max() <= 1 + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 20))
def test_graph_properties_and_permutation_equivariance(seed, n):
    g = _random_graph(seed, n)
    a = g.affinity
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    off = a[~np.eye(n, dtype=bool)]
    assert np.all((off == 0) | (off > g.edge_threshold))
    perm = np.random.default_rng(seed + 1).permutation(n)
    lap = propagation_matrix(g)
    lap_perm = propagation_matrix(a[np.ix_(perm, perm)])
    assert np.allclose(lap_perm, lap[np.ix_(perm, perm)], atol=1e-14)
