import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdiar.embedding_io import adjacency_from_labels
from graphdiar.gradcheck import check_instance
from graphdiar.losses import (
    AdamState,
    DegenerateSessionError,
    LossConfig,
    adam_step,
    backward,
    bce_pairwise_loss,
    combined_loss,
    histogram_loss,
    histogram_piece,
    nuclear_norm_loss,
    numeric_gradient,
    relative_error,
)
from graphdiar.refiner import RefinerModel, UsageError, forward, identity_model, init_model

HIST = LossConfig()

from oracles import brute_histogram_loss, tri_weight


def sym_from_upper(n, rng, lo=-1.0, hi=1.0):
    a = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    a[iu] = rng.uniform(lo, hi, len(iu[0]))
    a = a + a.T
    np.fill_diagonal(a, 1.0)
    return a






# --- BCE ----------------------------------------------------------------------


def test_bce_perfect_and_uninformative():
    a_gt = adjacency_from_labels([0, 0, 1, 1, 2])
    loss, _ = bce_pairwise_loss(a_gt.copy(), a_gt)
    assert loss < 1e-6
    loss, _ = bce_pairwise_loss(np.full((5, 5), 0.5), a_gt)
    assert loss == pytest.approx(np.log(2), rel=1e-12)


def test_bce_gradient_fd():
    rng = np.random.default_rng(0)
    s = rng.uniform(0.05, 0.95, (5, 5))
    a_gt = adjacency_from_labels([0, 1, 0, 2, 1])
    _, g = bce_pairwise_loss(s, a_gt)
    num = numeric_gradient(lambda v: bce_pairwise_loss(v, a_gt)[0], s)
    assert relative_error(g, num).max() < 1e-6


# --- histogram loss ------------------------------------------------------------


def test_histogram_perfect_separation():
    a_gt = adjacency_from_labels([0, 0, 0, 1, 1])
    a = np.where(a_gt > 0, 1.0, -1.0)
    loss, _ = histogram_loss(a, a_gt, HIST)
    assert loss == 0.0


def test_histogram_degenerate_sessions():
    with pytest.raises(DegenerateSessionError):
        histogram_loss(np.ones((3, 3)), np.ones((3, 3)))
    with pytest.raises(DegenerateSessionError):
        histogram_loss(np.eye(3), np.eye(3))


def test_histogram_identical_multisets_matches_double_sum():
    # two speakers of 3 -> 6 positive pairs; 9 negative pairs; give both the same multiset
    labels = [0, 0, 0, 1, 1, 1]
    a_gt = adjacency_from_labels(labels)
    rng = np.random.default_rng(1)
    pos_vals = rng.uniform(-0.5, 0.8, 3)
    pool = np.concatenate([pos_vals, pos_vals, pos_vals])  # 9 values for negatives
    a = np.eye(6)
    iu = [(i, j) for i in range(6) for j in range(i + 1, 6)]
    pos_pairs = [p for p in iu if a_gt[p]]
    neg_pairs = [p for p in iu if not a_gt[p]]
    for p, v in zip(pos_pairs, np.concatenate([pos_vals, pos_vals])):
        a[p] = a[p[::-1]] = v
    for p, v in zip(neg_pairs, pool):
        a[p] = a[p[::-1]] = v
    cfg = LossConfig(bins=20)
    loss, _ = histogram_loss(a, a_gt, cfg)
    # single-histogram form: sum_r h_r * cumsum(h)_r
    lo, step = cfg.bin_range[0], cfg.bin_step
    h = np.array([sum(tri_weight(v, r, lo, step) for v in pos_vals) for r in range(cfg.bins)]) / 3
    assert loss == pytest.approx(float(h @ np.cumsum(h)), abs=1e-14)
    assert loss == pytest.approx(brute_histogram_loss(a, a_gt, cfg), abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_histogram_matches_double_sum_random(seed):
    rng = np.random.default_rng(seed)
    a_gt = adjacency_from_labels(rng.integers(0, 3, 7))
    if a_gt[np.triu_indices(7, 1)].min() == a_gt[np.triu_indices(7, 1)].max():
        a_gt = adjacency_from_labels([0, 1, 0, 1, 2, 2, 0])
    a = sym_from_upper(7, rng)
    cfg = LossConfig(bins=150)
    assert histogram_loss(a, a_gt, cfg)[0] == pytest.approx(brute_histogram_loss(a, a_gt, cfg), abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_histogram_gradient_fd(seed):
    rng = np.random.default_rng(seed + 20)
    # a narrow score range so positive and negative pairs share bins
    a = sym_from_upper(6, rng, 0.3, 0.4)
    a_gt = adjacency_from_labels([0, 0, 1, 1, 2, 0])
    _, g = histogram_loss(a, a_gt, HIST)
    num = numeric_gradient(
        lambda v: histogram_loss(v, a_gt, HIST)[0], a, piece=lambda v: histogram_piece(v, HIST)
    )
    # entries with zero true gradient only see roundoff from the differences
    live = np.maximum(np.abs(g), np.abs(num)) > 1e-9
    assert live.sum() >= 5
    assert relative_error(g[live], num[live]).max() < 1e-5
    assert np.abs(num[~live]).max(initial=0.0) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 12))
def test_histogram_range_and_invariances(seed, n):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([[0, 0, 1], rng.integers(0, 4, n - 3)])
    a_gt = adjacency_from_labels(labels)
    a = sym_from_upper(n, rng)
    loss, _ = histogram_loss(a, a_gt, HIST)
    assert 0.0 <= loss <= 1.0
    perm = rng.permutation(n)
    loss_p, _ = histogram_loss(a[np.ix_(perm, perm)], adjacency_from_labels(labels[perm]), HIST)
    assert loss_p == pytest.approx(loss, abs=1e-12)
    relabeled = (labels * 7 + 3) % 11
    assert histogram_loss(a, adjacency_from_labels(relabeled), HIST)[0] == loss


# --- nuclear norm ----------------------------------------------------------------


def test_nuclear_examples():
    a_gt = adjacency_from_labels([0, 1, 1, 0])
    loss, _ = nuclear_norm_loss(a_gt, a_gt)
    assert loss == 0.0
    for n in (1, 4, 9):
        loss, g = nuclear_norm_loss(np.eye(n) + np.zeros((n, n)), np.zeros((n, n)))
        assert loss == n
        assert np.allclose(g, np.eye(n))


def test_nuclear_gradient_fd():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 5))
    a_gt = adjacency_from_labels([0, 0, 1, 2, 2])
    sv = np.linalg.svd(a - a_gt, compute_uv=False)
    assert np.min(np.diff(sv[::-1])) > 1e-3
    _, g = nuclear_norm_loss(a, a_gt)
    num = numeric_gradient(lambda v: nuclear_norm_loss(v, a_gt)[0], a)
    assert relative_error(g, num).max() < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 10))
def test_nuclear_dominates_frobenius(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (n, n))
    a_gt = adjacency_from_labels(rng.integers(0, 3, n))
    loss, _ = nuclear_norm_loss(a, a_gt)
    assert loss >= np.linalg.norm(a - a_gt) - 1e-12


# --- combined ----------------------------------------------------------------------


def test_combined_examples():
    rng = np.random.default_rng(3)
    a_gt = adjacency_from_labels([0, 0, 1, 1, 2, 2, 0])
    a = sym_from_upper(7, rng)
    h, gh = histogram_loss(a, a_gt, HIST)
    c, gc = combined_loss(a, a_gt, LossConfig(alpha=0.0))
    assert c == h and np.array_equal(gc, gh)
    nuc, gn = nuclear_norm_loss(a, a_gt)
    c, gc = combined_loss(a, a_gt, LossConfig(alpha=0.01))
    assert c == pytest.approx(h + 0.01 * nuc, abs=1e-15)
    assert np.allclose(gc, gh + 0.01 * gn)
    sep = np.where(a_gt > 0, 1.0, -1.0)
    # separated similarities but A != A_gt off-block, so only alpha=0 is exactly 0
    assert combined_loss(sep, a_gt, LossConfig(alpha=0.0))[0] == 0.0
    assert combined_loss(a_gt, a_gt, LossConfig(alpha=0.01, bin_range=(0.0, 1.0)))[0] == 0.0


# --- backward ------------------------------------------------------------------------


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    for scorer in ("cosine", "fc"):
        m = init_model([3, 4, 2], scorer, seed=0, fc_hidden=3)
        fp = forward(m, np.eye(5), x)
        grads = backward(m, fp, np.zeros((5, 5)))
        assert set(grads) == set(m.params())
        assert all(not g.any() for g in grads.values())
        assert all(grads[k].shape == v.shape for k, v in m.params().items())


def test_stale_cache_rejected():
    m = init_model([3, 3, 3], seed=0)
    fp = forward(m, np.eye(4), np.random.default_rng(0).standard_normal((4, 3)))
    m2 = init_model([3, 3, 3], seed=1)
    with pytest.raises(UsageError):
        backward(m2, fp, np.zeros((4, 4)))


def test_identity_two_node_closed_form():
    x = np.array([[1.0, 0.0], [1.0, 1.0]])
    m = identity_model(2)
    fp = forward(m, np.eye(2), x)
    g_up = np.array([[0.0, 1.0], [0.0, 0.0]])
    grads = backward(m, fp, g_up)
    expected = np.array([[1.0, 1.0], [1.0, -1.0]]) / (2 * np.sqrt(2))
    assert np.allclose(grads["gcn.0"], expected, atol=1e-15)
    assert np.allclose(grads["gcn.1"], expected, atol=1e-15)


@pytest.mark.parametrize("scorer,kind", [("cosine", "hist_plus_nuclear"), ("fc", "bce"), ("fc", "hist_plus_nuclear")])
def test_pipeline_gradients_fd(scorer, kind):
    for seed in (101, 102):
        res = check_instance(seed, scorer, kind)
        assert res.worst < 1e-4, res


# --- Adam ------------------------------------------------------------------------------


def test_adam_zero_grad_no_change():
    m = init_model([3, 3, 3], "fc", seed=0, fc_hidden=2)
    zeros = {k: np.zeros_like(v) for k, v in m.params().items()}
    state = AdamState()
    m2 = adam_step(m, zeros, 0.001, state)
    for k, v in m.params().items():
        assert np.array_equal(m2.params()[k], v)


def test_adam_single_step():
    m = RefinerModel((np.array([[0.5]]),))
    m2 = adam_step(m, {"gcn.0": np.array([[1.0]])}, 0.001, AdamState())
    assert m2.gcn_weights[0][0, 0] == pytest.approx(0.5 - 0.001 / (1 + 1e-8), abs=1e-15)


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    grads_seq = [{"gcn.0": rng.standard_normal((2, 2))} for _ in range(5)]

    def run():
        m = RefinerModel((np.eye(2),))
        st_ = AdamState()
        for g in grads_seq:
            m = adam_step(m, g, 0.01, st_)
        return m.gcn_weights[0]

    assert np.array_equal(run(), run())


def test_brute_force_histogram_sanity():
    # oracle self-check on a hand case: one positive at 0.5, one negative at -0.5 -> no overlap
    a = np.array([[1, 0.5, -0.5], [0.5, 1, -0.5], [-0.5, -0.5, 1]])
    a_gt = adjacency_from_labels([0, 0, 1])
    cfg = LossConfig(bins=5)
    assert brute_histogram_loss(a, a_gt, cfg) == 0.0
    a2 = np.array([[1, -0.5, 0.5], [-0.5, 1, 0.5], [0.5, 0.5, 1]])
    assert brute_histogram_loss(a2, a_gt, cfg) == 1.0
    assert histogram_loss(a2, a_gt, cfg)[0] == 1.0


