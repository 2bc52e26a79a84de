"""Hot inner loops, with a numba path and a pure-numpy path.

The backend is chosen once at import time. ``GRD_NUMBA=0`` forces the numpy
path; otherwise numba is used when it imports cleanly. Both paths are always
importable as ``numba_impl`` / ``numpy_impl`` so tests and the benchmark can
compare them directly.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover
    nb = None

_FC_CHUNK_ROWS = 32


def _want_numba():
    flag = os.environ.get("GRD_NUMBA", "1").strip().lower()
    return nb is not None and flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _bin_coords(values, lo, delta, n_bins):
    # position in units of bins, clipped to the node range
    pos = np.clip((values - lo) / delta, 0.0, n_bins - 1.0)
    left = np.minimum(np.floor(pos).astype(np.int64), n_bins - 2)
    frac = pos - left
    return left, frac


def soft_histogram_np(values, lo, delta, n_bins):
    left, frac = _bin_coords(values, lo, delta, n_bins)
    hist = np.bincount(left, weights=1.0 - frac, minlength=n_bins)
    hist += np.bincount(left + 1, weights=frac, minlength=n_bins)
    return hist[:n_bins]


def soft_histogram_grad_np(values, grad_hist, lo, delta, n_bins):
    left, _ = _bin_coords(values, lo, delta, n_bins)
    g = (grad_hist[left + 1] - grad_hist[left]) / delta
    inside = (values >= lo) & (values <= lo + delta * (n_bins - 1))
    return np.where(inside, g, 0.0)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fc_pair_matrix_np(ua, ub, b_h, w_out, b_out):
    n = ua.shape[0]
    out = np.empty((n, n))
    for r0 in range(0, n, _FC_CHUNK_ROWS):
        r1 = min(n, r0 + _FC_CHUNK_ROWS)
        pre = ua[r0:r1, None, :] + ub[None, :, :] + b_h
        out[r0:r1] = _sigmoid(_elu(pre) @ w_out + b_out)
    sym = 0.5 * (out + out.T)
    np.fill_diagonal(sym, 1.0)
    return sym


def fc_pair_backward_np(ua, ub, b_h, w_out, b_out, grad):
    n, hidden = ua.shape
    gsym = 0.5 * (grad + grad.T)
    np.fill_diagonal(gsym, 0.0)
    ea = np.zeros((n, hidden))
    eb = np.zeros((n, hidden))
    dw = np.zeros(hidden)
    db = 0.0
    for r0 in range(0, n, _FC_CHUNK_ROWS):
        r1 = min(n, r0 + _FC_CHUNK_ROWS)
        pre = ua[r0:r1, None, :] + ub[None, :, :] + b_h
        h = _elu(pre)
        s = _sigmoid(h @ w_out + b_out)
        dlogit = gsym[r0:r1] * s * (1.0 - s)
        dw += np.einsum("ij,ijh->h", dlogit, h)
        db += dlogit.sum()
        dpre = dlogit[:, :, None] * w_out * np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))
        ea[r0:r1] = dpre.sum(axis=1)
        eb += dpre.sum(axis=0)
    return ea, eb, dw, db


def kmeans_lloyd_np(points, centers, max_iter, tol):
    centers = centers.copy()
    k = centers.shape[0]
    prev = np.inf
    labels = np.zeros(points.shape[0], dtype=np.int64)
    inertia = 0.0
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        inertia = d2[np.arange(points.shape[0]), labels].sum()
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
        if np.isfinite(prev) and prev - inertia <= tol * max(prev, 1e-300):
            break
        prev = inertia
    return labels, centers, inertia


numpy_impl = SimpleNamespace(
    name="numpy",
    soft_histogram=soft_histogram_np,
    soft_histogram_grad=soft_histogram_grad_np,
    fc_pair_matrix=fc_pair_matrix_np,
    fc_pair_backward=fc_pair_backward_np,
    kmeans_lloyd=kmeans_lloyd_np,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

numba_impl = None

if nb is not None:

    @nb.njit(cache=True)
    def _bin_one(v, lo, delta, n_bins):
        pos = (v - lo) / delta
        if pos < 0.0:
            pos = 0.0
        elif pos > n_bins - 1.0:
            pos = n_bins - 1.0
        left = int(np.floor(pos))
        if left > n_bins - 2:
            left = n_bins - 2
        return left, pos - left

    @nb.njit(cache=True)
    def soft_histogram_nb(values, lo, delta, n_bins):
        hist = np.zeros(n_bins)
        for i in range(values.shape[0]):
            left, frac = _bin_one(values[i], lo, delta, n_bins)
            hist[left] += 1.0 - frac
            hist[left + 1] += frac
        return hist

    @nb.njit(cache=True)
    def soft_histogram_grad_nb(values, grad_hist, lo, delta, n_bins):
        out = np.zeros(values.shape[0])
        hi = lo + delta * (n_bins - 1)
        for i in range(values.shape[0]):
            v = values[i]
            if v < lo or v > hi:
                continue
            left, _ = _bin_one(v, lo, delta, n_bins)
            out[i] = (grad_hist[left + 1] - grad_hist[left]) / delta
        return out

    @nb.njit(cache=True)
    def _pair_logit(ua, ub, b_h, w_out, b_out, i, j, hbuf, prebuf):
        acc = b_out
        for h in range(ua.shape[1]):
            p = ua[i, h] + ub[j, h] + b_h[h]
            prebuf[h] = p
            e = p if p > 0.0 else np.expm1(p)
            hbuf[h] = e
            acc += w_out[h] * e
        return acc

    @nb.njit(cache=True)
    def _sig(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    @nb.njit(cache=True)
    def fc_pair_matrix_nb(ua, ub, b_h, w_out, b_out):
        n, hidden = ua.shape
        out = np.ones((n, n))
        hbuf = np.empty(hidden)
        prebuf = np.empty(hidden)
        for i in range(n):
            for j in range(i + 1, n):
                s_ij = _sig(_pair_logit(ua, ub, b_h, w_out, b_out, i, j, hbuf, prebuf))
                s_ji = _sig(_pair_logit(ua, ub, b_h, w_out, b_out, j, i, hbuf, prebuf))
                v = 0.5 * (s_ij + s_ji)
                out[i, j] = v
                out[j, i] = v
        return out

    @nb.njit(cache=True)
    def fc_pair_backward_nb(ua, ub, b_h, w_out, b_out, grad):
        n, hidden = ua.shape
        ea = np.zeros((n, hidden))
        eb = np.zeros((n, hidden))
        dw = np.zeros(hidden)
        db = 0.0
        hbuf = np.empty(hidden)
        prebuf = np.empty(hidden)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                g = 0.5 * (grad[i, j] + grad[j, i])
                if g == 0.0:
                    continue
                s = _sig(_pair_logit(ua, ub, b_h, w_out, b_out, i, j, hbuf, prebuf))
                dlogit = g * s * (1.0 - s)
                db += dlogit
                for h in range(hidden):
                    dw[h] += dlogit * hbuf[h]
                    p = prebuf[h]
                    dp = dlogit * w_out[h] * (1.0 if p > 0.0 else np.exp(p))
                    ea[i, h] += dp
                    eb[j, h] += dp
        return ea, eb, dw, db

    @nb.njit(cache=True)
    def kmeans_lloyd_nb(points, centers, max_iter, tol):
        centers = centers.copy()
        n, dim = points.shape
        k = centers.shape[0]
        labels = np.zeros(n, dtype=np.int64)
        prev = np.inf
        inertia = 0.0
        sums = np.zeros((k, dim))
        counts = np.zeros(k, dtype=np.int64)
        for _ in range(max_iter):
            inertia = 0.0
            for i in range(n):
                best = np.inf
                arg = 0
                for c in range(k):
                    d = 0.0
                    for t in range(dim):
                        diff = points[i, t] - centers[c, t]
                        d += diff * diff
                    if d < best:
                        best = d
                        arg = c
                labels[i] = arg
                inertia += best
            sums[:] = 0.0
            counts[:] = 0
            for i in range(n):
                counts[labels[i]] += 1
                for t in range(dim):
                    sums[labels[i], t] += points[i, t]
            for c in range(k):
                if counts[c] > 0:
                    for t in range(dim):
                        centers[c, t] = sums[c, t] / counts[c]
            if np.isfinite(prev) and prev - inertia <= tol * max(prev, 1e-300):
                break
            prev = inertia
        return labels, centers, inertia

    numba_impl = SimpleNamespace(
        name="numba",
        soft_histogram=soft_histogram_nb,
        soft_histogram_grad=soft_histogram_grad_nb,
        fc_pair_matrix=fc_pair_matrix_nb,
        fc_pair_backward=fc_pair_backward_nb,
        kmeans_lloyd=kmeans_lloyd_nb,
    )


active = numba_impl if _want_numba() else numpy_impl


def backend_name():
    return active.name
