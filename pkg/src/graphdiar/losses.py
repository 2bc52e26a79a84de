"""Pairwise losses with analytic gradients, reverse pass, Adam, and gradcheck.

All pairwise terms read only the strict upper triangle (i < j) of the affinity
matrix, so their gradients are upper-triangular. The nuclear-norm term reads the
full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .refiner import ForwardPass, RefinerModel, UsageError

LOSS_KINDS = ("bce", "hist_plus_nuclear")
BCE_EPS = 1e-7


class DegenerateSessionError(ValueError):
    """Session has no positive or no negative pairs, so the histogram loss is undefined."""


@dataclass(frozen=True)
class LossConfig:
    kind: str = "hist_plus_nuclear"
    alpha: float = 0.01
    bins: int = 150
    bin_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.bins < 2:
            raise ValueError("need at least 2 histogram bins")
        lo, hi = self.bin_range
        if not lo < hi:
            raise ValueError("bin_range must satisfy lo < hi")

    @property
    def bin_step(self) -> float:
        lo, hi = self.bin_range
        return (hi - lo) / (self.bins - 1)


def _upper(n):
    return np.triu_indices(n, 1)


def bce_pairwise_loss(S, A_gt, eps: float = BCE_EPS):
    """Mean binary cross-entropy over unordered pairs i < j."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    grad = np.zeros_like(S)
    if n < 2:
        return 0.0, grad
    iu = _upper(n)
    s_raw = S[iu]
    s = np.clip(s_raw, eps, 1.0 - eps)
    a = np.asarray(A_gt, dtype=np.float64)[iu]
    m = s.size
    loss = -np.mean(a * np.log(s) + (1.0 - a) * np.log1p(-s))
    g = (s - a) / (s * (1.0 - s)) / m
    g[(s_raw < eps) | (s_raw > 1.0 - eps)] = 0.0
    grad[iu] = g
    return float(loss), grad


def _split_pairs(A, A_gt):
    A = np.asarray(A, dtype=np.float64)
    iu = _upper(A.shape[0])
    sims = A[iu]
    pos = np.asarray(A_gt)[iu] > 0.5
    if not pos.any() or pos.all():
        raise DegenerateSessionError(
            "histogram loss needs both same-speaker and different-speaker pairs"
        )
    return iu, sims, pos


def histogram_loss(A, A_gt, cfg: LossConfig = LossConfig()):
    """Soft-binned probability that a different-speaker pair outscores a same-speaker pair."""
    kern = _kernels.active
    A = np.asarray(A, dtype=np.float64)
    lo = float(cfg.bin_range[0])
    step = cfg.bin_step
    iu, sims, pos = _split_pairs(A, A_gt)
    sp, sn = np.ascontiguousarray(sims[pos]), np.ascontiguousarray(sims[~pos])
    h_pos = kern.soft_histogram(sp, lo, step, cfg.bins) / sp.size
    h_neg = kern.soft_histogram(sn, lo, step, cfg.bins) / sn.size
    cdf_pos = np.cumsum(h_pos)
    loss = float(h_neg @ cdf_pos)

    # d loss / d h_neg[r] = cdf_pos[r]; d loss / d h_pos[q] = sum_{r >= q} h_neg[r]
    g_neg = cdf_pos / sn.size
    g_pos = np.cumsum(h_neg[::-1])[::-1] / sp.size
    g_sims = np.empty_like(sims)
    g_sims[pos] = kern.soft_histogram_grad(sp, g_pos, lo, step, cfg.bins)
    g_sims[~pos] = kern.soft_histogram_grad(sn, g_neg, lo, step, cfg.bins)
    grad = np.zeros_like(A)
    grad[iu] = g_sims
    return loss, grad


def histogram_piece(A, cfg: LossConfig = LossConfig()):
    """Bin-interval index of every pair; the loss is smooth while this is constant."""
    A = np.asarray(A, dtype=np.float64)
    pos = (A[_upper(A.shape[0])] - cfg.bin_range[0]) / cfg.bin_step
    return tuple(np.floor(np.clip(pos, 0, cfg.bins - 1)).astype(np.int64))


def nuclear_norm_loss(A, A_gt):
    """Sum of singular values of A - A_gt, with subgradient U V^T."""
    diff = np.asarray(A, dtype=np.float64) - np.asarray(A_gt, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(diff)))) if diff.size else 1.0
    try:
        if diff.size and np.max(np.abs(diff - diff.T)) <= 1e-10 * scale:
            lam, q = np.linalg.eigh(0.5 * (diff + diff.T))
            return float(np.abs(lam).sum()), (q * np.sign(lam)) @ q.T
        u, sv, vt = np.linalg.svd(diff)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"SVD failed: {exc}") from None
    return float(sv.sum()), u @ vt


def combined_loss(A, A_gt, cfg: LossConfig = LossConfig()):
    hist, g_hist = histogram_loss(A, A_gt, cfg)
    if cfg.alpha == 0:
        return hist, g_hist
    nuc, g_nuc = nuclear_norm_loss(A, A_gt)
    return hist + cfg.alpha * nuc, g_hist + cfg.alpha * g_nuc


def session_loss(A, A_gt, cfg: LossConfig):
    if cfg.kind == "bce":
        return bce_pairwise_loss(A, A_gt)
    return combined_loss(A, A_gt, cfg)


# --- reverse pass ------------------------------------------------------------


def backward(model: RefinerModel, fp: ForwardPass, dA) -> dict:
    """Gradients of every model parameter given dL/dA for the cached pass."""
    if fp.model is not model or fp.affinity is None:
        raise UsageError("forward cache does not belong to this model state")
    G = np.array(dA, dtype=np.float64, copy=True)
    np.fill_diagonal(G, 0.0)
    grads = {}

    if model.scorer == "cosine":
        zn, norms = fp.scorer_cache["zn"], fp.scorer_cache["norms"]
        d_zn = (G + G.T) @ zn
        dz = (d_zn - zn * np.sum(zn * d_zn, axis=1, keepdims=True)) / norms[:, None]
    else:
        fc = model.fc
        ua, ub = fp.scorer_cache["ua"], fp.scorer_cache["ub"]
        ea, eb, dw, db = _kernels.active.fc_pair_backward(
            ua, ub, fc.b_hidden, fc.w_out, float(fc.b_out[0]), G
        )
        d = fp.z.shape[1]
        grads["fc.w_hidden"] = np.hstack([ea.T @ fp.z, eb.T @ fp.z])
        grads["fc.b_hidden"] = ea.sum(axis=0)
        grads["fc.w_out"] = np.asarray(dw)
        grads["fc.b_out"] = np.array([db])
        dz = ea @ fc.w_hidden[:, :d] + eb @ fc.w_hidden[:, d:]

    dh = dz
    for k in range(len(model.gcn_weights) - 1, -1, -1):
        w = model.gcn_weights[k]
        grads[f"gcn.{k}"] = dh.T @ fp.inputs[k]
        if k:
            dh = fp.L.T @ (dh @ w)
    return {name: grads[name] for name in model.params()}


# --- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(model: RefinerModel, grads: dict, lr: float, state: AdamState) -> RefinerModel:
    """One bias-corrected Adam update; returns the new model and advances ``state``."""
    state.step += 1
    t = state.step
    new = {}
    for name, p in model.params().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return model.with_params(new)


sgd_adam_step = adam_step


# --- finite differences -------------------------------------------------------


def relative_error(analytic, numeric, atol: float = 1e-7) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)


def numeric_gradient(
    f: Callable[[np.ndarray], float],
    x,
    h: float = 1e-5,
    piece: Optional[Callable[[np.ndarray], object]] = None,
    min_h: float = 1e-8,
) -> np.ndarray:
    """Central differences of a scalar function of an array.

    ``piece`` maps a point to an identifier of its smooth region. When a probe
    pair straddles a region boundary the step is shrunk, and if that is not
    enough a one-sided difference is taken on the side of ``x``.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    base_piece = piece(x) if piece is not None else None
    f0 = None
    for idx in np.ndindex(x.shape):
        step = h
        while True:
            xp = x.copy()
            xm = x.copy()
            xp[idx] += step
            xm[idx] -= step
            if piece is None:
                grad[idx] = (f(xp) - f(xm)) / (2 * step)
                break
            pp, pm = piece(xp), piece(xm)
            if pp == base_piece and pm == base_piece:
                grad[idx] = (f(xp) - f(xm)) / (2 * step)
                break
            if step / 10 >= min_h:
                step /= 10
                continue
            if f0 is None:
                f0 = f(x)
            if pp == base_piece:
                grad[idx] = (f(xp) - f0) / step
            else:
                grad[idx] = (f0 - f(xm)) / step
            break
    return grad
