"""Session-batched training of the refiner, k-fold splits, threshold tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evaluation import best_threshold, count_error_sweep
from .graph import build_session_graph, pairwise_cosine, propagation_matrix
from .losses import AdamState, DegenerateSessionError, LossConfig, adam_step, backward, session_loss
from .refiner import ConfigError, RefinerModel, forward, init_model, save_model

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    lr_drop_epoch: int = 40
    lr_drop_factor: float = 10.0
    folds: int = 5
    edge_threshold: float = 0.2
    loss: LossConfig = field(default_factory=LossConfig)
    dims: tuple = (128, 128, 128)
    scorer: str = "cosine"
    fc_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs and not 1 <= self.lr_drop_epoch <= self.epochs:
            raise ConfigError("lr_drop_epoch must lie in [1, epochs]")
        if not self.lr_drop_factor > 0:
            raise ConfigError("lr_drop_factor must be positive")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        if self.loss.kind == "bce" and self.scorer != "fc":
            raise ConfigError("BCE loss needs the FC scorer (cosine scores are not probabilities)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr / self.lr_drop_factor if epoch > self.lr_drop_epoch else self.lr


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    epoch_lrs: list = field(default_factory=list)
    skipped_sessions: int = 0
    checksum: str = ""

    def to_csv(self) -> str:
        rows = ["epoch,lr,mean_loss"]
        for i, (lr, loss) in enumerate(zip(self.epoch_lrs, self.epoch_losses), 1):
            rows.append(f"{i},{lr:.6g},{loss:.10f}")
        return "\n".join(rows) + "\n"


def _unpack(session):
    """Accept a SimulatedSession or an (embeddings, adjacency) pair."""
    if hasattr(session, "embeddings"):
        return session.embeddings.values, session.adjacency
    x, a_gt = session
    return np.asarray(getattr(x, "values", x)), np.asarray(a_gt, dtype=np.float64)


def session_step_inputs(x, edge_threshold):
    g = build_session_graph(x, pairwise_cosine(x), edge_threshold)
    return propagation_matrix(g)


def train(
    sessions: Sequence,
    cfg: TrainConfig = TrainConfig(),
    model: Optional[RefinerModel] = None,
    checkpoint_dir=None,
):
    """Adam over one session per step; returns (model, report).

    Sessions whose loss is undefined (a single speaker under the histogram
    loss) are skipped and counted once in ``report.skipped_sessions``.
    """
    if not sessions:
        raise TrainingError("no training sessions")
    if model is None:
        model = init_model(cfg.dims, cfg.scorer, seed=cfg.seed, fc_hidden=cfg.fc_hidden)
    state = AdamState()
    report = TrainReport()
    degenerate = set()
    for i, sess in enumerate(sessions):
        x, a_gt = _unpack(sess)
        if x.shape[1] != model.in_dim:
            raise ConfigError(f"session {i} has dim {x.shape[1]}, model expects {model.in_dim}")
        if cfg.loss.kind == "hist_plus_nuclear":
            off = a_gt[np.triu_indices(a_gt.shape[0], 1)]
            if off.size == 0 or off.min() == off.max():
                degenerate.add(i)
        elif a_gt.shape[0] < 2:
            degenerate.add(i)
    report.skipped_sessions = len(degenerate)
    if len(degenerate) == len(sessions):
        raise TrainingError("every training session is degenerate")

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(sessions))
        losses = []
        for idx in order:
            if idx in degenerate:
                continue
            x, a_gt = _unpack(sessions[idx])
            lap = session_step_inputs(x, cfg.edge_threshold)
            fp = forward(model, lap, x)
            try:
                loss, d_a = session_loss(fp.affinity, a_gt, cfg.loss)
            except DegenerateSessionError:
                continue
            grads = backward(model, fp, d_a)
            model = adam_step(model, grads, lr, state)
            losses.append(loss)
        mean = float(np.mean(losses))
        report.epoch_losses.append(mean)
        report.epoch_lrs.append(lr)
        log.info("epoch %d lr %.2g loss %.6f", epoch, lr, mean)
        if checkpoint_dir is not None:
            save_model(model, Path(checkpoint_dir) / f"epoch{epoch:03d}.gnn")
    report.checksum = model.checksum()
    return model, report


def kfold_split(sessions, folds: int = 5, seed: int = 0):
    """Seeded partition into ``folds`` test sets; sizes differ by at most one."""
    n = sessions if isinstance(sessions, (int, np.integer)) else len(sessions)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if n < folds:
        raise ConfigError(f"{n} sessions cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    out = []
    for test in np.array_split(perm, folds):
        test = np.sort(test)
        train_idx = np.setdiff1d(np.arange(n), test)
        out.append((train_idx, test))
    return out


def validation_split(train_idx, fraction: float = 0.1, seed: int = 0):
    """Carve a deterministic validation subset out of training indices."""
    train_idx = np.asarray(train_idx)
    n_val = max(1, int(round(fraction * train_idx.size))) if train_idx.size > 1 else 0
    perm = np.random.default_rng(seed).permutation(train_idx.size)
    val = np.sort(train_idx[perm[:n_val]])
    rest = np.sort(train_idx[perm[n_val:]])
    return rest, val


def tune_count_threshold(model: Optional[RefinerModel], sessions, candidates, edge_threshold: float = 0.2) -> float:
    """Candidate threshold with the lowest mean |k_hat - k|; ties go to the smaller one."""
    candidates = list(candidates)
    if not candidates or not len(sessions):
        raise ValueError("need candidates and sessions")
    if len(candidates) == 1:
        return float(candidates[0])
    errors = count_error_sweep(sessions, model, candidates, edge_threshold)
    return best_threshold(candidates, errors)
