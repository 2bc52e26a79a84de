"""Confusion-only DER, speaker-count error, and threshold sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import (
    DiarizeConfig,
    affinity_eigenvalues,
    count_from_eigenvalues,
    diarize_affinity,
    sanitize_affinity,
    session_affinity,
)
from .refiner import RefinerModel


def _contingency(ref, hyp, durations):
    ref = np.asarray(ref)
    hyp = np.asarray(hyp)
    ref_ids, r = np.unique(ref, return_inverse=True)
    hyp_ids, h = np.unique(hyp, return_inverse=True)
    table = np.zeros((hyp_ids.size, ref_ids.size))
    np.add.at(table, (h, r), durations)
    return table, ref_ids, hyp_ids


def optimal_label_mapping(ref: Sequence[int], hyp: Sequence[int], durations=None) -> dict:
    """Map each hypothesis label to a reference label (or ``None``), maximizing matched duration."""
    if len(ref) != len(hyp):
        raise ValueError(f"reference has {len(ref)} segments, hypothesis {len(hyp)}")
    if len(ref) == 0:
        return {}
    dur = np.ones(len(ref)) if durations is None else np.asarray(durations, dtype=np.float64)
    table, ref_ids, hyp_ids = _contingency(ref, hyp, dur)
    rows, cols = linear_sum_assignment(table, maximize=True)
    mapping = {int(h): None for h in hyp_ids}
    for r, c in zip(rows, cols):
        mapping[int(hyp_ids[r])] = int(ref_ids[c])
    return mapping


def confusion_der(ref: Sequence[int], hyp: Sequence[int], durations=None) -> float:
    """Fraction of total duration whose mapped hypothesis speaker is wrong."""
    if len(ref) != len(hyp):
        raise ValueError(f"reference has {len(ref)} segments, hypothesis {len(hyp)}")
    if len(ref) == 0:
        return 0.0
    dur = np.ones(len(ref)) if durations is None else np.asarray(durations, dtype=np.float64)
    if np.any(dur <= 0):
        raise ValueError("durations must be positive")
    mapping = optimal_label_mapping(ref, hyp, dur)
    mapped = np.array([mapping[int(h)] if mapping[int(h)] is not None else np.nan for h in hyp], dtype=float)
    wrong = ~(mapped == np.asarray(ref, dtype=float))
    return float(dur[wrong].sum() / dur.sum())


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    true_k: int
    est_k: int
    der: float
    duration: float


@dataclass
class EvalReport:
    records: list = field(default_factory=list)

    @property
    def der(self) -> float:
        total = sum(r.duration for r in self.records)
        if total == 0:
            return 0.0
        return float(sum(r.der * r.duration for r in self.records) / total)

    @property
    def count_error_mean(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([abs(r.est_k - r.true_k) for r in self.records]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session_id", "true_k", "est_k", "der", "duration"])
        for r in self.records:
            w.writerow([r.session_id, r.true_k, r.est_k, f"{r.der:.6f}", f"{r.duration:.3f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'session':<12} {'k':>4} {'k_hat':>6} {'DER':>8}"]
        for r in self.records:
            lines.append(f"{r.session_id:<12} {r.true_k:>4} {r.est_k:>6} {100 * r.der:>7.2f}%")
        lines.append(f"sessions: {len(self.records)}")
        lines.append(f"DER (confusion only): {100 * self.der:.2f}%")
        lines.append(f"mean |k_hat - k|: {self.count_error_mean:.3f}")
        return "\n".join(lines) + "\n"


def _spectra(sessions, model, edge_threshold):
    for sess in sessions:
        s = sanitize_affinity(session_affinity(sess.embeddings, model, edge_threshold))
        yield sess, s, affinity_eigenvalues(s)


def session_eigenvalues(sessions, model: Optional[RefinerModel] = None, edge_threshold: float = 0.2):
    return [lam for _, _, lam in _spectra(sessions, model, edge_threshold)]


def count_errors_from_spectra(spectra, true_counts, thresholds) -> np.ndarray:
    thresholds = np.asarray(thresholds, dtype=np.float64)
    err = np.zeros(thresholds.size)
    for lam, k in zip(spectra, true_counts):
        est = np.array([count_from_eigenvalues(lam, t) for t in thresholds])
        err += np.abs(est - k)
    return err / max(len(true_counts), 1)


def count_error_sweep(sessions, model: Optional[RefinerModel], thresholds, edge_threshold: float = 0.2) -> np.ndarray:
    """Mean |k_hat - k| across sessions for each eigenvalue threshold."""
    if not len(sessions) or not len(thresholds):
        raise ValueError("need at least one session and one threshold")
    spectra = session_eigenvalues(sessions, model, edge_threshold)
    return count_errors_from_spectra(spectra, [s.n_speakers for s in sessions], thresholds)


def sweep_table(thresholds, curves: dict) -> str:
    """CSV of (threshold, source, mean_error) rows, one block per embedding source."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "source", "mean_error"])
    for source, errs in curves.items():
        for t, e in zip(thresholds, errs):
            w.writerow([f"{t:.4f}", source, f"{e:.6f}"])
    return buf.getvalue()


def best_threshold(thresholds, errors) -> float:
    """Lowest-error threshold, ties toward the smaller threshold."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    errors = np.asarray(errors)
    best = np.flatnonzero(errors == errors.min())
    return float(thresholds[best].min())


def evaluate_corpus(sessions, model: Optional[RefinerModel] = None, cfg: DiarizeConfig = DiarizeConfig()) -> EvalReport:
    report = EvalReport()
    for sess, s, lam in _spectra(sessions, model, cfg.edge_threshold):
        emb = sess.embeddings
        hyp, k_est = diarize_affinity(s, cfg, lam)
        dur = emb.durations
        report.records.append(
            SessionRecord(sess.session_id, sess.n_speakers, int(k_est), confusion_der(sess.labels, hyp.labels, dur), float(dur.sum()))
        )
    return report


def evaluate_many(sessions, model: Optional[RefinerModel], configs: dict) -> dict:
    """Evaluate several clustering configs while computing each session's affinity once."""
    reports = {name: EvalReport() for name in configs}
    edge = {c.edge_threshold for c in configs.values()}
    if len(edge) != 1:
        return {name: evaluate_corpus(sessions, model, c) for name, c in configs.items()}
    for sess, s, lam in _spectra(sessions, model, edge.pop()):
        dur = sess.embeddings.durations
        for name, c in configs.items():
            hyp, k_est = diarize_affinity(s, c, lam)
            reports[name].records.append(
                SessionRecord(sess.session_id, sess.n_speakers, int(k_est), confusion_der(sess.labels, hyp.labels, dur), float(dur.sum()))
            )
    return reports
