"""Synthetic meeting sessions: unit-sphere speaker clusters with ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding_io import EmbeddingMatrix, SegmentMeta, adjacency_from_labels, load_embeddings, save_embeddings

MANIFEST_NAME = "manifest.tsv"
MAX_CENTROID_ATTEMPTS = 1000


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_sessions: int = 100
    speakers_range: tuple = (2, 15)
    segments_per_speaker_range: tuple = (2, 60)
    dim: int = 128
    segment_duration: float = 1.5
    within_speaker_concentration: float = 32.0
    max_centroid_cosine: float = 0.6
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.speakers_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad speakers_range {self.speakers_range}")
        lo, hi = self.segments_per_speaker_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad segments_per_speaker_range {self.segments_per_speaker_range}")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.n_sessions < 0:
            raise ValueError("n_sessions must be nonnegative")
        if not self.within_speaker_concentration > 0:
            raise ValueError("concentration must be positive")
        if not self.segment_duration > 0:
            raise ValueError("segment_duration must be positive")


@dataclass(frozen=True, eq=False)
class SimulatedSession:
    embeddings: EmbeddingMatrix
    labels: np.ndarray

    @property
    def adjacency(self) -> np.ndarray:
        return adjacency_from_labels(self.labels)

    @property
    def n_speakers(self) -> int:
        return len(np.unique(self.labels))

    @property
    def session_id(self) -> str:
        return self.embeddings.meta[0].session_id if self.embeddings.n else ""


def session_name(index: int) -> str:
    return f"sess{index:05d}"


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _draw_centroids(rng, k, dim, max_cos):
    accepted = []
    attempts = 0
    while len(accepted) < k:
        attempts += 1
        if attempts > MAX_CENTROID_ATTEMPTS:
            raise GenerationError(
                f"could not place {k} centroids in {dim} dims with pairwise cosine <= {max_cos}"
            )
        c = _unit(rng.standard_normal(dim))
        if accepted and np.max(np.asarray(accepted) @ c) > max_cos:
            continue
        accepted.append(c)
    return np.asarray(accepted)


def simulate_session(cfg: SimConfig, session_index: int) -> SimulatedSession:
    rng = np.random.default_rng([cfg.seed, session_index])
    k = int(rng.integers(cfg.speakers_range[0], cfg.speakers_range[1] + 1))
    centroids = _draw_centroids(rng, k, cfg.dim, cfg.max_centroid_cosine)
    counts = rng.integers(cfg.segments_per_speaker_range[0], cfg.segments_per_speaker_range[1] + 1, size=k)
    labels = np.repeat(np.arange(k), counts)
    rng.shuffle(labels)
    std = 1.0 / np.sqrt(cfg.within_speaker_concentration)
    noise = rng.standard_normal((labels.size, cfg.dim)) * std
    values = _unit(centroids[labels] + noise)
    sid = session_name(session_index)
    dur = cfg.segment_duration
    meta = tuple(SegmentMeta(sid, i * dur, dur, int(lab)) for i, lab in enumerate(labels))
    return SimulatedSession(EmbeddingMatrix(values, meta), labels)


def simulate_sessions(cfg: SimConfig, start: int = 0):
    return [simulate_session(cfg, i) for i in range(start, start + cfg.n_sessions)]


def simulate_corpus(cfg: SimConfig, out_dir) -> list:
    """Write ``cfg.n_sessions`` session files and a manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sessions = []
    lines = []
    for i in range(cfg.n_sessions):
        sess = simulate_session(cfg, i)
        name = f"{session_name(i)}.emb"
        save_embeddings(sess.embeddings, out / name)
        lines.append(f"{name}\t{sess.n_speakers}\t{sess.embeddings.n}\n")
        sessions.append(sess)
    (out / MANIFEST_NAME).write_text("".join(lines), encoding="utf-8")
    return sessions


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    n_speakers: int
    n_segments: int


def read_manifest(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        p = Path(parts[0])
        if not p.is_absolute():
            p = path.parent / p
        entries.append(ManifestEntry(p, int(parts[1]), int(parts[2])))
    return entries


def load_corpus(manifest) -> list:
    """Load every session in a manifest as :class:`SimulatedSession` (labels required)."""
    sessions = []
    for entry in read_manifest(manifest):
        emb = load_embeddings(entry.path)
        labels = emb.labels
        if labels is None:
            raise ValueError(f"{entry.path} lacks speaker labels")
        sessions.append(SimulatedSession(emb, labels))
    return sessions
