"""Embedding/label data model and the on-disk formats built on it."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EMB_MAGIC = b"SPKEMB1\n"
_HEADER = struct.Struct("<II")


class EmbeddingFormatError(ValueError):
    """Raised when an embedding file does not parse. Carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class SegmentMeta:
    session_id: str
    start: float
    duration: float
    speaker_label: Optional[int] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if self.start < 0:
            raise ValueError(f"segment start must be nonnegative, got {self.start}")
        if self.speaker_label is not None and self.speaker_label < 0:
            raise ValueError("speaker_label must be nonnegative")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """N x D embeddings plus one :class:`SegmentMeta` per row."""

    values: np.ndarray
    meta: tuple = field(default_factory=tuple)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValueError("embedding values must be a 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding values must be finite")
        meta = tuple(self.meta)
        if len(meta) != values.shape[0]:
            raise ValueError(f"{values.shape[0]} rows but {len(meta)} metadata entries")
        by_session: dict = {}
        for m in meta:
            last = by_session.get(m.session_id)
            if last is not None and m.start < last:
                raise ValueError(f"segments of session {m.session_id!r} are not in start order")
            by_session[m.session_id] = m.start
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "meta", meta)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def labels(self) -> Optional[np.ndarray]:
        if any(m.speaker_label is None for m in self.meta):
            return None
        return np.array([m.speaker_label for m in self.meta], dtype=np.int64)

    @property
    def durations(self) -> np.ndarray:
        return np.array([m.duration for m in self.meta], dtype=np.float64)

    @property
    def session_id(self) -> str:
        ids = {m.session_id for m in self.meta}
        if len(ids) != 1:
            raise ValueError(f"matrix spans {len(ids)} sessions")
        return ids.pop()

    def is_unit_norm(self, atol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.values, axis=1) - 1.0) <= atol))

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and self.meta == other.meta
        )


@dataclass(frozen=True, eq=False)
class DiarizationHypothesis:
    """Per-segment speaker labels and the speaker count they came from."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, DiarizationHypothesis):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)


def adjacency_from_labels(labels: Sequence[int]) -> np.ndarray:
    """Dense {0,1} same-speaker matrix for a label sequence."""
    y = np.asarray(labels)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("labels must be a nonempty 1-D sequence")
    return (y[:, None] == y[None, :]).astype(np.float64)


def save_embeddings(m: EmbeddingMatrix, path) -> None:
    path = Path(path)
    n, d = m.values.shape
    lines = []
    for meta in m.meta:
        label = -1 if meta.speaker_label is None else int(meta.speaker_label)
        lines.append(f"{meta.session_id}\t{meta.start!r}\t{meta.duration!r}\t{label}\n")
    payload = b"".join(
        [
            EMB_MAGIC,
            _HEADER.pack(n, d),
            np.ascontiguousarray(m.values, dtype="<f8").tobytes(),
            "".join(lines).encode("utf-8"),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(payload)


def load_embeddings(path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if data[: len(EMB_MAGIC)] != EMB_MAGIC:
        raise EmbeddingFormatError("bad magic string", 0)
    off = len(EMB_MAGIC)
    if len(data) < off + _HEADER.size:
        raise EmbeddingFormatError("truncated header", off)
    n, d = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if n > 0 and d == 0:
        raise EmbeddingFormatError("zero embedding dimension", off - 4)
    nbytes = 8 * n * d
    if len(data) < off + nbytes:
        raise EmbeddingFormatError(f"expected {n}x{d} float64 values, file too short", off)
    values = np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        raise EmbeddingFormatError("non-finite embedding value", off + 8 * int(bad[0]))
    off += nbytes

    meta = []
    text = data[off:]
    pos = 0
    for raw in text.splitlines(keepends=True):
        line_off = off + pos
        pos += len(raw)
        try:
            line = raw.decode("utf-8").rstrip("\n")
        except UnicodeDecodeError:
            raise EmbeddingFormatError("metadata is not UTF-8 text (row count mismatch?)", line_off) from None
        if not line:
            raise EmbeddingFormatError("empty metadata line", line_off)
        parts = line.split("\t")
        if len(parts) != 4:
            raise EmbeddingFormatError(f"metadata line has {len(parts)} fields, expected 4", line_off)
        if len(meta) == n:
            raise EmbeddingFormatError(f"header declares {n} rows but more metadata lines follow", line_off)
        try:
            label = int(parts[3])
            meta.append(
                SegmentMeta(parts[0], float(parts[1]), float(parts[2]), None if label < 0 else label)
            )
        except ValueError as exc:
            raise EmbeddingFormatError(f"bad metadata line: {exc}", line_off) from None
    if len(meta) != n:
        raise EmbeddingFormatError(f"header declares {n} rows, found {len(meta)} metadata lines", len(data))
    try:
        return EmbeddingMatrix(values.reshape(n, d), tuple(meta))
    except ValueError as exc:
        raise EmbeddingFormatError(str(exc), off) from None


def empty_matrix(dim: int = 1) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.zeros((0, dim)), ())


# --- RTTM -------------------------------------------------------------------


def format_rttm(hyp: DiarizationHypothesis, meta: Sequence[SegmentMeta]) -> str:
    # shortest round-trip float repr so read_rttm recovers times exactly
    if len(hyp.labels) != len(meta):
        raise ValueError(f"{len(hyp.labels)} labels for {len(meta)} segments")
    return "".join(
        f"SPEAKER {m.session_id} 1 {m.start!r} {m.duration!r} <NA> <NA> spk{int(lab)} <NA> <NA>\n"
        for m, lab in zip(meta, hyp.labels)
    )


def write_rttm(hyp: DiarizationHypothesis, meta: Sequence[SegmentMeta], path) -> None:
    text = format_rttm(hyp, meta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_rttm(path) -> list[tuple[str, float, float, int]]:
    """Parse SPEAKER lines into (session, start, duration, label) tuples."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if fields[0] != "SPEAKER" or len(fields) < 8:
                raise ValueError(f"{path}:{lineno}: not an RTTM SPEAKER line")
            name = fields[7]
            label = int(name[3:]) if name.startswith("spk") else int(name)
            rows.append((fields[1], float(fields[3]), float(fields[4]), label))
    return rows
