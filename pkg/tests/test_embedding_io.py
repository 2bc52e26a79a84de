import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphdiar.embedding_io import (
    EMB_MAGIC,
    DiarizationHypothesis,
    EmbeddingFormatError,
    EmbeddingMatrix,
    SegmentMeta,
    adjacency_from_labels,
    empty_matrix,
    format_rttm,
    load_embeddings,
    read_rttm,
    save_embeddings,
    write_rttm,
)


def make_matrix(values, session="s", labels=None, dur=1.5):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    labels = [None] * n if labels is None else labels
    meta = tuple(SegmentMeta(session, i * dur, dur, lab) for i, lab in enumerate(labels))
    return EmbeddingMatrix(values, meta)


def test_load_small_file(tmp_path):
    m = make_matrix([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], labels=[0, 1, 0])
    save_embeddings(m, tmp_path / "a.emb")
    back = load_embeddings(tmp_path / "a.emb")
    assert back.values.shape == (3, 2)
    assert back.values.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
    assert back.labels.tolist() == [0, 1, 0]


def test_header_row_mismatch_is_parse_error(tmp_path):
    m = make_matrix(np.ones((4, 2)))
    save_embeddings(m, tmp_path / "a.emb")
    data = bytearray((tmp_path / "a.emb").read_bytes())
    data[len(EMB_MAGIC) : len(EMB_MAGIC) + 8] = struct.pack("<II", 3, 2)
    (tmp_path / "b.emb").write_bytes(bytes(data))
    with pytest.raises(EmbeddingFormatError, match="byte offset"):
        load_embeddings(tmp_path / "b.emb")


def test_bad_magic_and_nonfinite(tmp_path):
    (tmp_path / "x.emb").write_bytes(b"NOTMAGIC" + b"\0" * 8)
    with pytest.raises(EmbeddingFormatError) as err:
        load_embeddings(tmp_path / "x.emb")
    assert err.value.offset == 0

    m = make_matrix([[1.0, 2.0]])
    save_embeddings(m, tmp_path / "y.emb")
    data = bytearray((tmp_path / "y.emb").read_bytes())
    off = len(EMB_MAGIC) + 8 + 8
    data[off : off + 8] = struct.pack("<d", float("nan"))
    (tmp_path / "y.emb").write_bytes(bytes(data))
    with pytest.raises(EmbeddingFormatError) as err:
        load_embeddings(tmp_path / "y.emb")
    assert err.value.offset == off


def test_random_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    m = make_matrix(rng.standard_normal((10, 128)), labels=list(rng.integers(0, 4, 10)))
    save_embeddings(m, tmp_path / "r.emb")
    back = load_embeddings(tmp_path / "r.emb")
    assert back == m
    assert back.values.tobytes() == m.values.tobytes()


def test_empty_and_singleton(tmp_path):
    save_embeddings(empty_matrix(4), tmp_path / "e.emb")
    back = load_embeddings(tmp_path / "e.emb")
    assert back.n == 0 and back.dim == 4

    m = make_matrix([[0.5]])
    save_embeddings(m, tmp_path / "one.emb")
    assert load_embeddings(tmp_path / "one.emb").values[0, 0] == 0.5


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_embeddings(make_matrix([[1.0]]), tmp_path / "missing" / "dir" / "a.emb")


def test_segment_invariants():
    with pytest.raises(ValueError):
        SegmentMeta("s", 0.0, 0.0)
    with pytest.raises(ValueError, match="start order"):
        EmbeddingMatrix(np.ones((2, 2)), (SegmentMeta("s", 3.0, 1.0), SegmentMeta("s", 1.0, 1.0)))
    with pytest.raises(ValueError, match="finite"):
        make_matrix([[np.inf, 0.0]])


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(0, 12), st.integers(1, 9)), elements=st.floats(-1e6, 1e6)),
    st.integers(0, 2**31),
)
def test_round_trip_property(tmp_path_factory, values, seed):
    rng = np.random.default_rng(seed)
    labels = [int(v) if v >= 0 else None for v in rng.integers(-1, 5, values.shape[0])]
    starts = np.sort(rng.uniform(0, 100, values.shape[0]))
    meta = tuple(SegmentMeta("sess", float(s), float(rng.uniform(0.1, 3)), lab) for s, lab in zip(starts, labels))
    m = EmbeddingMatrix(values, meta)
    path = tmp_path_factory.mktemp("rt") / "m.emb"
    save_embeddings(m, path)
    assert load_embeddings(path) == m


def test_adjacency_examples():
    assert adjacency_from_labels([0, 0, 1]).tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1]]
    assert adjacency_from_labels([7]).tolist() == [[1]]
    assert np.all(adjacency_from_labels([3] * 5) == 1)


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_adjacency_properties(labels):
    a = adjacency_from_labels(labels)
    assert np.array_equal(a, a.T)
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert np.all(np.diag(a) == 1)
    order = np.argsort(labels, kind="stable")
    p = a[np.ix_(order, order)]
    sorted_labels = np.asarray(labels)[order]
    # block-diagonal: ones exactly on equal-label runs
    assert np.array_equal(p, (sorted_labels[:, None] == sorted_labels[None, :]).astype(float))
    # transitivity: A @ A > 0 implies A > 0
    assert np.all((a @ a > 0) <= (a > 0))


def test_rttm_line_format(tmp_path):
    meta = [SegmentMeta("sess", 0.0, 1.5, None)]
    write_rttm(DiarizationHypothesis([0], 1), meta, tmp_path / "a.rttm")
    assert (tmp_path / "a.rttm").read_text() == "SPEAKER sess 1 0.0 1.5 <NA> <NA> spk0 <NA> <NA>\n"


def test_rttm_empty(tmp_path):
    write_rttm(DiarizationHypothesis([], 0), [], tmp_path / "e.rttm")
    assert (tmp_path / "e.rttm").read_text() == ""
    assert read_rttm(tmp_path / "e.rttm") == []


def test_rttm_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    meta = [SegmentMeta("s1", round(1.5 * i, 3), 1.5, None) for i in range(20)]
    labels = rng.integers(0, 7, 20)
    write_rttm(DiarizationHypothesis(labels, 7), meta, tmp_path / "r.rttm")
    rows = read_rttm(tmp_path / "r.rttm")
    assert [(r[1], r[2], r[3]) for r in rows] == [(m.start, m.duration, int(l)) for m, l in zip(meta, labels)]


def test_rttm_length_mismatch():
    with pytest.raises(ValueError):
        format_rttm(DiarizationHypothesis([0, 1], 2), [SegmentMeta("s", 0.0, 1.0)])
