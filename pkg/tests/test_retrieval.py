import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmopt.retrieval import (
    BackendUnavailable, Chunk, DimMismatch, EchoGenerator, EmptyCorpus, EmptyIndex, ExternalEmbedder,
    ExternalGenerator, HashingEmbedder, IndexFormatError, RetrievalIndex, aggregate_context, build_index,
    chunk_corpus, load_corpus, similarity, top_k,
)

DATA = Path(__file__).parent / "data"
CORPUS = DATA / "corpus"


def scan(query, index, k):
    """Reference: score every chunk, full sort by (score desc, id asc)."""
    scored = [(ch, similarity(query, v)) for ch, v in zip(index.chunks, index.vectors)]
    scored.sort(key=lambda cs: (-cs[1], cs[0].id))
    return scored[:k]


def index_of(vectors, backend_id="test"):
    chunks = tuple(Chunk(i + 1, f"d{i % 3}", f"text {i}", (0, 1)) for i in range(len(vectors)))
    return RetrievalIndex(chunks, np.asarray(vectors, dtype=float).reshape(len(vectors), -1), backend_id)


# ---------------------------------------------------------------- chunking


def test_single_window():
    chunks = chunk_corpus([("a", "0123456789")], 10, 0)
    assert [(c.id, c.span, c.text) for c in chunks] == [(1, (0, 10), "0123456789")]


def test_overlapping_windows():
    chunks = chunk_corpus([("a", "abcdefghijklmno")], 10, 5)
    assert [c.span for c in chunks] == [(0, 10), (5, 15)]


def test_short_last_window_and_ids_across_docs():
    chunks = chunk_corpus([("a", "x" * 12), ("b", "y" * 3)], 5, 1)
    assert [(c.id, c.doc_id, c.span) for c in chunks] == [
        (1, "a", (0, 5)), (2, "a", (4, 9)), (3, "a", (8, 12)), (4, "b", (0, 3))]


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        chunk_corpus([])
    with pytest.raises(EmptyCorpus):
        chunk_corpus([("a", "")])


def test_bad_window():
    with pytest.raises(ValueError):
        chunk_corpus([("a", "abc")], 5, 5)


@given(st.text(min_size=1, max_size=300), st.integers(1, 40), st.integers(0, 39))
def test_chunks_cover_document(text, window, overlap):
    if overlap >= window:
        overlap = window - 1
    chunks = chunk_corpus([("d", text)], window, overlap)
    assert all(c.text == text[c.span[0]:c.span[1]] and c.text for c in chunks)
    assert chunks[0].span[0] == 0 and chunks[-1].span[1] == len(text)
    for a, b in zip(chunks, chunks[1:]):
        assert b.span[0] == a.span[0] + window - overlap
        assert a.span[1] - b.span[0] <= overlap


def test_load_corpus_sorted_relative_paths():
    docs = load_corpus(CORPUS)
    assert [d for d, _ in docs] == ["batteries.txt", "dishwasher.txt", "tariffs.txt"]


# ---------------------------------------------------------------- embedding


def test_hashing_embedder_is_deterministic_and_normalized():
    e = HashingEmbedder()
    a, b = e.embed("Charge the EV by 7:30"), e.embed("Charge the EV by 7:30")
    assert a.tobytes() == b.tobytes()
    assert a.shape == (256,) and np.linalg.norm(a) == pytest.approx(1.0)


def test_empty_text_gives_zero_vector():
    v = HashingEmbedder().embed("")
    assert v.shape == (256,) and not v.any()
    assert not HashingEmbedder().embed("  ,. ").any()


def test_disjoint_tokens_use_disjoint_buckets():
    e = HashingEmbedder()
    words = ["battery", "solar", "tariff", "dishwasher", "evening", "charge", "export", "window"]
    buckets = {w: e.bucket(w)[0] for w in words}
    assert len(set(buckets.values())) == len(words)  # collision-free fixture
    u = e.embed("battery solar tariff charge")
    v = e.embed("dishwasher evening export window")
    assert not set(np.flatnonzero(u)) & set(np.flatnonzero(v))
    assert set(np.flatnonzero(u)) == {buckets[w] for w in ("battery", "solar", "tariff", "charge")}


def test_external_embedder():
    with pytest.raises(BackendUnavailable):
        ExternalEmbedder().embed("x")
    e = ExternalEmbedder(lambda text: [1.0, 2.0], dim=2)
    assert e.embed("x").tolist() == [1.0, 2.0]
    with pytest.raises(DimMismatch):
        ExternalEmbedder(lambda text: [1.0], dim=2).embed("x")


# ---------------------------------------------------------------- similarity and search


def test_similarity_examples():
    assert similarity([0.0, 0.0], [3.0, 4.0]) == -25.0
    v = np.random.default_rng(0).normal(size=256)
    assert similarity(v, v) == 0.0
    with pytest.raises(DimMismatch):
        similarity([1.0, 2.0], [1.0, 2.0, 3.0])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.integers(-10, 10), min_size=3, max_size=3))
def test_similarity_symmetric_and_translation_invariant(u, v, w):
    u, v, w = np.array(u), np.array(v), np.array(w, dtype=float)
    assert similarity(u, v) == similarity(v, u)
    assert similarity(u, v) <= 0.0
    # integer shifts keep the arithmetic exact enough to compare tightly
    assert similarity(u + w, v + w) == pytest.approx(similarity(u, v), rel=1e-9, abs=1e-9)


def test_top_k_examples():
    q = np.zeros(1)
    idx = index_of([[3.0], [1.0], [2.0]])
    got = top_k(q, idx, 2)
    assert [(c.id, s) for c, s in got] == [(2, -1.0), (3, -4.0)]
    assert [c.id for c, _ in top_k(q, idx, 10)] == [2, 3, 1]
    twins = index_of([[1.0], [1.0]])
    assert [c.id for c, _ in top_k(q, twins, 1)] == [1]


def test_top_k_errors():
    with pytest.raises(EmptyIndex):
        top_k(np.zeros(2), RetrievalIndex((), np.zeros((0, 2)), "x"), 3)
    with pytest.raises(ValueError):
        top_k(np.zeros(1), index_of([[1.0]]), 0)
    with pytest.raises(DimMismatch):
        top_k(np.zeros(2), index_of([[1.0]]), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_top_k_prefix_and_monotone_growth(n, dim, seed):
    rng = np.random.default_rng(seed)
    vecs = rng.integers(-2, 3, size=(n, dim)).astype(float)
    q = rng.integers(-2, 3, size=dim).astype(float)
    idx = index_of(vecs)
    full = top_k(q, idx, n)
    assert full == scan(q, idx, n)
    for k in range(1, n):
        assert top_k(q, idx, k) == full[:k]
    # appending a chunk keeps the relative order of the existing ones
    grown = index_of(np.vstack([vecs, rng.integers(-2, 3, size=(1, dim))]))
    old = [c.id for c, _ in top_k(q, grown, n + 1) if c.id <= n]
    assert old == [c.id for c, _ in full]


# ---------------------------------------------------------------- persistence


def fixture_index():
    return build_index(chunk_corpus(load_corpus(CORPUS), 160, 40), HashingEmbedder())


def test_index_round_trip(tmp_path):
    idx = fixture_index()
    idx.save(tmp_path / "i.bin")
    back = RetrievalIndex.load(tmp_path / "i.bin")
    assert back.chunks == idx.chunks and back.backend_id == idx.backend_id
    assert back.vectors.tobytes() == idx.vectors.tobytes()
    q = HashingEmbedder().embed("cheap overnight electricity")
    assert top_k(q, back, 4) == top_k(q, idx, 4)


def test_index_bytes_match_golden_file():
    assert fixture_index().to_bytes() == (DATA / "corpus.index").read_bytes()


def test_documented_layout_by_hand():
    idx = RetrievalIndex((Chunk(1, "a.txt", "hé", (0, 2)),), np.array([[0.5, -1.0]]), "b")
    expected = (b"DSMRIDX\0" + struct.pack("<III", 1, 2, 1) + struct.pack("<H", 1) + b"b"
                + struct.pack("<III", 1, 0, 2) + struct.pack("<H", 5) + b"a.txt"
                + struct.pack("<I", 3) + "hé".encode() + struct.pack("<2d", 0.5, -1.0))
    assert idx.to_bytes() == expected


def test_corrupt_index_rejected():
    data = fixture_index().to_bytes()
    with pytest.raises(IndexFormatError):
        RetrievalIndex.from_bytes(b"NOTANIDX" + data[8:])
    with pytest.raises(IndexFormatError):
        RetrievalIndex.from_bytes(data[:-3])
    with pytest.raises(IndexFormatError):
        RetrievalIndex.from_bytes(data + b"\0")
    bumped = data[:8] + struct.pack("<I", 99) + data[12:]
    with pytest.raises(IndexFormatError):
        RetrievalIndex.from_bytes(bumped)


def test_index_rejects_misaligned_vectors():
    with pytest.raises(ValueError):
        RetrievalIndex((Chunk(1, "a", "x", (0, 1)),), np.zeros((2, 3)), "b")


def test_fixture_query_prefers_matching_document():
    idx = fixture_index()
    e = HashingEmbedder()
    hits = top_k(e.embed("dishwasher cycle contiguous start time"), idx, 3)
    assert hits[0][0].doc_id == "dishwasher.txt"
    assert hits == scan(e.embed("dishwasher cycle contiguous start time"), idx, 3)


# ---------------------------------------------------------------- context and generation


def test_aggregate_context():
    a = Chunk(1, "x.txt", "alpha", (0, 5))
    b = Chunk(2, "y.txt", "beta", (0, 4))
    assert aggregate_context("q?", []).context_text == "q?"
    bundle = aggregate_context("q?", [(a, -0.5), (b, -0.1)])
    assert [c.id for c, _ in bundle.retrieved] == [2, 1]
    assert bundle.context_text == "q?\n\n[chunk 2 @ y.txt]\nbeta\n\n[chunk 1 @ x.txt]\nalpha"
    assert aggregate_context("q?", [(b, -0.1), (a, -0.5)]) == bundle


def test_generators():
    chunks = [(Chunk(i, "d", "t", (0, 1)), -float(i)) for i in (4, 7, 9)]
    bundle = aggregate_context("what now", chunks)
    out = EchoGenerator().generate(bundle)
    assert out == EchoGenerator().generate(bundle)
    assert "chunks: 4,7,9" in out
    with pytest.raises(BackendUnavailable):
        ExternalGenerator().generate(bundle)
    assert ExternalGenerator(lambda text: text.upper()).generate(bundle).startswith("WHAT NOW")
