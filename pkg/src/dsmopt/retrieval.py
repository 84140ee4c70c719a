"""Text retrieval: chunking, embedding, exact top-K search and context assembly.

Scores are negative squared Euclidean distances, so higher is closer and
identical vectors score exactly 0. Ties are broken by ascending chunk id.

Index file layout (all integers little-endian)::

    magic      8 bytes   b"DSMRIDX\\0"
    version    u32       1
    dim        u32
    count      u32       N
    backend    u16 length + UTF-8 bytes
    N records  u32 id, u32 start, u32 end,
               u16 length + UTF-8 doc_id, u32 length + UTF-8 text
    vectors    N * dim float64, row-major, in record order
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

DEFAULT_WINDOW = 1200
DEFAULT_OVERLAP = 200
DEFAULT_DIM = 256
DEFAULT_K = 3

MAGIC = b"DSMRIDX\0"
FORMAT_VERSION = 1


class RetrievalError(Exception):
    pass


class EmptyCorpus(RetrievalError):
    pass


class EmptyIndex(RetrievalError):
    pass


class DimMismatch(RetrievalError, ValueError):
    pass


class BackendUnavailable(RetrievalError):
    pass


class IndexFormatError(RetrievalError):
    pass


@dataclass(frozen=True)
class Chunk:
    id: int
    doc_id: str
    text: str
    span: tuple[int, int]


# --------------------------------------------------------------------------
# chunking

def chunk_corpus(docs: Iterable[tuple[str, str]], window_chars: int = DEFAULT_WINDOW,
                 overlap_chars: int = DEFAULT_OVERLAP) -> list[Chunk]:
    """Slide a fixed character window over each document; ids run 1..N in corpus order."""
    if not window_chars > overlap_chars >= 0:
        raise ValueError("need window_chars > overlap_chars >= 0")
    stride = window_chars - overlap_chars
    chunks: list[Chunk] = []
    for doc_id, text in docs:
        start = 0
        while start < len(text):
            end = min(start + window_chars, len(text))
            chunks.append(Chunk(len(chunks) + 1, doc_id, text[start:end], (start, end)))
            if end == len(text):
                break
            start += stride
    if not chunks:
        raise EmptyCorpus("corpus contains no text")
    return chunks


def load_corpus(directory: str | Path) -> list[tuple[str, str]]:
    """Read every non-hidden file under ``directory`` as UTF-8; doc ids are relative POSIX paths."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    docs = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root)
        if any(part.startswith(".") for part in rel.parts):
            continue
        docs.append((rel.as_posix(), path.read_text(encoding="utf-8")))
    return docs


# --------------------------------------------------------------------------
# embedding

class Embedder(Protocol):
    dim: int
    backend_id: str

    def embed(self, text: str) -> np.ndarray: ...


_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class HashingEmbedder:
    """Signed bag-of-tokens hashed into ``dim`` buckets, then L2-normalized.

    Text with no tokens maps to the all-zeros vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.backend_id = f"hashing-blake2b-v1/{dim}"

    def bucket(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        word = int.from_bytes(h, "little")
        return (word >> 1) % self.dim, (1.0 if word & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            i, sign = self.bucket(tok)
            v[i] += sign
        norm = math.sqrt(float(v @ v))
        return v / norm if norm > 0 else v


class ExternalEmbedder:
    """Adapter for a remote embedding service, supplied as a ``text -> vector`` callable."""

    def __init__(self, client: Callable[[str], Sequence[float]] | None = None,
                 dim: int = 1536, backend_id: str = "external"):
        self.client = client
        self.dim = dim
        self.backend_id = backend_id

    def embed(self, text: str) -> np.ndarray:
        if self.client is None:
            raise BackendUnavailable(f"embedding backend {self.backend_id!r} is not configured")
        v = np.asarray(self.client(text), dtype=float)
        if v.shape != (self.dim,):
            raise DimMismatch(f"backend returned shape {v.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("backend returned non-finite values")
        return v


def embed(text: str, backend: Embedder) -> np.ndarray:
    return backend.embed(text)


# --------------------------------------------------------------------------
# similarity and search

def _neg_sq_dist(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = rows - q
    return -np.sum(d * d, axis=1)


def similarity(u, v) -> float:
    """Negative squared Euclidean distance."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise DimMismatch(f"dims {u.shape} and {v.shape} differ")
    return float(_neg_sq_dist(v[None, :], u)[0])


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    chunks: tuple[Chunk, ...]
    vectors: np.ndarray
    backend_id: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(self.chunks):
            raise ValueError("need one vector row per chunk")
        if not np.all(np.isfinite(v)):
            raise ValueError("vectors must be finite")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "chunks", tuple(self.chunks))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.chunks)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> RetrievalIndex:
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<III", FORMAT_VERSION, self.dim, len(self.chunks))]
        out.append(_pack_str(self.backend_id, "<H"))
        for ch in self.chunks:
            out.append(struct.pack("<III", ch.id, ch.span[0], ch.span[1]))
            out.append(_pack_str(ch.doc_id, "<H"))
            out.append(_pack_str(ch.text, "<I"))
        out.append(self.vectors.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> RetrievalIndex:
        r = _Reader(data)
        if r.take(len(MAGIC)) != MAGIC:
            raise IndexFormatError("not an index file")
        version, dim, n = r.unpack("<III")
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        backend_id = r.string("<H")
        chunks = []
        for _ in range(n):
            cid, start, end = r.unpack("<III")
            doc_id = r.string("<H")
            text = r.string("<I")
            chunks.append(Chunk(cid, doc_id, text, (start, end)))
        vectors = np.frombuffer(r.take(8 * n * dim), dtype="<f8").astype(float).reshape(n, dim)
        if r.pos != len(data):
            raise IndexFormatError("trailing bytes after vectors")
        return cls(tuple(chunks), vectors, backend_id)


def _pack_str(s: str, fmt: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(fmt, len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError("index file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def build_index(chunks: Sequence[Chunk], backend: Embedder) -> RetrievalIndex:
    if not chunks:
        raise EmptyCorpus("no chunks to index")
    vectors = np.vstack([backend.embed(ch.text) for ch in chunks])
    return RetrievalIndex(tuple(chunks), vectors, backend.backend_id)


def top_k(query_vec, index: RetrievalIndex, k: int = DEFAULT_K) -> list[tuple[Chunk, float]]:
    """The ``min(k, N)`` best chunks, highest score first, ties by ascending chunk id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(index) == 0:
        raise EmptyIndex("index has no chunks")
    q = np.asarray(query_vec, dtype=float)
    if q.shape != (index.dim,):
        raise DimMismatch(f"query dim {q.shape} does not match index dim {index.dim}")
    scores = _neg_sq_dist(index.vectors, q)
    ids = np.array([ch.id for ch in index.chunks])
    order = np.lexsort((ids, -scores))[:k]
    return [(index.chunks[i], float(scores[i])) for i in order]


# --------------------------------------------------------------------------
# context and generation

SEPARATOR = "\n\n"


@dataclass(frozen=True)
class ContextBundle:
    query: str
    retrieved: tuple[tuple[Chunk, float], ...]
    context_text: str


def aggregate_context(query: str, retrieved: Iterable[tuple[Chunk, float]]) -> ContextBundle:
    ordered = tuple(sorted(retrieved, key=lambda cs: (-cs[1], cs[0].id)))
    parts = [query] + [f"[chunk {ch.id} @ {ch.doc_id}]\n{ch.text}" for ch, _ in ordered]
    return ContextBundle(query, ordered, SEPARATOR.join(parts))


class GenerationBackend(Protocol):
    def generate(self, bundle: ContextBundle) -> str: ...


class EchoGenerator:
    """Stand-in generator that echoes the bundle; useful for wiring tests."""

    def generate(self, bundle: ContextBundle) -> str:
        ids = ",".join(str(ch.id) for ch, _ in bundle.retrieved)
        return f"query: {bundle.query}\nchunks: {ids}\n"


class ExternalGenerator:
    def __init__(self, client: Callable[[str], str] | None = None):
        self.client = client

    def generate(self, bundle: ContextBundle) -> str:
        if self.client is None:
            raise BackendUnavailable("generation backend is not configured")
        return self.client(bundle.context_text)
