"""Offline corpus encoding, exact inner-product search and re-ranking."""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .data import Article
from .encoder import ParameterSet, cross_head, encode_query, encode_sequence, forward
from .errors import DataError, FormatError, UsageError
from .text import Vocabulary, content_ids, cross_tokens, document_tokens, stack, tokenize

log = logging.getLogger(__name__)

MAGIC = b"MEDV"
VERSION = 1


@dataclass
class RankedList:
    qid: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def sort_entries(entries: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Score descending, equal scores by ascending article id."""
    return sorted(entries, key=lambda e: (-e[1], e[0]))


class EmbeddingMatrix:
    """Row ``i`` holds the document vector of ``ids[i]``."""

    def __init__(self, ids: Sequence[str], values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] != len(ids):
            raise DataError("embedding matrix rows must match the id list")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate article ids in embedding matrix")
        if not np.isfinite(values).all():
            raise DataError("embedding matrix holds non-finite values")
        self.ids = list(ids)
        self.values = values
        self._tie: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def tie_rank(self) -> np.ndarray:
        """Position of each row's id in ascending id order."""
        if self._tie is None:
            order = sorted(range(self.n), key=self.ids.__getitem__)
            tie = np.empty(self.n, dtype=np.int64)
            tie[order] = np.arange(self.n)
            self._tie = tie
        return self._tie

    def equals(self, other: "EmbeddingMatrix") -> bool:
        return self.ids == other.ids and self.values.tobytes() == other.values.tobytes()

    @classmethod
    def concat(cls, parts: Sequence["EmbeddingMatrix"], dim: int) -> "EmbeddingMatrix":
        ids = [i for p in parts for i in p.ids]
        vals = [p.values for p in parts if p.n]
        values = np.concatenate(vals) if vals else np.zeros((0, dim), np.float32)
        return cls(ids, values)


# ---------------------------------------------------------------------------
# file format: MEDV | u32 version | u64 N | u32 h | N x (u32 len, utf-8 id) | N*h f32


def dumps_index(matrix: EmbeddingMatrix) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IQI", VERSION, matrix.n, matrix.dim))
    for doc_id in matrix.ids:
        b = doc_id.encode()
        out.write(struct.pack("<I", len(b)))
        out.write(b)
    out.write(matrix.values.astype("<f4").tobytes())
    return out.getvalue()


def loads_index(data: bytes, source: str = "<bytes>") -> EmbeddingMatrix:
    def need(pos, n):
        if pos + n > len(data):
            raise FormatError(f"{source}: truncated index file at byte {pos}")

    need(0, 20)
    if data[:4] != MAGIC:
        raise FormatError(f"{source}: not an index file (bad magic)")
    version, n, h = struct.unpack_from("<IQI", data, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported index version {version}")
    pos = 20
    ids = []
    for _ in range(n):
        need(pos, 4)
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(pos, ln)
        ids.append(data[pos : pos + ln].decode())
        pos += ln
    need(pos, 4 * n * h)
    if len(data) != pos + 4 * n * h:
        raise FormatError(f"{source}: {len(data) - pos - 4 * n * h} trailing bytes")
    values = np.frombuffer(data, dtype="<f4", count=n * h, offset=pos).reshape(n, h)
    try:
        return EmbeddingMatrix(ids, values.astype(np.float32))
    except DataError as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_index(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_index(matrix))
    tmp.replace(path)


def load_index(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read index ({exc.strerror})") from None
    return loads_index(data, str(path))


# ---------------------------------------------------------------------------
# encoding


def iter_encode_chunks(
    doc_encoder: ParameterSet,
    vocab: Vocabulary,
    articles: Iterable[Article],
    chunk_size: int = 256,
) -> Iterator[EmbeddingMatrix]:
    """Encode articles in fixed-size chunks; chunk ``c`` covers rows ``c*chunk_size...``."""
    if chunk_size < 1:
        raise UsageError("chunk_size must be >= 1")
    seen: set[str] = set()
    buf: list[Article] = []

    def flush():
        vecs = [
            encode_sequence(doc_encoder, document_tokens(vocab, a.title, a.abstract, doc_encoder.config.max_doc_len))
            for a in buf
        ]
        h = doc_encoder.config.hidden
        return EmbeddingMatrix([a.id for a in buf], np.array(vecs, np.float32).reshape(len(buf), h))

    for art in articles:
        if art.id in seen:
            raise DataError(f"duplicate article id {art.id}")
        seen.add(art.id)
        buf.append(art)
        if len(buf) == chunk_size:
            yield flush()
            buf = []
    if buf:
        yield flush()


def encode_corpus(
    doc_encoder: ParameterSet,
    vocab: Vocabulary,
    articles: Iterable[Article],
    chunk_size: int = 256,
) -> EmbeddingMatrix:
    chunks = list(iter_encode_chunks(doc_encoder, vocab, articles, chunk_size))
    return EmbeddingMatrix.concat(chunks, doc_encoder.config.hidden)


def query_vector(query_encoder: ParameterSet, vocab: Vocabulary, text: str) -> np.ndarray:
    return encode_query(query_encoder, tokenize(vocab, text, query_encoder.config.max_query_len))


# ---------------------------------------------------------------------------
# search


def mips_search(matrix: EmbeddingMatrix, q_vec: np.ndarray, k: int, qid: str = "") -> RankedList:
    """Exact top-k by raw inner product over every row of the matrix."""
    q_vec = np.asarray(q_vec)
    if q_vec.ndim != 1 or q_vec.shape[0] != matrix.dim:
        raise UsageError(f"query vector has dimension {q_vec.shape}, index has {matrix.dim}")
    if k < 1:
        raise UsageError("K must be >= 1")
    if not np.isfinite(q_vec).all():
        raise UsageError("query vector holds non-finite values")
    if matrix.n == 0:
        return RankedList(qid, [])
    rows, scores = kernels.mips_topk(matrix.values, q_vec, matrix.tie_rank, k)
    return RankedList(qid, [(matrix.ids[r], float(s)) for r, s in zip(rows, scores)])


def _cross_inputs(cross_encoder, vocab, query: str, doc_ids: Sequence[str], corpus):
    qseq = tokenize(vocab, query, cross_encoder.config.max_query_len)
    seqs = []
    for d in doc_ids:
        art = corpus.get(d)
        if art is None:
            raise DataError(f"candidate article {d} not found in corpus")
        seqs.append(cross_tokens(qseq, content_ids(vocab, art.title, art.abstract), cross_encoder.config.cross_max_len))
    return seqs


def cross_scores(
    cross_encoder: ParameterSet,
    vocab: Vocabulary,
    query: str,
    doc_ids: Sequence[str],
    corpus: Mapping[str, Article],
    batch_size: int = 1,
) -> np.ndarray:
    """Cross-encoder scores for each candidate; batch_size > 1 pads sequences together."""
    if cross_encoder.role != "cross":
        raise UsageError("re-ranking needs a cross-encoder parameter set")
    seqs = _cross_inputs(cross_encoder, vocab, query, doc_ids, corpus)
    if batch_size <= 1:
        return np.array([float(cross_head(cross_encoder, encode_sequence(cross_encoder, s))) for s in seqs])
    out = []
    for i in range(0, len(seqs), batch_size):
        ids, lengths, segs = stack(seqs[i : i + batch_size])
        cls, _ = forward(cross_encoder, ids, lengths, segs, record=False)
        out.extend(cross_head(cross_encoder, cls).astype(np.float64))
    return np.array(out)


def rerank(
    cross_encoder: ParameterSet,
    vocab: Vocabulary,
    query: str,
    candidates: RankedList,
    corpus: Mapping[str, Article],
    batch_size: int = 1,
) -> RankedList:
    ids = candidates.ids
    if not ids:
        return RankedList(candidates.qid, [])
    scores = cross_scores(cross_encoder, vocab, query, ids, corpus, batch_size)
    return RankedList(candidates.qid, sort_entries(zip(ids, scores.tolist())))


def two_stage_search(
    query: str,
    k: int,
    query_encoder: ParameterSet,
    cross_encoder: ParameterSet,
    matrix: EmbeddingMatrix,
    corpus: Mapping[str, Article],
    vocab: Vocabulary,
    qid: str = "",
) -> RankedList:
    first = mips_search(matrix, query_vector(query_encoder, vocab, query), k, qid)
    return rerank(cross_encoder, vocab, query, first, corpus)
