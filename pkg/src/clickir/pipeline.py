"""Whole-run helpers shared by the CLI and the benchmark tests."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .bm25 import Bm25Config, Bm25Index
from .data import Article, ClickPair
from .encoder import EncoderConfig, ParameterSet
from .errors import UsageError
from .evaluation import ndcg_at_k
from .index import EmbeddingMatrix, RankedList, encode_corpus, mips_search, query_vector, rerank
from .text import Vocabulary, build_vocab
from .training import RetrieverTrainConfig, train_retriever

log = logging.getLogger(__name__)


def training_vocab(corpus: Mapping[str, Article], pairs: Sequence[ClickPair], max_size: int) -> Vocabulary:
    """Vocabulary over article text plus the distinct training queries."""
    queries = dict.fromkeys(p.query for p in pairs)
    return build_vocab([a.text for a in corpus.values()] + list(queries), max_size)


def dense_run(
    query_encoder: ParameterSet,
    vocab: Vocabulary,
    matrix: EmbeddingMatrix,
    queries: Sequence[tuple[str, str]],
    k: int,
) -> dict[str, RankedList]:
    return {q: mips_search(matrix, query_vector(query_encoder, vocab, text), k, q) for q, text in queries}


def bm25_run(
    corpus: Mapping[str, Article], queries: Sequence[tuple[str, str]], k: int, cfg: Bm25Config = Bm25Config()
) -> dict[str, RankedList]:
    index = Bm25Index(corpus, cfg)
    return {q: index.rank(text, k, q) for q, text in queries}


def rerank_run(
    cross_encoder: ParameterSet,
    vocab: Vocabulary,
    queries: Sequence[tuple[str, str]],
    first_stage: Mapping[str, RankedList],
    corpus: Mapping[str, Article],
) -> dict[str, RankedList]:
    text = dict(queries)
    out = {}
    for qid, ranked in first_stage.items():
        if qid not in text:
            raise UsageError(f"run holds qid {qid} that is missing from the query file")
        out[qid] = rerank(cross_encoder, vocab, text[qid], ranked, corpus)
    return out


def check_sizes(sizes: Sequence[int], available: int) -> list[int]:
    sizes = list(sizes)
    if not sizes:
        raise UsageError("scaling curve needs at least one size")
    if len(set(sizes)) != len(sizes):
        raise UsageError(f"duplicate sizes in {sizes}")
    if sizes != sorted(sizes):
        raise UsageError(f"sizes must be ascending, got {sizes}")
    if sizes[-1] > available:
        raise UsageError(f"size {sizes[-1]} exceeds the {available} available pairs")
    if sizes[0] < 1:
        raise UsageError("sizes must be positive")
    return sizes


@dataclass
class ScalingPoint:
    pairs: int
    ndcg10: float


def scaling_curve(
    pairs: Sequence[ClickPair],
    corpus: Mapping[str, Article],
    vocab: Vocabulary,
    enc_cfg: EncoderConfig,
    train_cfg: RetrieverTrainConfig,
    sizes: Sequence[int],
    queries: Sequence[tuple[str, str]],
    qrels: Mapping[str, Mapping[str, int]],
    k: int = 100,
    progress: Callable[[int, float], None] | None = None,
) -> list[ScalingPoint]:
    """One retriever per prefix of ``pairs``; same seed, step budget and evaluation set."""
    sizes = check_sizes(sizes, len(pairs))
    points = []
    for n in sizes:
        cfg = replace(train_cfg)
        retriever = train_retriever(pairs[:n], corpus, vocab, enc_cfg, cfg)
        matrix = encode_corpus(retriever.document, vocab, corpus.values())
        run = dense_run(retriever.query, vocab, matrix, queries, k)
        _, mean = ndcg_at_k(run, qrels, 10)
        log.info("scaling: %d pairs -> NDCG@10 %.4f", n, mean)
        points.append(ScalingPoint(n, mean))
        if progress is not None:
            progress(n, mean)
    return points


def scaling_csv(points: Sequence[ScalingPoint]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["pairs", "ndcg@10"])
    for p in points:
        w.writerow([p.pairs, f"{p.ndcg10:.6f}"])
    return out.getvalue()
