"""BM25 lexical baseline over an inverted index.

``score(q, d) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen))``
with ``idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))``. Query terms are
summed with multiplicity; terms absent from the corpus contribute nothing.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .data import Article
from .errors import DataError, UsageError
from .index import RankedList
from .text import words


@dataclass(frozen=True)
class Bm25Config:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise UsageError("BM25 needs k1 >= 0 and 0 <= b <= 1")


class Bm25Index:
    def __init__(self, corpus: Mapping[str, Article], cfg: Bm25Config = Bm25Config()):
        if not corpus:
            raise DataError("BM25 needs a non-empty corpus")
        self.cfg = cfg
        self.ids = list(corpus)
        docs = [Counter(words(a.title) + words(a.abstract)) for a in corpus.values()]
        self.doc_len = np.array([sum(c.values()) for c in docs], dtype=np.float64)
        self.avgdl = float(self.doc_len.mean()) or 1.0
        postings: dict[str, list[tuple[int, int]]] = {}
        for i, c in enumerate(docs):
            for term, tf in c.items():
                postings.setdefault(term, []).append((i, tf))
        self.term_id = {t: j for j, t in enumerate(sorted(postings))}
        n_terms = len(self.term_id)
        self.indptr = np.zeros(n_terms + 1, dtype=np.int64)
        doc_idx, tfs = [], []
        for t, j in self.term_id.items():
            plist = postings[t]
            self.indptr[j + 1] = len(plist)
            doc_idx.extend(p[0] for p in plist)
            tfs.extend(p[1] for p in plist)
        np.cumsum(self.indptr, out=self.indptr)
        self.doc_idx = np.array(doc_idx, dtype=np.int64)
        self.tf = np.array(tfs, dtype=np.float64)
        n = len(self.ids)
        df = np.diff(self.indptr).astype(np.float64)
        self.df = df
        self.idf = np.log(1.0 + (n - df + 0.5) / (df + 0.5))
        order = sorted(range(n), key=self.ids.__getitem__)
        self.tie = np.empty(n, dtype=np.int64)
        self.tie[order] = np.arange(n)

    @property
    def n_docs(self) -> int:
        return len(self.ids)

    def scores(self, query: str) -> np.ndarray:
        terms = np.array([self.term_id.get(t, -1) for t in words(query)], dtype=np.int64)
        return kernels.bm25_scores(
            self.indptr, self.doc_idx, self.tf, self.doc_len, terms, self.idf,
            self.cfg.k1, self.cfg.b, self.avgdl,
        )

    def rank(self, query: str, k: int, qid: str = "") -> RankedList:
        if k < 1:
            raise UsageError("K must be >= 1")
        rows, scores = kernels.topk_scores(self.scores(query), self.tie, k)
        return RankedList(qid, [(self.ids[r], float(s)) for r, s in zip(rows, scores)])


def bm25_rank(query: str, corpus, cfg: Bm25Config = Bm25Config(), k: int = 100, qid: str = "") -> RankedList:
    """Top-k articles by BM25; ``corpus`` may be a mapping or a prebuilt index."""
    index = corpus if isinstance(corpus, Bm25Index) else Bm25Index(corpus, cfg)
    return index.rank(query, k, qid)
