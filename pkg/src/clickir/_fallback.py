"""Numpy versions of the compiled kernels.

Each function returns exactly what its counterpart in ``_kernels`` returns;
inner products are accumulated one column at a time so the per-row sum
order matches the compiled loop.
"""

from __future__ import annotations

import numpy as np


def inner_products(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    if query.shape[0] != matrix.shape[1]:
        raise ValueError("query dimension does not match the matrix")
    acc = np.zeros(matrix.shape[0], dtype=np.float64)
    for j in range(matrix.shape[1]):
        acc += matrix[:, j].astype(np.float64) * query[j]
    return acc


def topk_scores(scores: np.ndarray, tie: np.ndarray, k: int):
    n = len(scores)
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if k < n:
        threshold = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= threshold)
    else:
        cand = np.arange(n)
    order = cand[np.lexsort((tie[cand], -scores[cand]))][:k]
    return order.astype(np.int64), scores[order].astype(np.float64)


def mips_topk(matrix: np.ndarray, query: np.ndarray, tie: np.ndarray, k: int):
    return topk_scores(inner_products(matrix, query), tie, k)


def bm25_scores(indptr, doc_idx, tf, doc_len, terms, idf, k1, b, avgdl):
    out = np.zeros(len(doc_len), dtype=np.float64)
    for t in terms:
        if t < 0:
            continue
        lo, hi = indptr[t], indptr[t + 1]
        docs = doc_idx[lo:hi]
        f = tf[lo:hi]
        out[docs] = out[docs] + idf[t] * (f * (k1 + 1.0)) / (
            f + k1 * ((1.0 - b) + b * doc_len[docs] / avgdl)
        )
    return out
