"""Kernel dispatch: the compiled extension when it imports, numpy otherwise.

Set ``CLICKIR_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback as fallback

compiled = None
if os.environ.get("CLICKIR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

BACKEND = "compiled" if compiled is not None else "python"
_impl = compiled if compiled is not None else fallback


def _f32(matrix):
    return np.ascontiguousarray(matrix, dtype=np.float32)


def _f64(v):
    return np.ascontiguousarray(v, dtype=np.float64)


def _i64(v):
    return np.ascontiguousarray(v, dtype=np.int64)


def inner_products(matrix, query, impl=None):
    return (impl or _impl).inner_products(_f32(matrix), _f64(query))


def mips_topk(matrix, query, tie, k: int, impl=None):
    """Top-k rows by inner product, best first, equal scores ordered by ``tie``."""
    return (impl or _impl).mips_topk(_f32(matrix), _f64(query), _i64(tie), int(k))


def topk_scores(scores, tie, k: int, impl=None):
    return (impl or _impl).topk_scores(_f64(scores), _i64(tie), int(k))


def bm25_scores(indptr, doc_idx, tf, doc_len, terms, idf, k1, b, avgdl, impl=None):
    return (impl or _impl).bm25_scores(
        _i64(indptr), _i64(doc_idx), _f64(tf), _f64(doc_len), _i64(terms), _f64(idf),
        float(k1), float(b), float(avgdl),
    )
