# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled search kernels.

Inner products are accumulated left to right in double precision with no
FMA contraction, so results match the numpy fallback bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


cdef inline bint _worse(double sa, int64_t ta, double sb, int64_t tb) nogil:
    # a ranks below b: lower score, or equal score with a larger tie key
    return sa < sb or (sa == sb and ta > tb)


cdef void _sift_down(double* hs, int64_t* ht, int64_t* hi, Py_ssize_t n, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child, worst
    cdef double s
    cdef int64_t t, i
    while True:
        child = 2 * pos + 1
        if child >= n:
            return
        worst = child
        if child + 1 < n and _worse(hs[child + 1], ht[child + 1], hs[child], ht[child]):
            worst = child + 1
        if not _worse(hs[worst], ht[worst], hs[pos], ht[pos]):
            return
        s = hs[pos]; t = ht[pos]; i = hi[pos]
        hs[pos] = hs[worst]; ht[pos] = ht[worst]; hi[pos] = hi[worst]
        hs[worst] = s; ht[worst] = t; hi[worst] = i
        pos = worst


cdef void _sift_up(double* hs, int64_t* ht, int64_t* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef double s
    cdef int64_t t, i
    while pos > 0:
        parent = (pos - 1) // 2
        if not _worse(hs[pos], ht[pos], hs[parent], ht[parent]):
            return
        s = hs[pos]; t = ht[pos]; i = hi[pos]
        hs[pos] = hs[parent]; ht[pos] = ht[parent]; hi[pos] = hi[parent]
        hs[parent] = s; ht[parent] = t; hi[parent] = i
        pos = parent


cdef tuple _finish(double[::1] hs, int64_t[::1] ht, int64_t[::1] hi, Py_ssize_t n):
    # heap root is the worst kept item: pop into the tail to get best-first order
    cdef Py_ssize_t end
    cdef double s
    cdef int64_t t, i
    for end in range(n - 1, 0, -1):
        s = hs[0]; t = ht[0]; i = hi[0]
        hs[0] = hs[end]; ht[0] = ht[end]; hi[0] = hi[end]
        hs[end] = s; ht[end] = t; hi[end] = i
        _sift_down(&hs[0], &ht[0], &hi[0], end, 0)
    return np.asarray(hi[:n]).copy(), np.asarray(hs[:n]).copy()


def topk_scores(const double[::1] scores, const int64_t[::1] tie, Py_ssize_t k):
    """Indices and scores of the k best entries, best first, ties by ``tie``."""
    cdef Py_ssize_t n = scores.shape[0]
    if k > n:
        k = n
    hs_arr = np.empty(max(k, 1), dtype=np.float64)
    ht_arr = np.empty(max(k, 1), dtype=np.int64)
    hi_arr = np.empty(max(k, 1), dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef int64_t[::1] ht = ht_arr
    cdef int64_t[::1] hi = hi_arr
    cdef Py_ssize_t r, size = 0
    cdef double s
    with nogil:
        for r in range(n):
            s = scores[r]
            if size < k:
                hs[size] = s; ht[size] = tie[r]; hi[size] = r
                size += 1
                _sift_up(&hs[0], &ht[0], &hi[0], size - 1)
            elif k > 0 and _worse(hs[0], ht[0], s, tie[r]):
                hs[0] = s; ht[0] = tie[r]; hi[0] = r
                _sift_down(&hs[0], &ht[0], &hi[0], size, 0)
    return _finish(hs, ht, hi, size)


def mips_topk(const float[:, ::1] matrix, const double[::1] query,
              const int64_t[::1] tie, Py_ssize_t k):
    """Exhaustive inner-product scan fused with bounded-heap selection."""
    cdef Py_ssize_t n = matrix.shape[0], h = matrix.shape[1]
    if query.shape[0] != h:
        raise ValueError("query dimension does not match the matrix")
    if k > n:
        k = n
    hs_arr = np.empty(max(k, 1), dtype=np.float64)
    ht_arr = np.empty(max(k, 1), dtype=np.int64)
    hi_arr = np.empty(max(k, 1), dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef int64_t[::1] ht = ht_arr
    cdef int64_t[::1] hi = hi_arr
    cdef Py_ssize_t r, j, size = 0
    cdef double acc
    with nogil:
        for r in range(n):
            acc = 0.0
            for j in range(h):
                acc = acc + <double>matrix[r, j] * query[j]
            if size < k:
                hs[size] = acc; ht[size] = tie[r]; hi[size] = r
                size += 1
                _sift_up(&hs[0], &ht[0], &hi[0], size - 1)
            elif k > 0 and _worse(hs[0], ht[0], acc, tie[r]):
                hs[0] = acc; ht[0] = tie[r]; hi[0] = r
                _sift_down(&hs[0], &ht[0], &hi[0], size, 0)
    return _finish(hs, ht, hi, size)


def inner_products(const float[:, ::1] matrix, const double[::1] query):
    cdef Py_ssize_t n = matrix.shape[0], h = matrix.shape[1], r, j
    if query.shape[0] != h:
        raise ValueError("query dimension does not match the matrix")
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc
    with nogil:
        for r in range(n):
            acc = 0.0
            for j in range(h):
                acc = acc + <double>matrix[r, j] * query[j]
            out[r] = acc
    return out_arr


def bm25_scores(const int64_t[::1] indptr, const int64_t[::1] doc_idx,
                const double[::1] tf, const double[::1] doc_len,
                const int64_t[::1] terms, const double[::1] idf,
                double k1, double b, double avgdl):
    """Accumulate BM25 contributions of ``terms`` (in order) over postings."""
    cdef Py_ssize_t n_docs = doc_len.shape[0]
    out_arr = np.zeros(n_docs, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t qi, p, d
    cdef int64_t t
    cdef double w, f
    with nogil:
        for qi in range(terms.shape[0]):
            t = terms[qi]
            if t < 0:
                continue
            w = idf[t]
            for p in range(indptr[t], indptr[t + 1]):
                d = doc_idx[p]
                f = tf[p]
                out[d] = out[d] + w * (f * (k1 + 1.0)) / (f + k1 * ((1.0 - b) + b * doc_len[d] / avgdl))
    return out_arr
