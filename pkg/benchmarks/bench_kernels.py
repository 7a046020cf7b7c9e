"""Time the compiled kernels against the numpy fallback on identical inputs.

    python benchmarks/bench_kernels.py [--rows 50000] [--dim 64] [--repeat 5]

Every timed pair is also checked for bitwise-equal output.
"""

import argparse
import sys
import timeit

import numpy as np

from clickir import _fallback, kernels


def csr_postings(rng, n_docs, n_terms, mean_len):
    lengths = rng.poisson(mean_len, size=n_docs) + 1
    postings = [[] for _ in range(n_terms)]
    for d, n in enumerate(lengths):
        terms, counts = np.unique(rng.zipf(1.3, size=n) % n_terms, return_counts=True)
        for t, c in zip(terms, counts):
            postings[t].append((d, float(c)))
    indptr = np.cumsum([0] + [len(p) for p in postings]).astype(np.int64)
    doc_idx = np.array([d for p in postings for d, _ in p], dtype=np.int64)
    tf = np.array([c for p in postings for _, c in p], dtype=np.float64)
    idf = np.log1p((n_docs - np.diff(indptr) + 0.5) / (np.diff(indptr) + 0.5))
    return indptr, doc_idx, tf, lengths.astype(np.float64), idf


def cases(args):
    rng = np.random.default_rng(args.seed)
    matrix = rng.normal(size=(args.rows, args.dim)).astype(np.float32)
    query = rng.normal(size=args.dim)
    tie = rng.permutation(args.rows).astype(np.int64)
    scores = np.round(rng.normal(size=args.rows), 2)  # coarse values so ties occur
    indptr, doc_idx, tf, doc_len, idf = csr_postings(rng, args.rows, 5000, 60)
    terms = rng.integers(0, 50, size=4).astype(np.int64)  # frequent terms: long posting lists
    avgdl = float(doc_len.mean())
    return {
        "inner_products": lambda impl: kernels.inner_products(matrix, query, impl),
        f"mips_topk k={args.k}": lambda impl: kernels.mips_topk(matrix, query, tie, args.k, impl),
        f"topk_scores k={args.k}": lambda impl: kernels.topk_scores(scores, tie, args.k, impl),
        "bm25_scores": lambda impl: kernels.bm25_scores(indptr, doc_idx, tf, doc_len, terms, idf, 1.2, 0.75, avgdl, impl),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=50_000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("-k", type=int, default=100)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if kernels.compiled is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    print(f"rows={args.rows} dim={args.dim} repeat={args.repeat} (best of)")
    print(f"{'kernel':<22}{'compiled ms':>13}{'fallback ms':>13}{'speedup':>9}  identical")
    mismatch = False
    for name, call in cases(args).items():
        fast, slow = call(kernels.compiled), call(_fallback)
        t_fast = min(timeit.repeat(lambda: call(kernels.compiled), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: call(_fallback), number=1, repeat=args.repeat))
        ok = same(fast, slow)
        mismatch |= not ok
        print(f"{name:<22}{t_fast * 1e3:>13.2f}{t_slow * 1e3:>13.2f}{t_slow / t_fast:>8.1f}x  {'yes' if ok else 'NO'}")
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())
