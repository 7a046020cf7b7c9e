"""Ranking metrics, correlation, and TREC qrels/run files."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoder import ParameterSet
from .errors import DataError, UsageError
from .index import RankedList, query_vector, sort_entries

Qrels = dict  # qid -> {doc_id: grade}
Run = dict  # qid -> RankedList


def _ranked_ids(entry) -> list[str]:
    if isinstance(entry, RankedList):
        return entry.ids
    return [e[0] if isinstance(e, tuple) else e for e in entry]


def _check(qrels: Mapping, k: int):
    if k < 1:
        raise UsageError("k must be >= 1")
    if not qrels:
        raise DataError("empty qrels: nothing to evaluate")


def _judged(qrels: Mapping) -> dict[str, dict[str, int]]:
    """Queries with at least one positive grade; the rest are left out of means."""
    return {q: g for q, g in qrels.items() if any(v > 0 for v in g.values())}


def ndcg_at_k(run: Mapping, qrels: Mapping, k: int) -> tuple[dict[str, float], float]:
    """Per-query NDCG@k and its mean; gain ``2^grade - 1``, discount ``log2(rank + 1)``.

    Queries missing from the run score 0.
    """
    _check(qrels, k)
    per_query = {}
    for qid, grades in sorted(_judged(qrels).items()):
        ranked = _ranked_ids(run.get(qid, []))[:k]
        dcg = sum((2.0 ** grades.get(d, 0) - 1.0) / math.log2(r + 2) for r, d in enumerate(ranked))
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum((2.0**g - 1.0) / math.log2(r + 2) for r, g in enumerate(ideal))
        per_query[qid] = dcg / idcg
    mean = float(np.mean(list(per_query.values()))) if per_query else 0.0
    return per_query, mean


def map_at_k(run: Mapping, qrels: Mapping, k: int) -> tuple[dict[str, float], float]:
    """AP@k = sum of precision at relevant ranks <= k, over min(k, #relevant)."""
    _check(qrels, k)
    per_query = {}
    for qid, grades in sorted(_judged(qrels).items()):
        relevant = {d for d, g in grades.items() if g > 0}
        hits = 0
        total = 0.0
        for r, d in enumerate(_ranked_ids(run.get(qid, []))[:k], 1):
            if d in relevant:
                hits += 1
                total += hits / r
        per_query[qid] = total / min(k, len(relevant))
    mean = float(np.mean(list(per_query.values()))) if per_query else 0.0
    return per_query, mean


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise UsageError("pearson needs two equal-length lists of at least two values")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise DataError("correlation is undefined for a constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def sentence_similarity(
    query_encoder: ParameterSet, vocab, s1: str, s2: str, cosine: bool = False
) -> float:
    """Inner product (or cosine) of the query-encoder vectors of two sentences."""
    a = query_vector(query_encoder, vocab, s1).astype(np.float64)
    b = query_vector(query_encoder, vocab, s2).astype(np.float64)
    if cosine:
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(a @ b)


# ---------------------------------------------------------------------------
# TREC files


def parse_qrels(text: str, source: str = "<qrels>") -> Qrels:
    qrels: Qrels = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise DataError(f"{source}:{lineno}: expected 'qid 0 docid grade'")
        qid, _, doc, grade = parts
        try:
            g = int(grade)
        except ValueError:
            raise DataError(f"{source}:{lineno}: grade {grade!r} is not an integer") from None
        if g < 0:
            raise DataError(f"{source}:{lineno}: negative grade")
        qrels.setdefault(qid, {})[doc] = g
    return qrels


def load_qrels(path: str | Path) -> Qrels:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    return parse_qrels(text, str(path))


def write_qrels(qrels: Mapping, path: str | Path) -> None:
    lines = [f"{q} 0 {d} {g}\n" for q in sorted(qrels) for d, g in sorted(qrels[q].items())]
    Path(path).write_text("".join(lines), encoding="utf-8")


def format_run(run: Mapping[str, RankedList], tag: str = "clickir") -> str:
    out = io.StringIO()
    for qid in sorted(run):
        for rank, (doc, score) in enumerate(run[qid].entries, 1):
            out.write(f"{qid} Q0 {doc} {rank} {score!r} {tag}\n")
    return out.getvalue()


def write_run(run: Mapping[str, RankedList], path: str | Path, tag: str = "clickir") -> None:
    Path(path).write_text(format_run(run, tag), encoding="utf-8")


def parse_run(text: str, source: str = "<run>") -> Run:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise DataError(f"{source}:{lineno}: expected 'qid Q0 docid rank score tag'")
        qid, _, doc, rank, score, _tag = parts
        try:
            rows.setdefault(qid, []).append((int(rank), doc, float(score)))
        except ValueError:
            raise DataError(f"{source}:{lineno}: bad rank or score") from None
    return {q: RankedList(q, [(d, s) for _, d, s in sorted(r)]) for q, r in rows.items()}


def load_run(path: str | Path) -> Run:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    return parse_run(text, str(path))


def evaluation_report(run: Mapping, qrels: Mapping, ks: Sequence[int], per_query_ref: str = "") -> str:
    """CSV with one row per (metric, k): metric,k,mean,per_query."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["metric", "k", "mean", "per_query"])
    for k in ks:
        for name, fn in (("ndcg", ndcg_at_k), ("map", map_at_k)):
            _, mean = fn(run, qrels, k)
            w.writerow([name, k, f"{mean:.6f}", per_query_ref])
    return out.getvalue()


def per_query_table(run: Mapping, qrels: Mapping, ks: Sequence[int]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["qid", "metric", "k", "value"])
    for k in ks:
        for name, fn in (("ndcg", ndcg_at_k), ("map", map_at_k)):
            per, _ = fn(run, qrels, k)
            for qid, v in per.items():
                w.writerow([qid, name, k, f"{v:.6f}"])
    return out.getvalue()


__all__ = [
    "ndcg_at_k",
    "map_at_k",
    "pearson",
    "sentence_similarity",
    "load_qrels",
    "parse_qrels",
    "write_qrels",
    "write_run",
    "format_run",
    "load_run",
    "parse_run",
    "evaluation_report",
    "per_query_table",
    "sort_entries",
]
