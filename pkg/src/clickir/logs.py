"""Click-log curation: navigational filter, keyword-query rule, pair extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .data import Article, ClickPair, LogRecord
from .errors import DataError
from .text import words


def filter_navigational(logs: Iterable[LogRecord]) -> list[LogRecord]:
    return [r for r in logs if not r.navigational]


def _contains_run(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return True
    first = needle[0]
    for i in range(len(haystack) - n + 1):
        if haystack[i] == first and list(haystack[i : i + n]) == list(needle):
            return True
    return False


def mentions(article: Article, query: str) -> bool:
    """Whole-query mention: the query's words occur contiguously in the title or abstract."""
    q = words(query)
    return _contains_run(words(article.title), q) or _contains_run(words(article.abstract), q)


def is_keyword_query(
    record: LogRecord, corpus: Mapping[str, Article], clicked: Iterable[str] | None = None
) -> bool:
    """One-word queries, or queries mentioned verbatim by every clicked article.

    ``clicked`` overrides the record's own clicks, which lets callers judge a
    query on the union of clicks across repeated records.
    """
    if len(words(record.query)) <= 1:
        return True
    docs = list(record.clicks if clicked is None else clicked)
    for d in docs:
        if d not in corpus:
            raise DataError(f"qid {record.qid}: clicked article {d} not found in corpus")
    return all(mentions(corpus[d], record.query) for d in docs)


def _clicks_by_query(logs: Iterable[LogRecord]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for r in logs:
        out.setdefault(r.qid, set()).update(r.clicks)
    return out


def keyword_qids(logs: Sequence[LogRecord], corpus: Mapping[str, Article]) -> set[str]:
    """Queries classified keyword, judged on all articles clicked for the query."""
    union = _clicks_by_query(logs)
    first: dict[str, LogRecord] = {}
    for r in logs:
        first.setdefault(r.qid, r)
    return {q for q, r in first.items() if is_keyword_query(r, corpus, sorted(union[q]))}


def split_training_sets(
    logs: Sequence[LogRecord], corpus: Mapping[str, Article]
) -> tuple[list[LogRecord], list[LogRecord]]:
    """(retriever records: every informational record, re-ranker records: non-keyword only)."""
    retriever = [r for r in logs if r.clicks]
    keyword = keyword_qids(retriever, corpus)
    reranker = [r for r in retriever if r.qid not in keyword]
    return retriever, reranker


def extract_pairs(logs: Iterable[LogRecord]) -> list[ClickPair]:
    """One pair per distinct (qid, article) with clicks summed, sorted by (qid, article)."""
    totals: dict[tuple[str, str], int] = {}
    text: dict[str, str] = {}
    for r in logs:
        text.setdefault(r.qid, r.query)
        for doc, c in r.clicks.items():
            totals[(r.qid, doc)] = totals.get((r.qid, doc), 0) + int(c)
    return [ClickPair(q, text[q], d, c) for (q, d), c in sorted(totals.items())]


@dataclass
class Funnel:
    raw_records: int
    raw_queries: int
    navigational_queries: int
    informational_records: int
    informational_queries: int
    keyword_queries: int
    nonkeyword_queries: int
    retriever_pairs: int
    reranker_pairs: int
    retriever_articles: int
    reranker_articles: int

    def rows(self) -> list[tuple[str, int]]:
        return list(self.__dict__.items())


def curate(
    logs: Sequence[LogRecord], corpus: Mapping[str, Article]
) -> tuple[list[ClickPair], list[ClickPair], Funnel]:
    """Filter navigational queries, split keyword/non-keyword, extract pairs."""
    informational = filter_navigational(logs)
    retriever_recs, reranker_recs = split_training_sets(informational, corpus)
    retriever_pairs = extract_pairs(retriever_recs)
    reranker_pairs = extract_pairs(reranker_recs)
    raw_q = {r.qid for r in logs}
    info_q = {r.qid for r in retriever_recs}
    rr_q = {r.qid for r in reranker_recs}
    funnel = Funnel(
        raw_records=len(logs),
        raw_queries=len(raw_q),
        navigational_queries=len({r.qid for r in logs if r.navigational}),
        informational_records=len(retriever_recs),
        informational_queries=len(info_q),
        keyword_queries=len(info_q - rr_q),
        nonkeyword_queries=len(rr_q),
        retriever_pairs=len(retriever_pairs),
        reranker_pairs=len(reranker_pairs),
        retriever_articles=len({p.doc_id for p in retriever_pairs}),
        reranker_articles=len({p.doc_id for p in reranker_pairs}),
    )
    return retriever_pairs, reranker_pairs, funnel
