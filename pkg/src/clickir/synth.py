"""Synthetic corpora, synonym tables and click logs.

The generated world is built so the curation rules have known answers:

* articles belong to topics; titles are drawn from the topic's term pool,
  abstracts restate the title terms among generic filler words;
* every content term has synonyms that never occur in any article;
* keyword queries are verbatim spans of a clicked title, so the exact
  mention rule fires;
* non-keyword queries are 2-4 title terms, each replaced by a synonym, so
  the rule cannot fire and the query shares no content term with the
  article it clicks;
* navigational queries (author-style strings) carry the navigational flag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Article, LogRecord
from .errors import DataError, UsageError
from .logs import is_keyword_query, mentions
from .seeding import rng_for
from .text import words

log = logging.getLogger(__name__)

FUNCTION_WORDS = ("of", "in", "and", "with", "for", "the", "to", "on", "by", "after", "during", "among")
_CONNECT = ("of", "in", "and", "with", "for", "after", "during", "among")
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "pl", "st", "tr", "gl")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


def pseudo_words(n: int, seed: int, stream: str, taken: set[str] | None = None, syllables=(2, 3)) -> list[str]:
    """``n`` distinct pronounceable non-words, none in ``taken``."""
    rng = rng_for(seed, "words", stream)
    taken = set(taken or ()) | set(FUNCTION_WORDS)
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise UsageError(f"could not draw {n} distinct pseudo-words")
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        if rng.random() < 0.5:
            w += "nmlrsx"[rng.integers(6)]
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class CorpusGenConfig:
    n_articles: int = 2000
    n_topics: int = 40
    terms_per_topic: int = 30
    title_terms: int = 5
    abstract_extra_terms: int = 3
    abstract_filler: int = 8
    n_generic: int = 60
    synonyms_per_term: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_articles < 1 or self.n_topics < 1:
            raise UsageError("n_articles and n_topics must be >= 1")
        if self.terms_per_topic < self.title_terms + self.abstract_extra_terms:
            raise UsageError("terms_per_topic must cover title and abstract terms")
        if self.title_terms < 2 or self.synonyms_per_term < 1:
            raise UsageError("title_terms >= 2 and synonyms_per_term >= 1 are required")


@dataclass
class World:
    corpus: dict[str, Article]
    synonyms: dict[str, list[str]]
    topics: list[list[str]]
    article_topic: dict[str, int] = field(default_factory=dict)
    title_terms: dict[str, list[str]] = field(default_factory=dict)


def _title_text(terms: Sequence[str], rng) -> str:
    parts = [terms[0]]
    for t in terms[1:]:
        if rng.random() < 0.4:
            parts.append(_CONNECT[rng.integers(len(_CONNECT))])
        parts.append(t)
    return " ".join(parts).capitalize()


def _abstract_text(title_terms, extra, generic, n_filler, rng) -> str:
    content = list(title_terms) + list(extra)
    filler = [generic[i] for i in rng.integers(len(generic), size=n_filler)]
    tokens = content + filler
    rng.shuffle(tokens)
    out = []
    for i, t in enumerate(tokens):
        out.append(t)
        if i % 3 == 2 and i + 1 < len(tokens):
            out.append(FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))])
    return " ".join(out).capitalize() + "."


def generate_world(cfg: CorpusGenConfig) -> World:
    rng = rng_for(cfg.seed, "corpus")
    n_terms = cfg.n_topics * cfg.terms_per_topic
    terms = pseudo_words(n_terms + cfg.n_generic, cfg.seed, "terms")
    generic = terms[n_terms:]
    terms = terms[:n_terms]
    syn_words = pseudo_words(n_terms * cfg.synonyms_per_term, cfg.seed, "synonyms", set(terms) | set(generic))
    synonyms = {
        t: syn_words[i * cfg.synonyms_per_term : (i + 1) * cfg.synonyms_per_term] for i, t in enumerate(terms)
    }
    topics = [terms[i * cfg.terms_per_topic : (i + 1) * cfg.terms_per_topic] for i in range(cfg.n_topics)]
    world = World({}, synonyms, topics)
    width = len(str(cfg.n_articles - 1))
    for i in range(cfg.n_articles):
        topic = int(rng.integers(cfg.n_topics))
        pool = topics[topic]
        picks = rng.choice(len(pool), size=cfg.title_terms + cfg.abstract_extra_terms, replace=False)
        tt = [pool[j] for j in picks[: cfg.title_terms]]
        extra = [pool[j] for j in picks[cfg.title_terms :]]
        doc_id = f"d{i:0{width}d}"
        world.corpus[doc_id] = Article(
            doc_id, _title_text(tt, rng), _abstract_text(tt, extra, generic, cfg.abstract_filler, rng)
        )
        world.article_topic[doc_id] = topic
        world.title_terms[doc_id] = tt
    return world


def content_terms(text: str) -> list[str]:
    return [w for w in words(text) if w not in FUNCTION_WORDS]


# ---------------------------------------------------------------------------
# logs


@dataclass
class LogGenConfig:
    corpus: Mapping[str, Article]
    synonyms: Mapping[str, Sequence[str]]
    n_keyword: int = 0
    n_nonkeyword: int = 0
    n_navigational: int = 0
    zipf_s: float = 1.5
    max_clicks: int = 1000
    repeat_rate: float = 0.1
    seed: int = 0
    exclude_queries: frozenset = frozenset()

    def __post_init__(self):
        if min(self.n_keyword, self.n_nonkeyword, self.n_navigational) < 0:
            raise UsageError("query counts must be >= 0")
        if self.zipf_s <= 0:
            raise UsageError("Zipf exponent must be > 0")
        if self.max_clicks < 1:
            raise UsageError("max_clicks must be >= 1")


def zipf_clicks(rng, s: float, cap: int, size: int | None = None):
    """Zipf(s) counts truncated to [1, cap] (renormalised pmf)."""
    ranks = np.arange(1, cap + 1, dtype=np.float64)
    p = ranks**-s
    p /= p.sum()
    draw = rng.choice(cap, size=size, p=p) + 1
    return draw if size is not None else int(draw)


def _check_synonyms(title_terms_needed: set[str], synonyms) -> None:
    missing = sorted(t for t in title_terms_needed if not synonyms.get(t))
    if missing:
        shown = ", ".join(missing[:20])
        raise DataError(f"synonym table has no entry for {len(missing)} term(s): {shown}")


def synonym_phrase(article: Article, synonyms, rng, n_terms: int | None = None) -> str:
    """Ordered subset of title terms, each replaced by a synonym, joined by connectives."""
    terms = list(dict.fromkeys(content_terms(article.title)))
    if len(terms) < 2:
        raise DataError(f"article {article.id}: title needs two content terms for a phrase")
    k = n_terms or int(rng.integers(2, min(4, len(terms)) + 1))
    k = min(k, len(terms))
    picks = np.sort(rng.choice(len(terms), size=k, replace=False))
    parts = []
    for n, j in enumerate(picks):
        options = synonyms[terms[j]]
        parts.append(options[rng.integers(len(options))])
        if n + 1 < k and rng.random() < 0.3:
            parts.append(_CONNECT[rng.integers(len(_CONNECT))])
    return " ".join(parts)


def _keyword_phrase(article: Article, rng) -> str:
    title = words(article.title)
    if rng.random() < 0.4:
        return content_terms(article.title)[rng.integers(len(content_terms(article.title)))]
    n = int(rng.integers(2, 4))
    start = int(rng.integers(0, max(1, len(title) - n + 1)))
    return " ".join(title[start : start + n])


def generate_logs(cfg: LogGenConfig) -> list[LogRecord]:
    """Seeded synthetic search log; see the module docstring for the construction."""
    if not cfg.corpus:
        raise DataError("log generation needs a non-empty corpus")
    if cfg.n_nonkeyword:
        needed = {t for a in cfg.corpus.values() for t in content_terms(a.title)}
        _check_synonyms(needed, cfg.synonyms)
    rng = rng_for(cfg.seed, "logs")
    ids = list(cfg.corpus)
    by_word: dict[str, list[str]] = {}
    for d, a in cfg.corpus.items():
        for w in set(words(a.title)) | set(words(a.abstract)):
            by_word.setdefault(w, []).append(d)

    qid_of: dict[str, str] = {}
    records: list[LogRecord] = []

    def qid(text: str) -> str:
        if text not in qid_of:
            qid_of[text] = f"q{len(qid_of):07d}"
        return qid_of[text]

    def clicks_for(docs):
        return {d: int(zipf_clicks(rng, cfg.zipf_s, cfg.max_clicks)) for d in docs}

    plan = ["keyword"] * cfg.n_keyword + ["nonkeyword"] * cfg.n_nonkeyword + ["navigational"] * cfg.n_navigational
    order = rng.permutation(len(plan))
    surnames = pseudo_words(max(50, cfg.n_navigational // 4 + 1), cfg.seed, "surnames", syllables=(2, 2))
    for idx in order:
        kind = plan[idx]
        if kind == "navigational":
            name = f"{surnames[rng.integers(len(surnames))]} {'abcdefghjklmnprst'[rng.integers(17)]}"
            if rng.random() < 0.5:
                name += "abcdefghjklmnprst"[rng.integers(17)]
            records.append(LogRecord(qid(name), name, True, clicks_for([ids[rng.integers(len(ids))]]), kind))
            continue
        for _attempt in range(50):
            doc = ids[rng.integers(len(ids))]
            art = cfg.corpus[doc]
            if kind == "keyword":
                text = _keyword_phrase(art, rng)
                others = [d for d in by_word.get(words(text)[0], []) if d != doc and mentions(cfg.corpus[d], text)]
                clicked = [doc]
                if others and rng.random() < 0.3:
                    clicked.append(others[rng.integers(len(others))])
            else:
                text = synonym_phrase(art, cfg.synonyms, rng)
                clicked = [doc]
            if text in cfg.exclude_queries:
                continue
            q = qid(text)
            rec = LogRecord(q, text, False, clicks_for(clicked), kind)
            if is_keyword_query(rec, cfg.corpus) == (kind == "keyword"):
                break
        else:
            raise DataError(f"could not generate a {kind} query after 50 attempts")
        records.append(rec)
        if rng.random() < cfg.repeat_rate:
            # the same query issued again in a later session
            records.append(LogRecord(q, text, False, clicks_for(clicked[:1]), kind))
    return records


# ---------------------------------------------------------------------------
# evaluation sets


@dataclass
class EvalSet:
    queries: list[tuple[str, str]]
    qrels: dict[str, dict[str, int]]
    terms: dict[str, list[str]] = field(default_factory=dict)  # qid -> original terms behind the synonyms


def generate_eval_set(
    corpus: Mapping[str, Article],
    synonyms: Mapping[str, Sequence[str]],
    n_queries: int,
    seed: int,
    n_terms: int = 3,
) -> EvalSet:
    """Held-out non-keyword queries, one relevant article each (grade 1)."""
    rng = rng_for(seed, "eval")
    reverse = {s: t for t, syns in synonyms.items() for s in syns}
    ids = list(corpus)
    if n_queries > len(ids):
        raise UsageError("more evaluation queries than articles")
    targets = rng.choice(len(ids), size=n_queries, replace=False)
    out = EvalSet([], {})
    for n, j in enumerate(targets):
        art = corpus[ids[j]]
        text = synonym_phrase(art, synonyms, rng, n_terms)
        q = f"eval{n:05d}"
        out.queries.append((q, text))
        out.qrels[q] = {art.id: 1}
        out.terms[q] = [reverse[w] for w in words(text) if w in reverse]
    return out


def inject_near_duplicates(
    world: World,
    eval_set: EvalSet,
    per_query: int,
    fraction: float,
    seed: int,
) -> tuple[dict[str, Article], set[str]]:
    """Add near-copies of evaluation targets that miss one of the query's terms.

    Each distractor repeats the target's title and abstract but swaps one
    query term for another term of the same topic. Returns the enlarged
    corpus and the ids of the queries that received distractors.
    """
    rng = rng_for(seed, "near-duplicates")
    corpus = dict(world.corpus)
    affected: set[str] = set()
    for qid, _text in eval_set.queries:
        if rng.random() >= fraction:
            continue
        target = next(iter(eval_set.qrels[qid]))
        art = world.corpus[target]
        pool = world.topics[world.article_topic[target]]
        present = set(words(art.text))
        replacements = [t for t in pool if t not in present]
        q_terms = eval_set.terms[qid]
        for j in range(per_query):
            old = q_terms[rng.integers(len(q_terms))]
            new = replacements[rng.integers(len(replacements))]
            dup_id = f"{target}-nd{j}"
            title = _swap(art.title.lower(), old, new).capitalize()
            abstract = _swap(art.abstract.lower().rstrip("."), old, new).capitalize() + "."
            corpus[dup_id] = Article(dup_id, title, abstract)
        affected.add(qid)
    return corpus, affected


def _swap(text: str, old: str, new: str) -> str:
    return " ".join(new if w == old else w for w in text.split())


def pairs_budget(n_pairs: int) -> tuple[int, int]:
    """Split a target pair count evenly into keyword/non-keyword query counts."""
    return n_pairs // 2, n_pairs - n_pairs // 2
