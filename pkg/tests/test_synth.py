import numpy as np
import pytest

from clickir.errors import DataError, UsageError
from clickir.logs import curate, keyword_qids
from clickir.seeding import rng_for
from clickir.synth import (
    CorpusGenConfig,
    LogGenConfig,
    content_terms,
    generate_eval_set,
    generate_logs,
    generate_world,
    inject_near_duplicates,
    zipf_clicks,
)
from clickir.text import words


@pytest.fixture(scope="module")
def logs(small_world):
    w = small_world
    return generate_logs(LogGenConfig(w.corpus, w.synonyms, n_keyword=600, n_nonkeyword=600, n_navigational=60, seed=9))


def test_world_is_deterministic():
    cfg = CorpusGenConfig(n_articles=30, n_topics=3, terms_per_topic=10, seed=2)
    a, b = generate_world(cfg), generate_world(cfg)
    assert a.corpus == b.corpus and a.synonyms == b.synonyms
    assert generate_world(CorpusGenConfig(n_articles=30, n_topics=3, terms_per_topic=10, seed=3)).corpus != a.corpus


def test_synonyms_never_occur_in_articles(small_world):
    vocab = {w for a in small_world.corpus.values() for w in words(a.text)}
    syns = {s for group in small_world.synonyms.values() for s in group}
    assert not vocab & syns
    for doc, terms in small_world.title_terms.items():
        assert set(terms) <= set(words(small_world.corpus[doc].title))
        assert set(terms) <= set(words(small_world.corpus[doc].abstract))


def test_corpus_config_validation():
    with pytest.raises(UsageError):
        CorpusGenConfig(n_articles=0)
    with pytest.raises(UsageError):
        CorpusGenConfig(terms_per_topic=3, title_terms=5)


def test_zero_counts_give_empty_stream(small_world):
    assert generate_logs(LogGenConfig(small_world.corpus, small_world.synonyms)) == []


def test_same_seed_same_stream(small_world, logs):
    w = small_world
    again = generate_logs(LogGenConfig(w.corpus, w.synonyms, n_keyword=600, n_nonkeyword=600, n_navigational=60, seed=9))
    assert again == logs
    other = generate_logs(LogGenConfig(w.corpus, w.synonyms, n_keyword=600, n_nonkeyword=600, n_navigational=60, seed=10))
    assert other != logs


def test_counts_by_kind(logs):
    kinds = [r.kind for r in logs]
    # repeats add records, never new generated queries
    assert kinds.count("navigational") == 60
    assert 600 <= kinds.count("keyword") and 600 <= kinds.count("nonkeyword")
    assert all(r.navigational == (r.kind == "navigational") for r in logs)


def test_clicks_within_bounds(logs):
    counts = [c for r in logs for c in r.clicks.values()]
    assert min(counts) >= 1 and max(counts) <= 1000
    assert all(r.clicks for r in logs)


def test_nonkeyword_queries_share_no_content_term(small_world, logs):
    checked = 0
    for r in logs:
        if r.kind != "nonkeyword":
            continue
        q = set(content_terms(r.query))
        for d in r.clicks:
            assert not q & set(content_terms(small_world.corpus[d].text)), (r.query, d)
        checked += 1
    assert checked >= 600


def test_generated_kinds_match_the_keyword_rule(small_world, logs):
    informational = [r for r in logs if not r.navigational]
    keyword = keyword_qids(informational, small_world.corpus)
    wrong = [r.qid for r in informational if (r.qid in keyword) != (r.kind == "keyword")]
    assert wrong == []


def test_curation_conservation(small_world, logs):
    rp, rr, funnel = curate(logs, small_world.corpus)
    distinct = {(r.qid, d) for r in logs if not r.navigational for d in r.clicks}
    assert len(rp) == len(distinct)
    assert set(rr) <= set(rp)
    assert funnel.nonkeyword_queries == len({p.qid for p in rr})
    assert funnel.navigational_queries == len({r.qid for r in logs if r.navigational})


def test_missing_synonym_is_reported(small_world):
    syn = dict(small_world.synonyms)
    victim = sorted(syn)[0]
    del syn[victim]
    with pytest.raises(DataError, match=victim):
        generate_logs(LogGenConfig(small_world.corpus, syn, n_nonkeyword=5, seed=1))


def test_generator_errors(small_world):
    with pytest.raises(DataError):
        generate_logs(LogGenConfig({}, {}, n_keyword=1))
    with pytest.raises(UsageError):
        LogGenConfig(small_world.corpus, small_world.synonyms, n_keyword=-1)
    with pytest.raises(UsageError):
        LogGenConfig(small_world.corpus, small_world.synonyms, zipf_s=0)


def test_excluded_queries_never_generated(small_world, logs):
    banned = frozenset(r.query for r in logs[:100] if not r.navigational)
    w = small_world
    out = generate_logs(LogGenConfig(w.corpus, w.synonyms, n_keyword=600, n_nonkeyword=600, seed=9, exclude_queries=banned))
    assert not banned & {r.query for r in out}


def test_zipf_clicks_law():
    rng = rng_for(0, "zipf-test")
    draws = zipf_clicks(rng, 1.5, 1000, size=200_000)
    assert draws.min() >= 1 and draws.max() <= 1000
    ranks = np.arange(1, 1001, dtype=np.float64)
    p = ranks**-1.5 / (ranks**-1.5).sum()
    for c in (1, 2, 3):
        freq = (draws == c).mean()
        assert abs(freq - p[c - 1]) < 4 * np.sqrt(p[c - 1] / len(draws))


def test_eval_set_is_lexically_disjoint(small_world):
    es = generate_eval_set(small_world.corpus, small_world.synonyms, 50, seed=4)
    assert len(es.queries) == len(es.qrels) == 50
    for qid, text in es.queries:
        (target,) = es.qrels[qid]
        assert not set(content_terms(text)) & set(content_terms(small_world.corpus[target].text))
        assert len(es.terms[qid]) == 3
    with pytest.raises(UsageError):
        generate_eval_set(small_world.corpus, small_world.synonyms, 10_000, seed=4)


def test_near_duplicates_drop_one_query_term(small_world):
    es = generate_eval_set(small_world.corpus, small_world.synonyms, 40, seed=4)
    corpus, affected = inject_near_duplicates(small_world, es, 2, 0.5, seed=6)
    assert 0 < len(affected) < 40
    assert len(corpus) == len(small_world.corpus) + 2 * len(affected)
    for qid in affected:
        (target,) = es.qrels[qid]
        orig = set(words(small_world.corpus[target].text))
        for j in range(2):
            dup = corpus[f"{target}-nd{j}"]
            missing = set(es.terms[qid]) - set(words(dup.text))
            assert len(missing) == 1
            assert len(set(words(dup.text)) - orig) == 1
