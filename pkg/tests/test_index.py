import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickir.data import Article
from clickir.encoder import encode_document, init_params
from clickir.errors import DataError, FormatError, UsageError
from clickir.index import (
    EmbeddingMatrix,
    RankedList,
    cross_scores,
    dumps_index,
    encode_corpus,
    iter_encode_chunks,
    load_index,
    loads_index,
    mips_search,
    query_vector,
    rerank,
    save_index,
    two_stage_search,
)


def oracle_topk(values, ids, q, k):
    """Full sort of every row; row sums accumulated left to right in double."""
    scores = np.cumsum(values.astype(np.float64) * np.asarray(q, np.float64), axis=1)[:, -1]
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))[:k]
    return [(ids[i], float(scores[i])) for i in order]


def random_matrix(rng, n, h, integer=False):
    if integer:
        values = rng.integers(-3, 4, size=(n, h)).astype(np.float32)
    else:
        values = rng.normal(size=(n, h)).astype(np.float32)
    ids = [f"doc{j}" for j in rng.permutation(n)]  # id order differs from row order
    return EmbeddingMatrix(ids, values)


# ---------------------------------------------------------------------------
# search


def test_orthonormal_rows_identity_case():
    m = EmbeddingMatrix([f"a{i}" for i in range(8)], np.eye(8, dtype=np.float32))
    out = mips_search(m, np.eye(8)[3], 1)
    assert out.entries == [("a3", 1.0)]


def test_random_orthonormal_rows():
    rng = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    m = EmbeddingMatrix([f"a{i:02d}" for i in range(16)], basis)
    out = mips_search(m, m.values[3].astype(np.float64), 1)
    assert out.ids == ["a03"]
    assert abs(out.entries[0][1] - 1.0) < 1e-6


def test_k_at_least_n_returns_everything_sorted(rng):
    m = random_matrix(rng, 30, 5, integer=True)
    q = rng.integers(-2, 3, size=5).astype(np.float64)
    for k in (30, 31, 1000):
        out = mips_search(m, q, k)
        assert out.entries == oracle_topk(m.values, m.ids, q, 30)


def test_large_random_instance_matches_oracle(rng):
    m = random_matrix(rng, 5000, 32)
    for _ in range(3):
        q = rng.normal(size=32)
        for k in (1, 10, 100, 5000):
            assert mips_search(m, q, k).entries == oracle_topk(m.values, m.ids, q, k)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(1, 24), st.integers(1, 450), st.booleans(), st.integers(0, 2**32 - 1))
def test_mips_exactness_property(n, h, k, integer, seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, n, h, integer)
    q = rng.integers(-2, 3, size=h).astype(np.float64) if integer else rng.normal(size=h)
    out = mips_search(m, q, k, "q")
    assert out.entries == oracle_topk(m.values, m.ids, q, k)
    assert len(set(out.ids)) == len(out.ids) == min(k, n)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 16), st.sampled_from([0.125, 0.5, 2.0, 3.0, 7.0, 1024.0]), st.integers(0, 2**32 - 1))
def test_positive_query_scaling_keeps_ranking(n, h, c, seed):
    # integer data keeps every scaled score exact, so ties survive scaling
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, n, h, integer=True)
    q = rng.integers(-3, 4, size=h).astype(np.float64)
    assert mips_search(m, q * c, n).ids == mips_search(m, q, n).ids


def test_ties_break_by_ascending_id():
    m = EmbeddingMatrix(["z", "b", "m", "a"], np.ones((4, 2), np.float32))
    assert mips_search(m, np.ones(2), 3).ids == ["a", "b", "m"]


def test_search_errors(rng):
    m = random_matrix(rng, 5, 4)
    with pytest.raises(UsageError):
        mips_search(m, np.ones(3), 1)
    with pytest.raises(UsageError):
        mips_search(m, np.ones(4), 0)
    with pytest.raises(UsageError):
        mips_search(m, np.array([1.0, np.nan, 0, 0]), 1)


def test_empty_matrix_search():
    m = EmbeddingMatrix([], np.zeros((0, 4), np.float32))
    assert mips_search(m, np.ones(4), 5).entries == []


def test_matrix_validation():
    with pytest.raises(DataError):
        EmbeddingMatrix(["a", "a"], np.zeros((2, 2)))
    with pytest.raises(DataError):
        EmbeddingMatrix(["a"], np.zeros((2, 2)))
    with pytest.raises(DataError):
        EmbeddingMatrix(["a"], np.array([[np.inf, 0.0]]))


# ---------------------------------------------------------------------------
# index files


def test_index_roundtrip_bytes(rng, tmp_path):
    m = random_matrix(rng, 50, 7)
    save_index(m, tmp_path / "x.medv")
    back = load_index(tmp_path / "x.medv")
    assert back.equals(m)
    assert dumps_index(back) == (tmp_path / "x.medv").read_bytes()


def test_empty_index_roundtrip():
    m = EmbeddingMatrix([], np.zeros((0, 3), np.float32))
    data = dumps_index(m)
    back = loads_index(data)
    assert back.n == 0 and back.dim == 3
    assert dumps_index(back) == data


def test_unicode_ids_roundtrip():
    m = EmbeddingMatrix(["é-1", "文献"], np.arange(4, dtype=np.float32).reshape(2, 2))
    assert loads_index(dumps_index(m)).equals(m)


def test_truncated_and_corrupt_files(rng):
    data = dumps_index(random_matrix(rng, 10, 4))
    for cut in (0, 3, 19, 25, len(data) - 1):
        with pytest.raises(FormatError):
            loads_index(data[:cut])
    with pytest.raises(FormatError, match="magic"):
        loads_index(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        loads_index(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError, match="trailing"):
        loads_index(data + b"\0")


def test_missing_index_file(tmp_path):
    with pytest.raises(FormatError):
        load_index(tmp_path / "nope.medv")


# ---------------------------------------------------------------------------
# corpus encoding


@pytest.fixture(scope="module")
def doc_encoder(small_config):
    return init_params(small_config, "document", 21)


def test_chunking_invariance(doc_encoder, small_world, small_vocab):
    arts = list(small_world.corpus.values())
    one = encode_corpus(doc_encoder, small_vocab, arts, chunk_size=len(arts))
    four = encode_corpus(doc_encoder, small_vocab, arts, chunk_size=len(arts) // 4)
    odd = encode_corpus(doc_encoder, small_vocab, arts, chunk_size=7)
    assert len(list(iter_encode_chunks(doc_encoder, small_vocab, arts, len(arts) // 4))) == 4
    assert one.equals(four) and one.equals(odd)
    assert encode_corpus(doc_encoder, small_vocab, arts, chunk_size=50).equals(one)


def test_rows_depend_only_on_their_article(doc_encoder, small_world, small_vocab):
    arts = list(small_world.corpus.values())[:40]
    fwd = encode_corpus(doc_encoder, small_vocab, arts)
    rev = encode_corpus(doc_encoder, small_vocab, arts[::-1])
    assert rev.ids == fwd.ids[::-1]
    assert rev.values[::-1].tobytes() == fwd.values.tobytes()
    a = arts[5]
    single = encode_document(doc_encoder, small_vocab, a.title, a.abstract)
    assert fwd.values[5].tobytes() == single.astype(np.float32).tobytes()


def test_encode_corpus_edge_cases(doc_encoder, small_vocab):
    empty = encode_corpus(doc_encoder, small_vocab, [])
    assert empty.n == 0 and empty.dim == doc_encoder.config.hidden
    assert loads_index(dumps_index(empty)).n == 0
    dup = [Article("x", "a"), Article("x", "b")]
    with pytest.raises(DataError):
        encode_corpus(doc_encoder, small_vocab, dup)
    with pytest.raises(UsageError):
        encode_corpus(doc_encoder, small_vocab, dup, chunk_size=0)


# ---------------------------------------------------------------------------
# re-ranking and two-stage search


@pytest.fixture(scope="module")
def models(small_config, small_world, small_vocab):
    query = init_params(small_config, "query", 31)
    doc = init_params(small_config, "document", 32)
    cross = init_params(small_config, "cross", 33)
    cross.tensors["head.w"][:] = np.random.default_rng(1).normal(size=small_config.hidden)
    matrix = encode_corpus(doc, small_vocab, small_world.corpus.values())
    return query, cross, matrix


def test_rerank_singleton(models, small_world, small_vocab):
    _, cross, _ = models
    cand = RankedList("q", [("d007", 3.5)])
    out = rerank(cross, small_vocab, "any words", cand, small_world.corpus)
    assert out.ids == ["d007"]


def test_rerank_zero_head_orders_by_id(models, small_world, small_vocab):
    _, cross, _ = models
    flat = cross.copy()
    flat.tensors["head.w"][:] = 0.0
    flat.tensors["head.b"][...] = 0.5
    ids = ["d150", "d003", "d099", "d010"]
    out = rerank(flat, small_vocab, "some query", RankedList("q", [(d, 1.0) for d in ids]), small_world.corpus)
    assert out.ids == sorted(ids)
    assert all(s == 0.5 for _, s in out.entries)


def test_rerank_batching_invariance(models, small_world, small_vocab):
    _, cross, _ = models
    ids = list(small_world.corpus)[:25]
    cand = RankedList("q", [(d, 0.0) for d in ids])
    one = rerank(cross, small_vocab, "query text here", cand, small_world.corpus, batch_size=1)
    many = rerank(cross, small_vocab, "query text here", cand, small_world.corpus, batch_size=8)
    assert one.ids == many.ids
    np.testing.assert_allclose([s for _, s in one.entries], [s for _, s in many.entries], rtol=1e-5, atol=1e-6)


def test_rerank_errors(models, small_world, small_vocab):
    query, cross, _ = models
    with pytest.raises(DataError, match="ghost"):
        rerank(cross, small_vocab, "q", RankedList("q", [("ghost", 1.0)]), small_world.corpus)
    with pytest.raises(UsageError):
        cross_scores(query, small_vocab, "q", ["d001"], small_world.corpus)
    assert rerank(cross, small_vocab, "q", RankedList("q", []), small_world.corpus).entries == []


def _queries(world, n, seed):
    rng = np.random.default_rng(seed)
    syn = sorted(world.synonyms)
    return [" ".join(rng.choice(syn, 3)) for _ in range(n)]


def test_two_stage_is_permutation_of_first_stage(models, small_world, small_vocab):
    query, cross, matrix = models
    for i, text in enumerate(_queries(small_world, 8, 2)):
        k = [1, 5, 20, 37][i % 4]
        first = mips_search(matrix, query_vector(query, small_vocab, text), k)
        both = two_stage_search(text, k, query, cross, matrix, small_world.corpus, small_vocab)
        assert sorted(both.ids) == sorted(first.ids)
        if k == 1:
            assert both.ids == first.ids


def test_two_stage_exhaustive_equivalence(models, small_world, small_vocab):
    query, cross, matrix = models
    text = _queries(small_world, 1, 3)[0]
    ids = list(small_world.corpus)
    scores = cross_scores(cross, small_vocab, text, ids, small_world.corpus)
    expected = [d for _, d in sorted(zip(-scores, ids))]
    out = two_stage_search(text, matrix.n, query, cross, matrix, small_world.corpus, small_vocab)
    assert out.ids == expected
