import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clickir.errors import DataError, FormatError, UsageError
from clickir.text import (
    CLS_ID, PAD_ID, SEP_ID, UNK_ID, SPECIALS, Vocabulary, build_vocab, cross_tokens,
    document_tokens, stack, tokenize, words,
)


def test_vocab_frequency_order():
    v = build_vocab(["a b", "a"], 6)
    assert v.tokens == [*SPECIALS, "a", "b"]


def test_vocab_deterministic():
    assert build_vocab(["x"], 10) == build_vocab(["x"], 10)


def test_vocab_lexicographic_tiebreak():
    v = build_vocab(["p q"], 6)
    assert v.tokens[4:] == ["p", "q"]


def test_vocab_cap_counts_specials():
    v = build_vocab(["c c c b b a"], 6)
    assert len(v) == 6 and v.tokens[4:] == ["c", "b"]


def test_vocab_errors():
    with pytest.raises(DataError):
        build_vocab([], 10)
    with pytest.raises(UsageError):
        build_vocab(["a"], 4)


def test_vocab_roundtrip(tmp_path):
    v = build_vocab(["alpha beta gamma", "beta"], 20)
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    for tok in v.tokens:
        assert v.token(v.id(tok)) == tok
    assert v.id("never-seen") == UNK_ID


def test_vocab_rejects_bad_files(tmp_path):
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(FormatError):
        Vocabulary.load(tmp_path / "bad.txt")
    with pytest.raises(FormatError):
        Vocabulary([*SPECIALS, "x", "x"])


def test_special_ids():
    assert (CLS_ID, SEP_ID, PAD_ID, UNK_ID) == (0, 1, 2, 3)


def test_tokenize_empty():
    seq = tokenize(build_vocab(["a"], 10), "", 5)
    assert seq.ids.tolist() == [CLS_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID]
    assert seq.length == 2


def test_tokenize_layout():
    v = build_vocab(["heart attack"], 10)
    seq = tokenize(v, "Heart attack", 6)
    assert seq.ids.tolist() == [CLS_ID, v.id("heart"), v.id("attack"), SEP_ID, PAD_ID, PAD_ID]


def test_tokenize_truncation():
    v = build_vocab(["w"], 10)
    seq = tokenize(v, " ".join(["w"] * 100), 8)
    assert len(seq) == 8 and seq.length == 8 and seq.ids[7] == SEP_ID


def test_words_split_punctuation():
    assert words("Post-partum, DEPRESSION (PPD)!") == ["post", "partum", "depression", "ppd"]


def test_document_tokens_empty_abstract():
    v = build_vocab(["t1 t2"], 10)
    seq = document_tokens(v, "t1 t2", "", 8)
    assert seq.ids.tolist() == [CLS_ID, v.id("t1"), v.id("t2"), SEP_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID]


def test_document_truncates_abstract_first():
    v = build_vocab(["t a"], 10)
    seq = document_tokens(v, "t t t", "a a a a a", 7)
    ids = seq.ids.tolist()
    assert ids == [CLS_ID, v.id("t"), v.id("t"), v.id("t"), SEP_ID, v.id("a"), SEP_ID]


def test_cross_truncates_document_before_query():
    v = build_vocab(["q d"], 10)
    q = tokenize(v, "q q", 6)
    seq = cross_tokens(q, [v.id("d")] * 20, 8)
    assert seq.ids.tolist() == [CLS_ID, v.id("q"), v.id("q"), SEP_ID, v.id("d"), v.id("d"), v.id("d"), SEP_ID]
    assert seq.segments.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_stack_trims_to_longest():
    v = build_vocab(["a"], 10)
    ids, lengths, segs = stack([tokenize(v, "a", 10), tokenize(v, "a a a", 10)])
    assert ids.shape == (2, 5) and lengths.tolist() == [3, 5] and segs is None
    assert ids[0, 3:].tolist() == [PAD_ID, PAD_ID]


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=200), st.integers(3, 40))
def test_tokenize_invariants(text, max_len):
    v = build_vocab(["the a of"], 10)
    seq = tokenize(v, text, max_len)
    ids = seq.ids.tolist()
    assert len(ids) == max_len
    assert ids[0] == CLS_ID and ids[seq.length - 1] == SEP_ID
    assert all(i == PAD_ID for i in ids[seq.length:])
    assert 2 <= seq.length <= max_len


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abcde ", max_size=20), min_size=1, max_size=20), st.integers(5, 30))
def test_vocab_ids_dense(texts, max_size):
    v = build_vocab(texts, max_size)
    assert len(v) <= max_size
    assert [v.id(t) for t in v.tokens] == list(range(len(v)))
