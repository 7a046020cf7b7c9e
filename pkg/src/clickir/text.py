"""Word-level tokenizer, vocabulary and the three input layouts.

Queries are laid out as ``[CLS] q [SEP]``, documents as
``[CLS] title [SEP] abstract [SEP]`` and cross-encoder inputs as
``[CLS] q [SEP] d [SEP]``.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, UsageError

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
SPECIALS = (CLS, SEP, PAD, UNK)
CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3

_WORD = re.compile(r"[^\W_]+")


def words(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise FormatError("vocabulary must start with [CLS], [SEP], [PAD], [UNK]")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise FormatError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        get = self.index.get
        return [get(t, UNK_ID) for t in tokens]

    def token(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(texts: Iterable[str], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary, ties broken lexicographically.

    ``texts`` is any stream of strings; callers usually feed article titles
    and abstracts, plus training queries so that query-only terms get ids.
    """
    if max_size <= len(SPECIALS):
        raise UsageError(f"max_size must exceed {len(SPECIALS)}, got {max_size}")
    counts: Counter[str] = Counter()
    seen = False
    for text in texts:
        seen = True
        counts.update(words(text))
    if not seen:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [t for t, _ in ranked[: max_size - len(SPECIALS)]]
    return Vocabulary(list(SPECIALS) + keep)


@dataclass
class TokenSequence:
    ids: np.ndarray  # int32, padded to the configured maximum
    length: int  # real tokens before padding
    segments: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def padded(self, total: int) -> "TokenSequence":
        """Return a copy extended with PAD up to ``total`` positions."""
        extra = total - len(self.ids)
        if extra < 0:
            raise UsageError("cannot shrink a sequence by padding")
        ids = np.concatenate([self.ids, np.full(extra, PAD_ID, dtype=np.int32)])
        seg = None
        if self.segments is not None:
            seg = np.concatenate([self.segments, np.zeros(extra, dtype=np.int32)])
        return TokenSequence(ids, self.length, seg)


def _pack(ids: list[int], max_len: int, segments: list[int] | None = None) -> TokenSequence:
    arr = np.full(max_len, PAD_ID, dtype=np.int32)
    arr[: len(ids)] = ids
    seg = None
    if segments is not None:
        seg = np.zeros(max_len, dtype=np.int32)
        seg[: len(segments)] = segments
    return TokenSequence(arr, len(ids), seg)


def tokenize(vocab: Vocabulary, text: str, max_len: int) -> TokenSequence:
    if max_len < 3:
        raise UsageError("max_len must be at least 3")
    body = vocab.ids(words(text))[: max_len - 2]
    return _pack([CLS_ID, *body, SEP_ID], max_len)


def document_tokens(vocab: Vocabulary, title: str, abstract: str, max_len: int) -> TokenSequence:
    """``[CLS] title [SEP] abstract [SEP]``; the abstract is cut before the title."""
    if max_len < 3:
        raise UsageError("max_len must be at least 3")
    t = vocab.ids(words(title))
    a = vocab.ids(words(abstract))
    room = max_len - 3
    t = t[:room]
    a = a[: room - len(t)]
    return _pack([CLS_ID, *t, SEP_ID, *a, SEP_ID], max_len)


def content_ids(vocab: Vocabulary, title: str, abstract: str) -> list[int]:
    """Document token ids as fed to the cross-encoder (title then abstract)."""
    return vocab.ids(words(title)) + vocab.ids(words(abstract))


def cross_tokens(query: TokenSequence, doc_ids: Sequence[int], max_len: int) -> TokenSequence:
    """``[CLS] q [SEP] d [SEP]`` with segment ids 0 for the query half.

    The document tail is truncated first; the query is only cut when it
    alone would not leave room for the final separator.
    """
    q = [int(i) for i in query.ids[1 : query.length - 1]]
    q = q[: max(0, max_len - 3)]
    room = max_len - 3 - len(q)
    d = [int(i) for i in doc_ids[:room]]
    ids = [CLS_ID, *q, SEP_ID, *d, SEP_ID]
    segments = [0] * (len(q) + 2) + [1] * (len(d) + 1)
    return _pack(ids, max_len, segments)


def stack(seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Stack sequences into (ids, lengths, segments) trimmed to the longest one."""
    lengths = np.array([s.length for s in seqs], dtype=np.int64)
    width = int(lengths.max()) if len(seqs) else 0
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int32)
    segs = None
    if any(s.segments is not None for s in seqs):
        segs = np.zeros((len(seqs), width), dtype=np.int32)
    for row, s in enumerate(seqs):
        ids[row, : s.length] = s.ids[: s.length]
        if segs is not None and s.segments is not None:
            segs[row, : s.length] = s.segments[: s.length]
    return ids, lengths, segs
