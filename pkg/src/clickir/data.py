"""Records exchanged between pipeline stages and their JSON-lines files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    abstract: str = ""

    @property
    def text(self) -> str:
        return f"{self.title} {self.abstract}"


@dataclass(frozen=True)
class ClickPair:
    qid: str
    query: str
    doc_id: str
    clicks: int = 1

    def __post_init__(self):
        if self.clicks < 1:
            raise DataError(f"click count must be >= 1 (qid={self.qid}, doc={self.doc_id})")


@dataclass
class RerankInstance:
    qid: str
    query: str
    pos: str
    negs: list[str]
    clicks: int = 1

    def __post_init__(self):
        if self.pos in self.negs:
            raise DataError(f"positive {self.pos} listed among negatives for qid={self.qid}")


@dataclass
class LogRecord:
    qid: str
    query: str
    navigational: bool = False
    clicks: dict[str, int] = field(default_factory=dict)
    # generator ground truth ("keyword", "nonkeyword", "navigational"); not read by curation
    kind: str | None = None

    def __post_init__(self):
        for doc, c in self.clicks.items():
            if int(c) < 1:
                raise DataError(f"qid={self.qid}: click count for {doc} must be >= 1")


Corpus = dict  # article id -> Article, in file order


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def _field(path, lineno, obj, key, kind=None):
    if key not in obj:
        raise DataError(f"{path}:{lineno}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise DataError(f"{path}:{lineno}: field {key!r} has the wrong type")
    return value


def load_corpus(path: str | Path) -> dict[str, Article]:
    corpus: dict[str, Article] = {}
    for lineno, obj in read_jsonl(path):
        doc_id = str(_field(path, lineno, obj, "id"))
        if doc_id in corpus:
            raise DataError(f"{path}:{lineno}: duplicate article id {doc_id}")
        corpus[doc_id] = Article(
            doc_id, str(_field(path, lineno, obj, "title")), str(obj.get("abstract", ""))
        )
    return corpus


def save_corpus(path: str | Path, articles: Iterable[Article]) -> int:
    return write_jsonl(path, ({"id": a.id, "title": a.title, "abstract": a.abstract} for a in articles))


def load_pairs(path: str | Path) -> list[ClickPair]:
    pairs = []
    for lineno, obj in read_jsonl(path):
        try:
            pairs.append(
                ClickPair(
                    str(_field(path, lineno, obj, "qid")),
                    str(_field(path, lineno, obj, "query")),
                    str(_field(path, lineno, obj, "doc_id")),
                    int(_field(path, lineno, obj, "clicks")),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return pairs


def save_pairs(path: str | Path, pairs: Iterable[ClickPair]) -> int:
    return write_jsonl(
        path,
        ({"qid": p.qid, "query": p.query, "doc_id": p.doc_id, "clicks": p.clicks} for p in pairs),
    )


def load_instances(path: str | Path) -> list[RerankInstance]:
    out = []
    for lineno, obj in read_jsonl(path):
        negs = _field(path, lineno, obj, "negs", list)
        out.append(
            RerankInstance(
                str(_field(path, lineno, obj, "qid")),
                str(_field(path, lineno, obj, "query")),
                str(_field(path, lineno, obj, "pos")),
                [str(n) for n in negs],
                int(obj.get("clicks", 1)),
            )
        )
    return out


def save_instances(path: str | Path, instances: Iterable[RerankInstance]) -> int:
    return write_jsonl(
        path,
        (
            {"qid": i.qid, "query": i.query, "pos": i.pos, "negs": list(i.negs), "clicks": i.clicks}
            for i in instances
        ),
    )


def load_logs(path: str | Path) -> list[LogRecord]:
    out = []
    for lineno, obj in read_jsonl(path):
        clicks = _field(path, lineno, obj, "clicks", dict)
        try:
            out.append(
                LogRecord(
                    str(_field(path, lineno, obj, "qid")),
                    str(_field(path, lineno, obj, "query")),
                    bool(obj.get("navigational", False)),
                    {str(k): int(v) for k, v in clicks.items()},
                    obj.get("kind"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def save_logs(path: str | Path, records: Iterable[LogRecord]) -> int:
    def row(r: LogRecord):
        d = {"qid": r.qid, "query": r.query, "navigational": r.navigational, "clicks": r.clicks}
        if r.kind is not None:
            d["kind"] = r.kind
        return d

    return write_jsonl(path, (row(r) for r in records))


def load_queries(path: str | Path) -> list[tuple[str, str]]:
    """TSV query file: ``qid<TAB>text`` per line."""
    out = []
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'qid<TAB>text'")
        out.append((parts[0].strip(), parts[1].strip()))
    return out


def save_queries(path: str | Path, queries: Iterable[tuple[str, str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{q}\t{t}\n" for q, t in queries), encoding="utf-8")
