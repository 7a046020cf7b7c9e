"""Experiment configuration: one INI file, one global seed.

Sections mirror the sub-config types::

    [experiment]  seed, out_dir
    [paths]       corpus, logs, synonyms, queries, qrels
    [corpus]      synthetic corpus generator (CorpusGenConfig)
    [logs]        synthetic log generator counts (LogGenConfig)
    [encoder]     EncoderConfig
    [retriever]   RetrieverTrainConfig
    [reranker]    RerankTrainConfig (+ init: random | query | document)
    [bm25]        k1, b
    [pipeline]    k, eval_ks, chunk_size, eval_queries, near_duplicates, ...

Every sub-config seed is the global seed; components separate their random
streams by name (see ``clickir.seeding``).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bm25 import Bm25Config
from .encoder import EncoderConfig
from .errors import UsageError
from .synth import CorpusGenConfig
from .training import RerankTrainConfig, RetrieverTrainConfig


@dataclass
class LogCounts:
    n_keyword: int = 25_000
    n_nonkeyword: int = 25_000
    n_navigational: int = 2_000
    zipf_s: float = 1.5
    max_clicks: int = 1000
    repeat_rate: float = 0.1


@dataclass
class PipelineConfig:
    k: int = 100
    eval_ks: tuple[int, ...] = (5, 10, 15)
    chunk_size: int = 256
    eval_queries: int = 200
    eval_query_terms: int = 3
    near_duplicates: int = 0  # distractors per affected evaluation query
    near_duplicate_fraction: float = 0.5

    def __post_init__(self):
        if self.k < 1 or not self.eval_ks or min(self.eval_ks) < 1:
            raise UsageError("pipeline k and every eval k must be >= 1")
        if self.chunk_size < 1:
            raise UsageError("chunk_size must be >= 1")


@dataclass
class Paths:
    corpus: str = ""
    logs: str = ""
    synonyms: str = ""
    queries: str = ""
    qrels: str = ""


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "out"
    paths: Paths = field(default_factory=Paths)
    corpus: CorpusGenConfig = field(default_factory=CorpusGenConfig)
    logs: LogCounts = field(default_factory=LogCounts)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    retriever: RetrieverTrainConfig = field(default_factory=RetrieverTrainConfig)
    reranker: RerankTrainConfig = field(default_factory=RerankTrainConfig)
    reranker_init: str = "query"
    bm25: Bm25Config = field(default_factory=Bm25Config)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def path(self, name: str) -> Path:
        """Configured input path, or the default location inside ``out_dir``."""
        value = getattr(self.paths, name, "")
        if value:
            return Path(value)
        defaults = {
            "corpus": "corpus.jsonl",
            "logs": "logs.jsonl",
            "synonyms": "synonyms.json",
            "queries": "eval_queries.tsv",
            "qrels": "eval_qrels.txt",
        }
        return Path(self.out_dir) / defaults[name]

    def output(self, name: str) -> Path:
        return Path(self.out_dir) / name


_SECTIONS = ("corpus", "logs", "encoder", "retriever", "reranker", "bm25", "pipeline")


def _coerce(kind: Any, raw: str, where: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if "tuple" in str(kind):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise UsageError(f"config {where}: cannot parse {raw!r} as {kind}") from None


def _update(obj, values: dict[str, str], section: str, skip=()):
    fields = {f.name: f.type for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key in skip:
            continue
        if key not in fields:
            raise UsageError(f"config [{section}]: unknown key {key!r}")
        changes[key] = _coerce(fields[key], raw, f"[{section}] {key}")
    try:
        return dataclasses.replace(obj, **changes)
    except UsageError as exc:
        raise UsageError(f"config [{section}]: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise UsageError(f"{source}: {exc}") from None
    cfg = ExperimentConfig()
    known = {"experiment", "paths", *_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise UsageError(f"{source}: unknown section [{section}]")
    if parser.has_section("experiment"):
        exp = dict(parser["experiment"])
        for key in exp:
            if key not in ("seed", "out_dir"):
                raise UsageError(f"config [experiment]: unknown key {key!r}")
        if "seed" in exp:
            cfg.seed = _coerce(int, exp["seed"], "[experiment] seed")
        if "out_dir" in exp:
            cfg.out_dir = exp["out_dir"]
    if parser.has_section("paths"):
        cfg.paths = _update(cfg.paths, dict(parser["paths"]), "paths")
    for section in _SECTIONS:
        if not parser.has_section(section):
            continue
        values = dict(parser[section])
        if section == "reranker" and "init" in values:
            init = values.pop("init").strip()
            if init not in ("random", "query", "document"):
                raise UsageError("config [reranker] init must be random, query or document")
            cfg.reranker_init = init
        setattr(cfg, section, _update(getattr(cfg, section), values, section, skip=("seed",)))
    return with_seed(cfg, cfg.seed)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return with_seed(ExperimentConfig(), 0)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Propagate the global seed into every sub-config."""
    cfg.seed = seed
    cfg.corpus = dataclasses.replace(cfg.corpus, seed=seed)
    cfg.encoder = dataclasses.replace(cfg.encoder, seed=seed)
    cfg.retriever = dataclasses.replace(cfg.retriever, seed=seed)
    cfg.reranker = dataclasses.replace(cfg.reranker, seed=seed)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Effective configuration as INI text (round-trips through ``parse_config``)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["experiment"] = {"seed": str(cfg.seed), "out_dir": cfg.out_dir}
    parser["paths"] = {k: str(v) for k, v in dataclasses.asdict(cfg.paths).items()}
    for section in _SECTIONS:
        values = {}
        for k, v in dataclasses.asdict(getattr(cfg, section)).items():
            if k == "seed":
                continue
            values[k] = " ".join(map(str, v)) if isinstance(v, tuple) else str(v)
        if section == "reranker":
            values["init"] = cfg.reranker_init
        parser[section] = values
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
