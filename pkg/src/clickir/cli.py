"""Command-line workflow: data generation through evaluation.

Every subcommand reads and writes files in the output directory by default,
so running them in order needs no extra arguments::

    clickir --config exp.ini gen-corpus
    clickir --config exp.ini gen-logs
    clickir --config exp.ini curate
    clickir --config exp.ini build-vocab
    clickir --config exp.ini train-retriever
    clickir --config exp.ini mine-negatives
    clickir --config exp.ini train-reranker
    clickir --config exp.ini encode-corpus
    clickir --config exp.ini search
    clickir --config exp.ini rerank
    clickir --config exp.ini eval --run out/run.reranked.txt
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import data, evaluation, pipeline
from .checkpoint import dumps_checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config, load_config, with_seed
from .errors import ClickIRError, DataError, UsageError
from .index import EmbeddingMatrix, iter_encode_chunks, load_index, save_index
from .logs import curate
from .synth import LogGenConfig, generate_eval_set, generate_logs, generate_world, inject_near_duplicates
from .text import Vocabulary
from .training import Retriever, mine_negatives, train_reranker, train_retriever

log = logging.getLogger("clickir")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


@contextlib.contextmanager
def _stage(name: str):
    """Prefix errors raised inside a stage with the stage name."""
    try:
        yield
    except ClickIRError as exc:
        exc.args = (f"{name}: {exc}",)
        raise


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_synonyms(path: Path) -> dict[str, list[str]]:
    try:
        table = json.loads(_require(path, "synonym table").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(table, dict) or not all(isinstance(v, list) for v in table.values()):
        raise DataError(f"{path}: synonym table must map terms to lists")
    return table


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _vocab(cfg: ExperimentConfig, arg) -> Vocabulary:
    path = Path(arg) if arg else cfg.output("vocab.txt")
    vocab = Vocabulary.load(_require(path, "vocabulary"))
    if len(vocab) > cfg.encoder.vocab_size:
        raise UsageError(f"vocabulary has {len(vocab)} tokens but [encoder] vocab_size is {cfg.encoder.vocab_size}")
    return vocab


def _retriever(cfg: ExperimentConfig, arg) -> Retriever:
    path = Path(arg) if arg else cfg.output("retriever.mckp")
    sets, _ = load_checkpoint(_require(path, "retriever checkpoint"))
    if set(sets) != {"query", "document"}:
        raise DataError(f"{path}: not a retriever checkpoint (sets {sorted(sets)})")
    return Retriever(sets["query"], sets["document"])


def _cross(cfg: ExperimentConfig, arg):
    path = Path(arg) if arg else cfg.output("reranker.mckp")
    sets, _ = load_checkpoint(_require(path, "re-ranker checkpoint"))
    if "cross" not in sets:
        raise DataError(f"{path}: not a re-ranker checkpoint")
    return sets["cross"]


def _loss_csv(history) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "lr", "loss"])
    w.writerows((step, repr(lr), repr(loss)) for step, lr, loss in history)
    return out.getvalue()


def _threads(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(cfg: ExperimentConfig, args) -> int:
    world = generate_world(cfg.corpus)
    p = cfg.pipeline
    eval_set = generate_eval_set(world.corpus, world.synonyms, p.eval_queries, cfg.seed, p.eval_query_terms)
    corpus = world.corpus
    distractors: list[tuple[str, str]] = []
    if p.near_duplicates > 0 and eval_set.queries:
        corpus, affected = inject_near_duplicates(world, eval_set, p.near_duplicates, p.near_duplicate_fraction, cfg.seed)
        for qid in sorted(affected):
            target = next(iter(eval_set.qrels[qid]))
            distractors += [(qid, f"{target}-nd{j}") for j in range(p.near_duplicates)]
    n = data.save_corpus(cfg.path("corpus"), corpus.values())
    _write_text(cfg.path("synonyms"), json.dumps(world.synonyms, indent=0, sort_keys=True) + "\n")
    data.save_queries(cfg.path("queries"), eval_set.queries)
    evaluation.write_qrels(eval_set.qrels, cfg.path("qrels"))
    _write_text(cfg.output("distractors.tsv"), "".join(f"{q}\t{d}\n" for q, d in distractors))
    print(f"articles\t{n}")
    print(f"distractors\t{len(distractors)}")
    print(f"eval_queries\t{len(eval_set.queries)}")
    return 0


def _base_corpus(cfg: ExperimentConfig, corpus: dict) -> dict:
    path = cfg.output("distractors.tsv")
    if not path.exists():
        return corpus
    held = {line.split("\t")[1] for line in path.read_text(encoding="utf-8").splitlines() if line.strip()}
    return {k: v for k, v in corpus.items() if k not in held}


def cmd_gen_logs(cfg: ExperimentConfig, args) -> int:
    corpus = _base_corpus(cfg, data.load_corpus(_require(cfg.path("corpus"), "corpus")))
    synonyms = _load_synonyms(cfg.path("synonyms"))
    exclude = frozenset()
    if cfg.path("queries").exists():
        exclude = frozenset(text for _, text in data.load_queries(cfg.path("queries")))
    lc = cfg.logs
    gen = LogGenConfig(
        corpus, synonyms, lc.n_keyword, lc.n_nonkeyword, lc.n_navigational,
        lc.zipf_s, lc.max_clicks, lc.repeat_rate, cfg.seed, exclude,
    )
    records = generate_logs(gen)
    out = Path(args.output) if args.output else cfg.path("logs")
    n = data.save_logs(out, records)
    for kind in ("keyword", "nonkeyword", "navigational"):
        print(f"{kind}\t{sum(r.kind == kind for r in records)}")
    print(f"total\t{n}")
    return 0


def cmd_curate(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    logs = data.load_logs(_require(Path(args.logs) if args.logs else cfg.path("logs"), "log file"))
    retr, rr, funnel = curate(logs, corpus)
    data.save_pairs(cfg.output("retriever_pairs.jsonl"), retr)
    data.save_pairs(cfg.output("reranker_pairs.jsonl"), rr)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["stage", "count"])
    w.writerows(funnel.rows())
    _write_text(cfg.output("curate_report.csv"), out.getvalue())
    sys.stdout.write(out.getvalue())
    return 0


def cmd_build_vocab(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    pairs_path = Path(args.pairs) if args.pairs else cfg.output("retriever_pairs.jsonl")
    pairs = data.load_pairs(pairs_path) if pairs_path.exists() else []
    vocab = pipeline.training_vocab(corpus, pairs, cfg.encoder.vocab_size)
    vocab.save(cfg.output("vocab.txt"))
    print(f"tokens\t{len(vocab)}")
    return 0


def cmd_train_retriever(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    pairs = data.load_pairs(_require(Path(args.pairs) if args.pairs else cfg.output("retriever_pairs.jsonl"), "pair file"))
    vocab = _vocab(cfg, args.vocab)
    ckpt_dir = cfg.output("checkpoints") if cfg.retriever.checkpoint_every else None
    result = train_retriever(pairs, corpus, vocab, cfg.encoder, cfg.retriever, out_dir=ckpt_dir)
    save_checkpoint(cfg.output("retriever.mckp"), result.sets(), {"kind": "retriever", "steps": cfg.retriever.steps})
    _write_text(cfg.output("retriever_loss.csv"), _loss_csv(result.history))
    if result.history:
        print(f"final_loss\t{result.history[-1][2]:.6f}")
    return 0


def cmd_mine_negatives(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    pairs = data.load_pairs(_require(Path(args.pairs) if args.pairs else cfg.output("reranker_pairs.jsonl"), "pair file"))
    vocab = _vocab(cfg, args.vocab)
    retriever = _retriever(cfg, args.retriever)
    if args.index:
        matrix = load_index(args.index)
    else:
        matrix = EmbeddingMatrix.concat(
            list(iter_encode_chunks(retriever.document, vocab, _base_corpus(cfg, corpus).values(), cfg.pipeline.chunk_size)),
            retriever.document.config.hidden,
        )
    instances = mine_negatives(retriever.query, matrix, vocab, pairs, cfg.reranker, cfg.seed)
    n = data.save_instances(cfg.output("instances.jsonl"), instances)
    print(f"instances\t{n}")
    print(f"skipped\t{len(pairs) - n}")
    return 0


def cmd_train_reranker(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    instances = data.load_instances(_require(Path(args.instances) if args.instances else cfg.output("instances.jsonl"), "instance file"))
    vocab = _vocab(cfg, args.vocab)
    init = None
    if cfg.reranker_init != "random":
        retriever = _retriever(cfg, args.retriever)
        init = retriever.query if cfg.reranker_init == "query" else retriever.document
    ckpt_dir = cfg.output("checkpoints") if cfg.reranker.checkpoint_every else None
    params, history = train_reranker(instances, corpus, vocab, cfg.encoder, cfg.reranker, out_dir=ckpt_dir, init=init)
    save_checkpoint(cfg.output("reranker.mckp"), {"cross": params}, {"kind": "reranker", "steps": cfg.reranker.steps})
    _write_text(cfg.output("reranker_loss.csv"), _loss_csv(history))
    if history:
        print(f"final_loss\t{history[-1][2]:.6f}")
    return 0


def cmd_encode_corpus(cfg: ExperimentConfig, args) -> int:
    """Encode in fixed chunks under ``index_chunks/``; existing matching chunks are reused."""
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    vocab = _vocab(cfg, args.vocab)
    retriever = _retriever(cfg, args.retriever)
    size = cfg.pipeline.chunk_size
    articles = list(corpus.values())
    digest = hashlib.sha256()
    digest.update(dumps_checkpoint({"document": retriever.document}))
    digest.update("\n".join(vocab.tokens).encode())
    digest.update(json.dumps([[a.id, a.title, a.abstract] for a in articles]).encode())
    digest.update(str(size).encode())
    chunk_dir = cfg.output("index_chunks")
    manifest = chunk_dir / "manifest.json"
    key = digest.hexdigest()
    if manifest.exists() and json.loads(manifest.read_text()).get("key") != key:
        for old in chunk_dir.glob("chunk_*.medv"):
            old.unlink()
    chunk_dir.mkdir(parents=True, exist_ok=True)
    manifest.write_text(json.dumps({"key": key, "chunk_size": size}) + "\n")
    parts, reused = [], 0
    for c, start in enumerate(range(0, len(articles), size)):
        path = chunk_dir / f"chunk_{c:05d}.medv"
        if path.exists():
            parts.append(load_index(path))
            reused += 1
            continue
        (part,) = iter_encode_chunks(retriever.document, vocab, articles[start : start + size], size)
        save_index(part, path)
        parts.append(part)
    matrix = EmbeddingMatrix.concat(parts, retriever.document.config.hidden)
    out = Path(args.output) if args.output else cfg.output("index.medv")
    save_index(matrix, out)
    print(f"rows\t{matrix.n}")
    print(f"chunks_reused\t{reused}")
    return 0


def _queries(cfg: ExperimentConfig, arg) -> list[tuple[str, str]]:
    return data.load_queries(_require(Path(arg) if arg else cfg.path("queries"), "query file"))


def cmd_search(cfg: ExperimentConfig, args) -> int:
    queries = _queries(cfg, args.queries)
    k = args.k or cfg.pipeline.k
    if args.bm25:
        corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
        run = pipeline.bm25_run(corpus, queries, k, cfg.bm25)
        default, tag = "run.bm25.txt", "bm25"
    else:
        vocab = _vocab(cfg, args.vocab)
        retriever = _retriever(cfg, args.retriever)
        matrix = load_index(_require(Path(args.index) if args.index else cfg.output("index.medv"), "index"))
        run = pipeline.dense_run(retriever.query, vocab, matrix, queries, k)
        default, tag = "run.retriever.txt", "retriever"
    out = Path(args.output) if args.output else cfg.output(default)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_run(run, out, tag)
    print(f"queries\t{len(run)}")
    return 0


def cmd_rerank(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    queries = _queries(cfg, args.queries)
    vocab = _vocab(cfg, args.vocab)
    cross = _cross(cfg, args.reranker)
    first = evaluation.load_run(_require(Path(args.run) if args.run else cfg.output("run.retriever.txt"), "run file"))
    run = pipeline.rerank_run(cross, vocab, queries, first, corpus)
    out = Path(args.output) if args.output else cfg.output("run.reranked.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_run(run, out, "reranked")
    print(f"queries\t{len(run)}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    run_path = _require(Path(args.run) if args.run else cfg.output("run.reranked.txt"), "run file")
    qrels = evaluation.load_qrels(_require(Path(args.qrels) if args.qrels else cfg.path("qrels"), "qrels"))
    run = evaluation.load_run(run_path)
    ks = _int_list(args.ks) if args.ks else list(cfg.pipeline.eval_ks)
    per_query_path = cfg.output(f"eval_{run_path.stem}_per_query.csv")
    report = evaluation.evaluation_report(run, qrels, ks, per_query_path.name)
    _write_text(per_query_path, evaluation.per_query_table(run, qrels, ks))
    _write_text(cfg.output(f"eval_{run_path.stem}.csv"), report)
    sys.stdout.write(report)
    return 0


def cmd_scaling_curve(cfg: ExperimentConfig, args) -> int:
    corpus = data.load_corpus(_require(cfg.path("corpus"), "corpus"))
    pairs = data.load_pairs(_require(Path(args.pairs) if args.pairs else cfg.output("retriever_pairs.jsonl"), "pair file"))
    vocab = _vocab(cfg, args.vocab)
    sizes = pipeline.check_sizes(_int_list(args.sizes), len(pairs))
    queries = _queries(cfg, args.queries)
    qrels = evaluation.load_qrels(_require(cfg.path("qrels"), "qrels"))
    points = pipeline.scaling_curve(
        pairs, _base_corpus(cfg, corpus), vocab, cfg.encoder, cfg.retriever, sizes, queries, qrels, cfg.pipeline.k,
        progress=lambda n, v: print(f"{n}\t{v:.6f}", file=sys.stderr, flush=True),
    )
    text = pipeline.scaling_csv(points)
    _write_text(Path(args.output) if args.output else cfg.output("scaling.csv"), text)
    sys.stdout.write(text)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = {
    "gen-corpus": (cmd_gen_corpus, "generate a synthetic corpus, synonym table and evaluation set"),
    "gen-logs": (cmd_gen_logs, "generate a synthetic click log"),
    "curate": (cmd_curate, "filter logs and extract retriever / re-ranker pairs"),
    "build-vocab": (cmd_build_vocab, "build the vocabulary from the corpus and training queries"),
    "train-retriever": (cmd_train_retriever, "train the query and document encoders"),
    "mine-negatives": (cmd_mine_negatives, "mine local negatives from the trained retriever"),
    "train-reranker": (cmd_train_reranker, "train the cross-encoder re-ranker"),
    "encode-corpus": (cmd_encode_corpus, "encode the corpus into an index file"),
    "search": (cmd_search, "retrieve top-K articles for a query file"),
    "rerank": (cmd_rerank, "re-rank a run file with the cross-encoder"),
    "eval": (cmd_eval, "score a run file against qrels"),
    "scaling-curve": (cmd_scaling_curve, "NDCG@10 against training-pair count"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clickir", description="Click-trained two-stage retrieval.")
    parser.add_argument("--config", help="INI experiment config")
    parser.add_argument("--seed", type=int, help="global seed (overrides the config)")
    parser.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    parser.add_argument("--out-dir", help="output directory (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name == "gen-logs":
            p.add_argument("--output")
        if name == "curate":
            p.add_argument("--logs")
        if name in ("build-vocab", "train-retriever", "mine-negatives", "scaling-curve"):
            p.add_argument("--pairs")
        if name not in ("gen-corpus", "gen-logs", "curate", "build-vocab", "eval"):
            p.add_argument("--vocab")
        if name in ("mine-negatives", "train-reranker", "encode-corpus", "search"):
            p.add_argument("--retriever", help="retriever checkpoint")
        if name in ("mine-negatives", "search"):
            p.add_argument("--index")
        if name == "train-reranker":
            p.add_argument("--instances")
        if name == "rerank":
            p.add_argument("--reranker", help="re-ranker checkpoint")
            p.add_argument("--run", help="first-stage run file")
        if name in ("search", "rerank", "scaling-curve"):
            p.add_argument("--queries", help="TSV query file (qid<TAB>text)")
        if name == "search":
            p.add_argument("-k", type=int, help="results per query (default: [pipeline] k)")
            p.add_argument("--bm25", action="store_true", help="rank with BM25 instead of the retriever")
        if name in ("encode-corpus", "search", "rerank", "scaling-curve"):
            p.add_argument("--output")
        if name == "eval":
            p.add_argument("--run")
            p.add_argument("--qrels")
            p.add_argument("--ks", help="comma-separated cutoffs (default: [pipeline] eval_ks)")
        if name == "scaling-curve":
            p.add_argument("--sizes", required=True, help="ascending pair counts, e.g. 5000,10000")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
        if args.out_dir:
            cfg.out_dir = args.out_dir
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        _write_text(cfg.output("config.effective.ini"), dump_config(cfg))
        func = COMMANDS[args.command][0]
        started = time.perf_counter()
        with _threads(args.threads), _stage(args.command):
            code = func(cfg, args)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - started)
        return code
    except ClickIRError as exc:
        print(f"clickir: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("clickir: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
