import csv
import dataclasses
import io
import json
from pathlib import Path

import pytest

from clickir import cli, data, evaluation
from clickir.config import dump_config, load_config
from clickir.errors import NumericError
from clickir.index import RankedList

SMOKE = Path(__file__).resolve().parent.parent / "configs" / "smoke.ini"

STAGES = [
    ["gen-corpus"],
    ["gen-logs"],
    ["curate"],
    ["build-vocab"],
    ["train-retriever"],
    ["mine-negatives"],
    ["train-reranker"],
    ["encode-corpus"],
    ["search"],
    ["search", "--bm25"],
    ["rerank"],
    ["eval"],
    ["eval", "--run", "{out}/run.retriever.txt"],
    ["eval", "--run", "{out}/run.bm25.txt"],
]


def run(out, *argv, config=SMOKE):
    argv = [a.format(out=out) for a in argv]
    return cli.main(["--config", str(config), "--out-dir", str(out), *argv])


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    codes = {" ".join(stage): run(out, *stage) for stage in STAGES}
    return out, codes


def test_smoke_pipeline_exits_zero(smoke):
    out, codes = smoke
    assert codes == {k: 0 for k in codes}
    for name in ("index.medv", "retriever.mckp", "reranker.mckp", "run.reranked.txt", "eval_run.reranked.csv"):
        assert (out / name).stat().st_size > 0
    assert (out / "config.effective.ini").read_text() == dump_config(dataclasses.replace(load_config(SMOKE), out_dir=str(out)))


def test_eval_report_is_byte_identical_on_rerun(smoke, tmp_path):
    out, _ = smoke
    before = (out / "eval_run.reranked.csv").read_bytes()
    assert run(out, "eval") == 0
    assert (out / "eval_run.reranked.csv").read_bytes() == before
    rows = list(csv.reader(io.StringIO(before.decode())))
    assert rows[0][:3] == ["metric", "k", "value"] or rows[0][0] == "metric"


def test_cheap_stages_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        for stage in (["gen-corpus"], ["gen-logs"], ["curate"], ["build-vocab"]):
            assert run(out, *stage) == 0
    for name in ("corpus.jsonl", "logs.jsonl", "retriever_pairs.jsonl", "reranker_pairs.jsonl", "vocab.txt", "curate_report.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert run(b, "--seed", "9", "gen-corpus") == 0
    assert (a / "corpus.jsonl").read_bytes() != (b / "corpus.jsonl").read_bytes()


def test_curate_report_matches_outputs(smoke):
    out, _ = smoke
    report = dict(csv.reader(io.StringIO((out / "curate_report.csv").read_text())))
    retr = data.load_pairs(out / "retriever_pairs.jsonl")
    rr = data.load_pairs(out / "reranker_pairs.jsonl")
    logs = data.load_logs(out / "logs.jsonl")
    assert int(report["retriever_pairs"]) == len(retr)
    assert int(report["reranker_pairs"]) == len(rr)
    assert int(report["raw_records"]) == len(logs)
    assert set(rr) <= set(retr)
    funnel = [int(report[k]) for k in ("raw_queries", "informational_queries", "nonkeyword_queries")]
    assert funnel == sorted(funnel, reverse=True)


def test_gen_logs_counts_match_lines(smoke, tmp_path, capsys):
    out, _ = smoke
    target = tmp_path / "logs.jsonl"
    capsys.readouterr()
    assert run(out, "gen-logs", "--output", str(target)) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    lines = target.read_text().splitlines()
    assert int(printed["total"]) == len(lines)
    kinds = [json.loads(line).get("kind") for line in lines]
    assert int(printed["navigational"]) == sum(k == "navigational" for k in kinds)


def test_gen_logs_with_zero_counts(smoke, tmp_path, capsys):
    out, _ = smoke
    cfg = load_config(SMOKE)
    cfg = dataclasses.replace(cfg, logs=dataclasses.replace(cfg.logs, n_keyword=0, n_nonkeyword=0, n_navigational=0))
    ini = tmp_path / "zero.ini"
    ini.write_text(dump_config(cfg))
    target = tmp_path / "empty.jsonl"
    capsys.readouterr()
    assert run(out, "gen-logs", "--output", str(target), config=ini) == 0
    assert target.read_text() == ""
    assert "total\t0" in capsys.readouterr().out


def test_rerank_with_k_equal_n_matches_exhaustive(smoke, tmp_path):
    out, _ = smoke
    corpus = data.load_corpus(out / "corpus.jsonl")
    first = tmp_path / "all.txt"
    assert run(out, "search", "-k", str(len(corpus)), "--output", str(first)) == 0
    reranked = tmp_path / "reranked.txt"
    assert run(out, "rerank", "--run", str(first), "--output", str(reranked)) == 0

    # the same ranking built from the reversed first-stage order
    shuffled = evaluation.load_run(first)
    reverse = {q: RankedList(q, [(d, float(i)) for i, d in enumerate(r.ids)]) for q, r in shuffled.items()}
    flipped = tmp_path / "flipped.txt"
    evaluation.write_run(reverse, flipped, "x")
    again = tmp_path / "again.txt"
    assert run(out, "rerank", "--run", str(flipped), "--output", str(again)) == 0
    a, b = evaluation.load_run(reranked), evaluation.load_run(again)
    assert {q: r.ids for q, r in a.items()} == {q: r.ids for q, r in b.items()}
    assert all(len(r) == len(corpus) for r in a.values())


def test_encode_corpus_resume_reuses_chunks(smoke, capsys):
    out, _ = smoke
    before = (out / "index.medv").read_bytes()
    capsys.readouterr()
    assert run(out, "encode-corpus") == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert int(printed["chunks_reused"]) >= 1
    assert (out / "index.medv").read_bytes() == before
    # a partially complete cache resumes from the missing chunk
    chunks = sorted((out / "index_chunks").glob("chunk_*.medv"))
    chunks[-1].unlink()
    assert run(out, "encode-corpus") == 0
    assert (out / "index.medv").read_bytes() == before


def test_thread_cap_does_not_change_results(smoke, tmp_path):
    out, _ = smoke
    target = tmp_path / "run.txt"
    assert run(out, "--threads", "1", "search", "--output", str(target)) == 0
    assert target.read_bytes() == (out / "run.retriever.txt").read_bytes()


def test_scaling_curve_single_size(smoke, tmp_path, capsys):
    out, _ = smoke
    cfg = load_config(SMOKE)
    cfg = dataclasses.replace(cfg, retriever=dataclasses.replace(cfg.retriever, steps=20, warmup=2))
    ini = tmp_path / "short.ini"
    ini.write_text(dump_config(cfg))
    target = tmp_path / "scaling.csv"
    assert run(out, "scaling-curve", "--sizes", "50", "--output", str(target), config=ini) == 0
    rows = list(csv.reader(io.StringIO(target.read_text())))
    assert len(rows) == 2 and rows[1][0] == "50"
    capsys.readouterr()
    assert run(out, "scaling-curve", "--sizes", "50,50", config=ini) == 1
    assert "duplicate" in capsys.readouterr().err
    assert run(out, "scaling-curve", "--sizes", "100,50", config=ini) == 1
    assert run(out, "scaling-curve", "--sizes", "99999999", config=ini) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["no-such-command"],
        ["search", "--frobnicate"],
        ["scaling-curve"],
        ["eval", "--ks", "five"],
        ["search", "--queries", "/nonexistent/queries.tsv"],
    ],
)
def test_usage_errors_exit_one(smoke, argv, capsys):
    out, _ = smoke
    assert run(out, *argv) == 1
    assert capsys.readouterr().err.startswith("clickir: error:")


def test_missing_config_exits_one(tmp_path):
    assert cli.main(["--config", str(tmp_path / "none.ini"), "--out-dir", str(tmp_path), "eval"]) == 1


def test_malformed_data_exits_two_and_names_the_line(smoke, tmp_path, capsys):
    out, _ = smoke
    logs = tmp_path / "bad_logs.jsonl"
    good = (out / "logs.jsonl").read_text().splitlines()[:3]
    logs.write_text("\n".join([*good, "{not json"]) + "\n")
    capsys.readouterr()
    assert run(tmp_path / "o", "curate", "--logs", str(logs)) in (1, 2)
    # with the corpus in place the failure is the data line itself
    assert run(out, "curate", "--logs", str(logs)) == 2
    err = capsys.readouterr().err
    assert "curate:" in err and f"{logs}:4" in err

    qrels = tmp_path / "bad_qrels.txt"
    qrels.write_text("q1 0 d1 1\nq2 0 d2\n")
    assert run(out, "eval", "--qrels", str(qrels)) == 2
    assert f"{qrels}:2" in capsys.readouterr().err


def test_wrong_checkpoint_kind_exits_two(smoke, tmp_path):
    out, _ = smoke
    target = tmp_path / "run.txt"
    assert run(out, "search", "--retriever", str(out / "reranker.mckp"), "--output", str(target)) == 2


def test_numeric_errors_exit_three(monkeypatch, tmp_path):
    def boom(cfg, args):
        raise NumericError("non-finite loss")

    monkeypatch.setitem(cli.COMMANDS, "eval", (boom, *cli.COMMANDS["eval"][1:]))
    assert cli.main(["--out-dir", str(tmp_path), "eval"]) == 3
