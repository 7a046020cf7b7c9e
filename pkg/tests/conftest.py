import numpy as np
import pytest

from clickir.encoder import EncoderConfig, init_params
from clickir.synth import CorpusGenConfig, generate_world
from clickir.text import build_vocab


@pytest.fixture(scope="session")
def micro_config():
    """Gradient-check scale: h=16, L=2, A=2, vocab 100."""
    return EncoderConfig(hidden=16, layers=2, heads=2, ffn=32, vocab_size=100, max_query_len=6, max_doc_len=10, seed=3)


@pytest.fixture(scope="session")
def small_config():
    return EncoderConfig(hidden=32, layers=2, heads=4, ffn=64, vocab_size=512, max_query_len=12, max_doc_len=40, seed=1)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(CorpusGenConfig(n_articles=200, n_topics=10, terms_per_topic=20, seed=5))


@pytest.fixture(scope="session")
def small_vocab(small_world):
    texts = [a.text for a in small_world.corpus.values()]
    texts += [" ".join(s) for s in small_world.synonyms.values()]
    return build_vocab(texts, 512)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def params64(config, role, seed=0):
    return init_params(config, role, seed).astype(np.float64)


@pytest.fixture(scope="session")
def small_task(small_world):
    """Curated logs over the 200-article world plus a retriever trained on them."""
    from types import SimpleNamespace

    from clickir.index import encode_corpus
    from clickir.logs import curate
    from clickir.pipeline import training_vocab
    from clickir.synth import LogGenConfig, generate_logs
    from clickir.training import RetrieverTrainConfig, train_retriever

    w = small_world
    logs = generate_logs(LogGenConfig(w.corpus, w.synonyms, n_keyword=800, n_nonkeyword=3000, seed=5))
    retriever_pairs, reranker_pairs, funnel = curate(logs, w.corpus)
    cfg = EncoderConfig(hidden=32, layers=2, heads=4, ffn=64, vocab_size=1024,
                        max_query_len=12, max_doc_len=40, seed=1, init_std=0.1)
    vocab = training_vocab(w.corpus, retriever_pairs, cfg.vocab_size)
    train_cfg = RetrieverTrainConfig(batch_size=16, accum_steps=1, steps=800, warmup=40, lr=1e-3, seed=1, log_every=0)
    retriever = train_retriever(retriever_pairs, w.corpus, vocab, cfg, train_cfg)
    matrix = encode_corpus(retriever.document, vocab, w.corpus.values())
    return SimpleNamespace(
        world=w, corpus=w.corpus, logs=logs, funnel=funnel,
        retriever_pairs=retriever_pairs, reranker_pairs=reranker_pairs,
        config=cfg, vocab=vocab, retriever=retriever, matrix=matrix,
    )


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line: verdict(n, passed, detail)."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(n, passed, detail):
        lines[n] = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        print(lines[n])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
