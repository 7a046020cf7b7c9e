"""Contrastive training of the retriever and the re-ranker.

The retriever (separate query and document encoders) is trained with
click-weighted in-batch negatives in both directions; the re-ranker
(cross-encoder) is trained against local negatives mined from a window of
the frozen retriever's ranking.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .data import Article, ClickPair, RerankInstance
from .encoder import (
    EncoderConfig,
    ParameterSet,
    add_grads,
    backward,
    cross_backward,
    cross_forward,
    forward,
    init_params,
    zeros_like,
)
from .errors import DataError, UsageError
from .index import EmbeddingMatrix, mips_search, query_vector
from .optim import OptimizerState, adam_step
from .seeding import derive_seed, rng_for
from .text import (
    TokenSequence,
    Vocabulary,
    content_ids,
    cross_tokens,
    document_tokens,
    stack,
    tokenize,
)

log = logging.getLogger(__name__)

__all__ = [
    "ClickPair",
    "RerankInstance",
    "RetrieverTrainConfig",
    "RerankTrainConfig",
    "Retriever",
    "click_weights",
    "retriever_batch_loss",
    "retriever_batch_loss_grad",
    "reranker_loss",
    "reranker_loss_grad",
    "train_retriever",
    "initial_retriever",
    "train_reranker",
    "mine_local_negatives",
    "mine_negatives",
]


@dataclass
class RetrieverTrainConfig:
    batch_size: int = 32
    alpha: float = 0.8
    accum_steps: int = 8
    steps: int = 100_000
    warmup: int = 10_000
    lr: float = 2e-5
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0
    # both encoders start from the same weights, as when both are loaded from one pretrained model
    shared_init: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise UsageError("in-batch negatives need batch_size >= 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError("alpha must lie in [0, 1]")
        if self.accum_steps < 1 or self.steps < 0 or self.warmup < 0:
            raise UsageError("accum_steps >= 1, steps >= 0 and warmup >= 0 are required")


@dataclass
class RerankTrainConfig:
    negatives: int = 31
    window_start: int = 50
    window_end: int = 200
    batch_size: int = 8
    steps: int = 10_000
    warmup: int = 1_000
    lr: float = 2e-5
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.negatives < 1:
            raise UsageError("negatives (M) must be >= 1")
        if not 1 <= self.window_start <= self.window_end:
            raise UsageError("mining window needs 1 <= e <= f")
        if self.batch_size < 1 or self.steps < 0 or self.warmup < 0:
            raise UsageError("batch_size >= 1, steps >= 0 and warmup >= 0 are required")


@dataclass
class Retriever:
    query: ParameterSet
    document: ParameterSet
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def sets(self) -> dict[str, ParameterSet]:
        return {"query": self.query, "document": self.document}


# ---------------------------------------------------------------------------
# losses


def click_weights(clicks: Sequence[int]) -> np.ndarray:
    """``log2(c_i + 1)`` normalised to sum to one."""
    c = np.asarray(clicks, dtype=np.float64)
    if c.size == 0:
        raise UsageError("click_weights needs at least one count")
    if (c < 1).any():
        raise DataError("click counts must be >= 1")
    raw = np.log2(c + 1.0)
    # fsum is correctly rounded, so the weights do not depend on input order
    return raw / math.fsum(raw)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def retriever_batch_loss_grad(q_embs, d_embs, weights, alpha):
    """Loss and its gradients wrt the query and document embeddings.

    Row ``i`` of the score matrix ``S = Q D^T`` is a softmax over documents
    for query ``i`` (query-to-document); column ``i`` is a softmax over
    queries for document ``i`` (document-to-query). Positives sit on the
    diagonal. ``L = alpha * sum w_i Lq2d_i + (1 - alpha) * sum w_i Ld2q_i``.
    """
    q = np.asarray(q_embs)
    d = np.asarray(d_embs)
    w = np.asarray(weights, dtype=q.dtype)
    if q.ndim != 2 or q.shape != d.shape or w.shape != (q.shape[0],):
        raise UsageError("q_embs and d_embs must be (B, h) with B weights")
    B = q.shape[0]
    if B < 2:
        raise UsageError("in-batch negatives need at least two instances")
    S = q @ d.T
    diag = np.diagonal(S)
    lse_rows = _logsumexp(S, 1)
    lse_cols = _logsumexp(S, 0)
    q2d = lse_rows - diag
    d2q = lse_cols - diag
    loss = alpha * float(w @ q2d) + (1.0 - alpha) * float(w @ d2q)

    p_rows = np.exp(S - lse_rows[:, None])
    p_cols = np.exp(S - lse_cols[None, :])
    eye = np.eye(B, dtype=S.dtype)
    dS = alpha * w[:, None] * (p_rows - eye) + (1.0 - alpha) * w[None, :] * (p_cols - eye)
    return loss, dS @ d, dS.T @ q


def retriever_batch_loss(q_embs, d_embs, weights, alpha) -> float:
    return retriever_batch_loss_grad(q_embs, d_embs, weights, alpha)[0]


def reranker_loss_grad(pos_score: float, neg_scores: Sequence[float]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the positive; gradient over ``[pos, *negs]``."""
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise UsageError("re-ranker loss needs at least one negative")
    s = np.concatenate([[float(pos_score)], neg])
    if not np.isfinite(s).all():
        raise UsageError("re-ranker scores must be finite")
    top = int(np.argmax(s))
    m = s[top]
    e = np.exp(s - m)
    z = e.sum()
    # log1p keeps precision when the leader dominates (z close to 1)
    loss = float((m - s[0]) + np.log1p(np.delete(e, top).sum()))
    grad = e / z
    grad[0] -= 1.0
    return loss, grad


def reranker_loss(pos_score: float, neg_scores: Sequence[float]) -> float:
    return reranker_loss_grad(pos_score, neg_scores)[0]


# ---------------------------------------------------------------------------
# tokenised views


class _DocTable:
    def __init__(self, corpus: Mapping[str, Article], vocab: Vocabulary, max_len: int):
        self.row = {doc_id: i for i, doc_id in enumerate(corpus)}
        n = len(corpus)
        self.ids = np.full((n, max_len), 2, dtype=np.int32)
        self.lengths = np.zeros(n, dtype=np.int64)
        for i, art in enumerate(corpus.values()):
            seq = document_tokens(vocab, art.title, art.abstract, max_len)
            self.ids[i] = seq.ids
            self.lengths[i] = seq.length

    def rows(self, doc_ids: Iterable[str], where: str = "") -> np.ndarray:
        try:
            return np.array([self.row[d] for d in doc_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"article {exc.args[0]} not found in corpus{where}") from None


class _QueryTable:
    def __init__(self, queries: Iterable[str], vocab: Vocabulary, max_len: int):
        texts = list(dict.fromkeys(queries))
        self.row = {t: i for i, t in enumerate(texts)}
        self.ids = np.full((len(texts), max_len), 2, dtype=np.int32)
        self.lengths = np.zeros(len(texts), dtype=np.int64)
        self.seqs: list[TokenSequence] = []
        for i, t in enumerate(texts):
            seq = tokenize(vocab, t, max_len)
            self.seqs.append(seq)
            self.ids[i] = seq.ids
            self.lengths[i] = seq.length


def _epoch_batches(n: int, batch: int, seed: int, stream: str) -> Iterator[np.ndarray]:
    """Shuffled batches without replacement; reshuffled every epoch."""
    epoch = 0
    while True:
        perm = rng_for(seed, stream, "epoch", epoch).permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield perm[i : i + batch]
        epoch += 1


def _write_loss_log(path: Path, history):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in history:
            w.writerow([step, repr(float(lr)), repr(float(loss))])


# ---------------------------------------------------------------------------
# retriever


def _retriever_grads(query_p, doc_p, qt, dt, q_rows, d_rows, weights, alpha, scale=1.0):
    qv, q_trace = forward(query_p, qt.ids[q_rows], qt.lengths[q_rows])
    dv, d_trace = forward(doc_p, dt.ids[d_rows], dt.lengths[d_rows])
    loss, dq, dd = retriever_batch_loss_grad(qv, dv, weights, alpha)
    gq = backward(q_trace, (dq * scale).astype(query_p.dtype))
    gd = backward(d_trace, (dd * scale).astype(doc_p.dtype))
    return loss, gq, gd


def retriever_loss_on(
    retriever: Retriever,
    pairs: Sequence[ClickPair],
    corpus: Mapping[str, Article],
    vocab: Vocabulary,
    batch_size: int = 32,
    alpha: float = 0.8,
) -> float:
    """Mean batch loss over consecutive full batches of ``pairs`` (no shuffling)."""
    cfg = retriever.query.config
    qt = _QueryTable((p.query for p in pairs), vocab, cfg.max_query_len)
    dt = _DocTable(corpus, vocab, cfg.max_doc_len)
    losses = []
    for i in range(0, len(pairs) - batch_size + 1, batch_size):
        chunk = pairs[i : i + batch_size]
        q_rows = np.array([qt.row[p.query] for p in chunk])
        d_rows = dt.rows(p.doc_id for p in chunk)
        qv, _ = forward(retriever.query, qt.ids[q_rows], qt.lengths[q_rows], record=False)
        dv, _ = forward(retriever.document, dt.ids[d_rows], dt.lengths[d_rows], record=False)
        w = click_weights([p.clicks for p in chunk])
        losses.append(retriever_batch_loss(qv, dv, w, alpha))
    if not losses:
        raise UsageError("not enough pairs for one batch")
    return float(np.mean(losses))


def initial_retriever(enc_cfg: EncoderConfig, cfg: RetrieverTrainConfig) -> Retriever:
    query_p = init_params(enc_cfg, "query", derive_seed(cfg.seed, "query-encoder"))
    if cfg.shared_init:
        doc_p = ParameterSet(enc_cfg, "document", {k: v.copy() for k, v in query_p.tensors.items()})
    else:
        doc_p = init_params(enc_cfg, "document", derive_seed(cfg.seed, "document-encoder"))
    return Retriever(query_p, doc_p)


def train_retriever(
    pairs: Sequence[ClickPair],
    corpus: Mapping[str, Article],
    vocab: Vocabulary,
    enc_cfg: EncoderConfig,
    cfg: RetrieverTrainConfig,
    out_dir: str | Path | None = None,
    init: Retriever | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> Retriever:
    """Train query and document encoders on click pairs with in-batch negatives."""
    if init is None:
        init = initial_retriever(enc_cfg, cfg)
    query_p, doc_p = init.query.copy(), init.document.copy()
    result = Retriever(query_p, doc_p)
    if cfg.steps == 0:
        return result
    if len(pairs) < cfg.batch_size:
        raise DataError(f"need at least {cfg.batch_size} pairs, got {len(pairs)}")
    if len(vocab) > enc_cfg.vocab_size:
        raise UsageError(f"vocabulary ({len(vocab)}) larger than vocab_size ({enc_cfg.vocab_size})")

    qt = _QueryTable((p.query for p in pairs), vocab, enc_cfg.max_query_len)
    dt = _DocTable(corpus, vocab, enc_cfg.max_doc_len)
    q_index = np.array([qt.row[p.query] for p in pairs], dtype=np.int64)
    clicks = np.array([p.clicks for p in pairs], dtype=np.int64)
    d_index = np.empty(len(pairs), dtype=np.int64)

    batches = _epoch_batches(len(pairs), cfg.batch_size, cfg.seed, "retriever")
    states = [
        OptimizerState.for_params(p, lr=cfg.lr, eps=cfg.eps, warmup=cfg.warmup, total=cfg.steps)
        for p in (query_p, doc_p)
    ]
    out = Path(out_dir) if out_dir is not None else None
    resolved = np.zeros(len(pairs), dtype=bool)
    scale = 1.0 / cfg.accum_steps
    for step in range(1, cfg.steps + 1):
        gq_total = zeros_like(query_p)
        gd_total = zeros_like(doc_p)
        losses = []
        for _ in range(cfg.accum_steps):
            b = next(batches)
            todo = b[~resolved[b]]
            if len(todo):
                d_index[todo] = dt.rows((pairs[i].doc_id for i in todo), " (retriever batch)")
                resolved[todo] = True
            w = click_weights(clicks[b])
            loss, gq, gd = _retriever_grads(
                query_p, doc_p, qt, dt, q_index[b], d_index[b], w, cfg.alpha, scale
            )
            add_grads(gq_total, gq)
            add_grads(gd_total, gd)
            losses.append(loss)
        lr = adam_step(query_p, gq_total, states[0])
        adam_step(doc_p, gd_total, states[1])
        mean_loss = float(np.mean(losses))
        result.history.append((step, lr, mean_loss))
        if progress is not None:
            progress(step, lr, mean_loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("retriever step %d lr %.3g loss %.4f", step, lr, mean_loss)
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"retriever_step{step:07d}.mckp", result.sets(), {"step": step})
    if out is not None:
        _write_loss_log(out / "retriever_loss.csv", result.history)
    return result


# ---------------------------------------------------------------------------
# negative mining


def mine_local_negatives(
    query_encoder: ParameterSet,
    index: EmbeddingMatrix,
    vocab: Vocabulary,
    pair: ClickPair,
    clicked: Iterable[str],
    cfg: RerankTrainConfig,
    seed: int,
    q_vec: np.ndarray | None = None,
) -> RerankInstance | None:
    """Sample up to M unclicked articles from retriever ranks e..min(f, N).

    Returns ``None`` (after logging a warning) when the window holds no
    eligible article. The sample depends only on ``(seed, qid)``.
    """
    if q_vec is None:
        q_vec = query_vector(query_encoder, vocab, pair.query)
    stop = min(cfg.window_end, index.n)
    ranked = mips_search(index, q_vec, max(stop, 1)).ids
    excluded = set(clicked) | {pair.doc_id}
    window = [d for d in ranked[cfg.window_start - 1 : stop] if d not in excluded]
    if not window:
        log.warning("qid %s: mining window [%d, %d] empty after exclusions; skipped",
                    pair.qid, cfg.window_start, stop)
        return None
    rng = rng_for(seed, "mine", pair.qid)
    take = min(cfg.negatives, len(window))
    picks = np.sort(rng.choice(len(window), size=take, replace=False))
    return RerankInstance(pair.qid, pair.query, pair.doc_id, [window[i] for i in picks], pair.clicks)


def mine_negatives(
    query_encoder: ParameterSet,
    index: EmbeddingMatrix,
    vocab: Vocabulary,
    pairs: Sequence[ClickPair],
    cfg: RerankTrainConfig,
    seed: int,
) -> list[RerankInstance]:
    clicked: dict[str, set[str]] = {}
    for p in pairs:
        clicked.setdefault(p.qid, set()).add(p.doc_id)
    vectors: dict[str, np.ndarray] = {}
    out = []
    for p in pairs:
        if p.qid not in vectors:
            vectors[p.qid] = query_vector(query_encoder, vocab, p.query)
        inst = mine_local_negatives(
            query_encoder, index, vocab, p, clicked[p.qid], cfg, seed, vectors[p.qid]
        )
        if inst is not None:
            out.append(inst)
    return out


# ---------------------------------------------------------------------------
# re-ranker


class _CrossBatcher:
    def __init__(self, instances, corpus, vocab, cfg: EncoderConfig):
        self.max_len = cfg.cross_max_len
        self.queries = {}
        self.docs = {}
        for inst in instances:
            if inst.query not in self.queries:
                self.queries[inst.query] = tokenize(vocab, inst.query, cfg.max_query_len)
            for d in (inst.pos, *inst.negs):
                if d not in self.docs:
                    art = corpus.get(d)
                    if art is None:
                        raise DataError(f"article {d} (qid {inst.qid}) not found in corpus")
                    self.docs[d] = content_ids(vocab, art.title, art.abstract)

    def build(self, batch: Sequence[RerankInstance]):
        seqs = []
        for inst in batch:
            q = self.queries[inst.query]
            for d in (inst.pos, *inst.negs):
                seqs.append(cross_tokens(q, self.docs[d], self.max_len))
        return stack(seqs)


def reranker_batch_loss_grad(params: ParameterSet, batch: Sequence[RerankInstance], batcher):
    ids, lengths, segs = batcher.build(batch)
    scores, trace = cross_forward(params, ids, lengths, segs)
    weights = click_weights([inst.clicks for inst in batch])
    d_scores = np.zeros(len(scores))
    total = 0.0
    at = 0
    for w, inst in zip(weights, batch):
        n = 1 + len(inst.negs)
        loss, g = reranker_loss_grad(scores[at], scores[at + 1 : at + n])
        total += w * loss
        d_scores[at : at + n] = w * g
        at += n
    return total, cross_backward(trace, d_scores.astype(params.dtype))


def reranker_loss_on(params, instances, corpus, vocab, batch_size=8) -> float:
    """Mean click-weighted batch loss over consecutive batches (no shuffling)."""
    batcher = _CrossBatcher(instances, corpus, vocab, params.config)
    losses = []
    for i in range(0, len(instances), batch_size):
        batch = instances[i : i + batch_size]
        ids, lengths, segs = batcher.build(batch)
        scores, _ = cross_forward(params, ids, lengths, segs, record=False)
        weights = click_weights([inst.clicks for inst in batch])
        at, total = 0, 0.0
        for w, inst in zip(weights, batch):
            n = 1 + len(inst.negs)
            total += w * reranker_loss(scores[at], scores[at + 1 : at + n])
            at += n
        losses.append(total)
    return float(np.mean(losses))


def train_reranker(
    instances: Sequence[RerankInstance],
    corpus: Mapping[str, Article],
    vocab: Vocabulary,
    enc_cfg: EncoderConfig,
    cfg: RerankTrainConfig,
    out_dir: str | Path | None = None,
    init: ParameterSet | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> tuple[ParameterSet, list[tuple[int, float, float]]]:
    """Train the cross-encoder on mined instances; returns (params, loss history)."""
    if init is None:
        params = init_params(enc_cfg, "cross", derive_seed(cfg.seed, "cross-encoder"))
    else:
        if init.config != enc_cfg:
            raise UsageError("initial parameters do not match the encoder config")
        params = init.copy() if init.role == "cross" else _as_cross(init, cfg.seed)
    history: list[tuple[int, float, float]] = []
    if cfg.steps == 0:
        return params, history
    if not instances:
        raise DataError("no re-ranker training instances")
    for inst in instances:
        if not inst.negs:
            raise DataError(f"instance for qid {inst.qid} has no negatives")
    batcher = _CrossBatcher(instances, corpus, vocab, enc_cfg)
    bs = min(cfg.batch_size, len(instances))
    batches = _epoch_batches(len(instances), bs, cfg.seed, "reranker")
    state = OptimizerState.for_params(params, lr=cfg.lr, eps=cfg.eps, warmup=cfg.warmup, total=cfg.steps)
    out = Path(out_dir) if out_dir is not None else None
    for step in range(1, cfg.steps + 1):
        batch = [instances[i] for i in next(batches)]
        loss, grads = reranker_batch_loss_grad(params, batch, batcher)
        lr = adam_step(params, grads, state)
        history.append((step, lr, loss))
        if progress is not None:
            progress(step, lr, loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("reranker step %d lr %.3g loss %.4f", step, lr, loss)
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"reranker_step{step:07d}.mckp", {"cross": params}, {"step": step})
    if out is not None:
        _write_loss_log(out / "reranker_loss.csv", history)
    return params, history


def _as_cross(encoder: ParameterSet, seed: int) -> ParameterSet:
    """Cross-encoder that starts from another encoder's transformer weights."""
    fresh = init_params(encoder.config, "cross", derive_seed(seed, "cross-encoder"))
    tensors = {k: encoder.tensors[k].copy() if k in encoder.tensors else v for k, v in fresh.tensors.items()}
    return ParameterSet(encoder.config, "cross", tensors)
