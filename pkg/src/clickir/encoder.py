"""Micro transformer encoder with [CLS] pooling and hand-written backprop.

One architecture serves three roles:

* ``query``: ``[CLS] q [SEP]`` -> final-layer CLS vector
* ``document``: ``[CLS] title [SEP] abstract [SEP]`` -> final-layer CLS vector
* ``cross``: ``[CLS] q [SEP] d [SEP]`` -> ``w . cls + b``

Layers are post-LN BERT blocks (self-attention, residual, LayerNorm, GELU
feed-forward, residual, LayerNorm). Keys beyond a sequence's length are
masked out of attention with ``-inf`` so padding never reaches real tokens.
The dtype of the parameters decides the compute dtype, which lets gradient
checks run the very same code in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .errors import NumericError, UsageError
from .seeding import rng_for

ROLES = ("query", "document", "cross")
LN_EPS = 1e-6
INIT_STD = 0.02
_GELU_C = float(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class EncoderConfig:
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 128
    vocab_size: int = 4096
    max_query_len: int = 32
    max_doc_len: int = 256
    seed: int = 0
    init_std: float = INIT_STD

    def __post_init__(self):
        for name in ("hidden", "layers", "heads", "ffn", "vocab_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"EncoderConfig.{name} must be >= 1")
        if self.hidden % self.heads:
            raise UsageError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.max_query_len < 3 or self.max_doc_len < 3:
            raise UsageError("maximum lengths must be >= 3 to hold CLS/SEP")
        if not self.init_std > 0:
            raise UsageError("init_std must be > 0")

    @property
    def cross_max_len(self) -> int:
        return self.max_query_len + self.max_doc_len - 2

    @property
    def max_positions(self) -> int:
        return max(self.max_doc_len, self.cross_max_len)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        fields = cls.__dataclass_fields__
        return cls(**{k: (float(v) if k == "init_std" else int(v)) for k, v in d.items() if k in fields})


def param_shapes(config: EncoderConfig, role: str) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor; a pure function of (config, role)."""
    if role not in ROLES:
        raise UsageError(f"unknown encoder role {role!r}")
    h, f = config.hidden, config.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, h),
        "pos_emb": (config.max_positions, h),
        "type_emb": (2, h),
        "emb_ln.g": (h,),
        "emb_ln.b": (h,),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (h, h)
            shapes[p + f"attn.b{w}"] = (h,)
        shapes[p + "ln1.g"] = (h,)
        shapes[p + "ln1.b"] = (h,)
        shapes[p + "ffn.w1"] = (h, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, h)
        shapes[p + "ffn.b2"] = (h,)
        shapes[p + "ln2.g"] = (h,)
        shapes[p + "ln2.b"] = (h,)
    if role == "cross":
        shapes["head.w"] = (h,)
        shapes["head.b"] = ()
    return shapes


@dataclass
class ParameterSet:
    config: EncoderConfig
    role: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config, self.role)
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            raise UsageError(f"parameter names do not match config/role: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise UsageError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(
            self.config, self.role, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.config, self.role, {k: v.copy() for k, v in self.tensors.items()})

    def equals(self, other: "ParameterSet") -> bool:
        """Bit-exact comparison."""
        return (
            self.config == other.config
            and self.role == other.role
            and list(self.tensors) == list(other.tensors)
            and all(
                self.tensors[k].dtype == other.tensors[k].dtype
                and self.tensors[k].tobytes() == other.tensors[k].tobytes()
                for k in self.tensors
            )
        )


def init_params(config: EncoderConfig, role: str, seed: int | None = None) -> ParameterSet:
    """Normal(0, init_std) weights, zero biases, unit LayerNorm gains."""
    rng = rng_for(config.seed if seed is None else seed, "init", role)
    tensors = {}
    for name, shape in param_shapes(config, role).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            t = np.ones(shape)
        elif leaf.startswith("b"):
            t = np.zeros(shape)
        else:
            t = rng.normal(0.0, config.init_std, size=shape)
        tensors[name] = np.asarray(t, dtype=np.float32)
    return ParameterSet(config, role, tensors)


def zeros_like(params: ParameterSet) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# ---------------------------------------------------------------------------
# forward / backward primitives


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (
        dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


@dataclass
class Trace:
    """Activations recorded by :func:`forward`, consumed by :func:`backward`."""

    params: ParameterSet
    ids: np.ndarray
    segments: np.ndarray
    layers: list = field(default_factory=list)
    emb_cache: tuple | None = None
    cls: np.ndarray | None = None


def forward(
    params: ParameterSet,
    ids: np.ndarray,
    lengths: np.ndarray,
    segments: np.ndarray | None = None,
    record: bool = True,
) -> tuple[np.ndarray, Trace | None]:
    """Encode a padded batch and return the final-layer CLS vectors (B, h)."""
    cfg = params.config
    P = params.tensors
    ids = np.asarray(ids)
    lengths = np.asarray(lengths)
    if ids.ndim != 2 or len(lengths) != ids.shape[0]:
        raise UsageError("ids must be (B, T) with one length per row")
    width = int(lengths.max())
    if width > cfg.max_positions or lengths.min() < 1:
        raise UsageError(f"sequence lengths must lie in [1, {cfg.max_positions}]")
    ids = ids[:, :width]
    if segments is None:
        segments = np.zeros_like(ids)
    else:
        segments = np.asarray(segments)[:, :width]
    B, T = ids.shape
    h, A = cfg.hidden, cfg.heads
    dh = h // A
    scale = float(dh) ** -0.5
    dtype = params.dtype

    key_ok = (np.arange(T)[None, :] < lengths[:, None])[:, None, None, :]
    neg_inf = np.array(-np.inf, dtype=dtype)

    x0 = P["tok_emb"][ids] + P["pos_emb"][:T] + P["type_emb"][segments]
    x, ln_cache = _layernorm(x0, P["emb_ln.g"], P["emb_ln.b"])
    trace = Trace(params, ids, segments, emb_cache=ln_cache) if record else None

    for i in range(cfg.layers):
        p = f"layer{i}."
        x2 = x.reshape(B * T, h)
        q = (x2 @ P[p + "attn.wq"] + P[p + "attn.bq"]).reshape(B, T, A, dh).transpose(0, 2, 1, 3)
        k = (x2 @ P[p + "attn.wk"] + P[p + "attn.bk"]).reshape(B, T, A, dh).transpose(0, 2, 1, 3)
        v = (x2 @ P[p + "attn.wv"] + P[p + "attn.bv"]).reshape(B, T, A, dh).transpose(0, 2, 1, 3)
        s = np.where(key_ok, (q @ k.transpose(0, 1, 3, 2)) * scale, neg_inf)
        s = np.exp(s - s.max(-1, keepdims=True))
        prob = s / s.sum(-1, keepdims=True)
        ctx = (prob @ v).transpose(0, 2, 1, 3).reshape(B * T, h)
        attn = ctx @ P[p + "attn.wo"] + P[p + "attn.bo"]
        x1, ln1 = _layernorm(x2 + attn, P[p + "ln1.g"], P[p + "ln1.b"])
        pre = x1 @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
        act, tanh_t = _gelu(pre)
        ff = act @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        xo, ln2 = _layernorm(x1 + ff, P[p + "ln2.g"], P[p + "ln2.b"])
        if record:
            trace.layers.append((x2, q, k, v, prob, ctx, x1, ln1, pre, act, tanh_t, ln2))
        x = xo.reshape(B, T, h)

    cls = x[:, 0, :]
    if not np.isfinite(cls).all():
        raise NumericError(f"non-finite activation in {params.role} encoder")
    if record:
        trace.cls = cls
    return cls, trace


def backward(trace: Trace | None, d_cls: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of ``sum(d_cls * cls)`` for every parameter.

    Parameters that the recorded pass did not touch get zero tensors.
    """
    if trace is None or trace.cls is None:
        raise UsageError("backward() needs a recorded forward pass")
    params = trace.params
    cfg = params.config
    P = params.tensors
    grads = zeros_like(params)
    B, T = trace.ids.shape
    h, A = cfg.hidden, cfg.heads
    dh = h // A
    scale = float(dh) ** -0.5

    dx = np.zeros((B, T, h), dtype=params.dtype)
    dx[:, 0, :] = d_cls
    dx = dx.reshape(B * T, h)

    for i in reversed(range(cfg.layers)):
        p = f"layer{i}."
        x2, q, k, v, prob, ctx, x1, ln1, pre, act, tanh_t, ln2 = trace.layers[i]
        dsum2, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_back(dx, P[p + "ln2.g"], ln2)
        grads[p + "ffn.w2"] = act.T @ dsum2
        grads[p + "ffn.b2"] = dsum2.sum(0)
        dpre = _gelu_back(dsum2 @ P[p + "ffn.w2"].T, pre, tanh_t)
        grads[p + "ffn.w1"] = x1.T @ dpre
        grads[p + "ffn.b1"] = dpre.sum(0)
        dx1 = dsum2 + dpre @ P[p + "ffn.w1"].T
        dsum1, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_back(dx1, P[p + "ln1.g"], ln1)
        grads[p + "attn.wo"] = ctx.T @ dsum1
        grads[p + "attn.bo"] = dsum1.sum(0)
        dctx = (dsum1 @ P[p + "attn.wo"].T).reshape(B, T, A, dh).transpose(0, 2, 1, 3)
        dprob = dctx @ v.transpose(0, 1, 3, 2)
        dv = prob.transpose(0, 1, 3, 2) @ dctx
        ds = prob * (dprob - (dprob * prob).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx2 = dsum1.copy()
        for name, d in (("q", dq), ("k", dk), ("v", dv)):
            d2 = d.transpose(0, 2, 1, 3).reshape(B * T, h)
            grads[p + f"attn.w{name}"] = x2.T @ d2
            grads[p + f"attn.b{name}"] = d2.sum(0)
            dx2 += d2 @ P[p + f"attn.w{name}"].T
        dx = dx2

    dx0, grads["emb_ln.g"], grads["emb_ln.b"] = _layernorm_back(
        dx.reshape(B, T, h), P["emb_ln.g"], trace.emb_cache
    )
    dx0 = dx0.reshape(B * T, h)
    np.add.at(grads["tok_emb"], trace.ids.reshape(-1), dx0)
    grads["pos_emb"][:T] = dx0.reshape(B, T, h).sum(0)
    np.add.at(grads["type_emb"], trace.segments.reshape(-1), dx0)
    return grads


def cross_head(params: ParameterSet, cls: np.ndarray) -> np.ndarray:
    return cls @ params["head.w"] + params["head.b"]


def cross_forward(params, ids, lengths, segments, record=True):
    """Cross-encoder scores (B,) plus the trace for :func:`cross_backward`."""
    if params.role != "cross":
        raise UsageError("cross_forward needs a cross-encoder parameter set")
    cls, trace = forward(params, ids, lengths, segments, record)
    return cross_head(params, cls), trace


def cross_backward(trace: Trace | None, d_score: np.ndarray) -> dict[str, np.ndarray]:
    if trace is None or trace.cls is None:
        raise UsageError("backward() needs a recorded forward pass")
    params = trace.params
    d_score = np.asarray(d_score, dtype=params.dtype)
    grads = backward(trace, np.outer(d_score, params["head.w"]))
    grads["head.w"] = trace.cls.T @ d_score
    grads["head.b"] = np.asarray(d_score.sum(), dtype=params.dtype)
    return grads


def add_grads(into: dict[str, np.ndarray], other: dict[str, np.ndarray], scale: float = 1.0):
    for k, g in other.items():
        into[k] += g * scale if scale != 1.0 else g
    return into


# ---------------------------------------------------------------------------
# single-sequence inference
#
# Each sequence runs alone at its own length, so a vector depends only on
# its input: padding, batch composition and chunking cannot change a bit.


def encode_sequence(params: ParameterSet, seq) -> np.ndarray:
    n = seq.length
    seg = None if seq.segments is None else seq.segments[None, :n]
    cls, _ = forward(params, seq.ids[None, :n], np.array([n]), seg, record=False)
    return cls[0]


def encode_query(params: ParameterSet, seq) -> np.ndarray:
    """CLS vector of a ``[CLS] q [SEP]`` token sequence."""
    if seq.length > params.config.max_query_len:
        raise UsageError("query sequence longer than max_query_len")
    return encode_sequence(params, seq)


def encode_document(params: ParameterSet, vocab, title: str, abstract: str) -> np.ndarray:
    from .text import document_tokens

    return encode_sequence(params, document_tokens(vocab, title, abstract, params.config.max_doc_len))


def cross_score(params: ParameterSet, query_seq, doc_ids) -> float:
    """``w . Trm([CLS] q [SEP] d [SEP])_CLS + b`` for one query/document pair."""
    from .text import cross_tokens

    if params.role != "cross":
        raise UsageError("cross_score needs a cross-encoder parameter set")
    seq = cross_tokens(query_seq, doc_ids, params.config.cross_max_len)
    return float(cross_head(params, encode_sequence(params, seq)))
