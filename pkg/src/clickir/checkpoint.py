"""Binary checkpoint container.

Layout (little-endian)::

    b"MCKP" | u32 version | u32 len | JSON header (EncoderConfig + roles)
    u32 tensor count
    per tensor: u32 name len | name | u32 rank | u64 dims[rank] | f32 data

A file may hold several parameter sets (e.g. a retriever's query and
document encoders); tensor names are prefixed with ``"<role>/"``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .encoder import EncoderConfig, ParameterSet, param_shapes
from .errors import FormatError, UsageError

MAGIC = b"MCKP"
VERSION = 1


def dumps_checkpoint(sets: Mapping[str, ParameterSet], meta: dict | None = None) -> bytes:
    if not sets:
        raise UsageError("nothing to save")
    configs = {ps.config for ps in sets.values()}
    if len(configs) != 1:
        raise UsageError("all parameter sets in one checkpoint must share a config")
    config = configs.pop()
    header = {
        "config": config.to_dict(),
        "sets": {key: ps.role for key, ps in sets.items()},
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(hbytes)))
    out.write(hbytes)
    tensors = [(f"{key}/{name}", t) for key in sorted(sets) for name, t in sets[key].tensors.items()]
    out.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        nb = name.encode()
        out.write(struct.pack("<I", len(nb)))
        out.write(nb)
        out.write(struct.pack("<I", t.ndim))
        out.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        out.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_checkpoint(data: bytes, source: str = "<bytes>") -> tuple[dict[str, ParameterSet], dict]:
    r = _Reader(data, source)
    if r.take(4) != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version, hlen = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(hlen))
        config = EncoderConfig.from_dict(header["config"])
        roles = header["sets"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: bad checkpoint header ({exc})") from None
    (count,) = r.unpack("<I")
    raw: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        t = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        raw[name] = t
    if r.pos != len(data):
        raise FormatError(f"{source}: {len(data) - r.pos} trailing bytes")
    sets = {}
    for key, role in roles.items():
        try:
            tensors = {n: raw.pop(f"{key}/{n}") for n in param_shapes(config, role)}
            sets[key] = ParameterSet(config, role, tensors)
        except Exception as exc:
            raise FormatError(f"{source}: set {key!r} does not match its config ({exc})") from None
        if not all(np.isfinite(t).all() for t in tensors.values()):
            raise FormatError(f"{source}: set {key!r} holds non-finite values")
    if raw:
        raise FormatError(f"{source}: unexpected tensors {sorted(raw)[:3]}")
    return sets, header.get("meta", {})


def save_checkpoint(path: str | Path, sets: Mapping[str, ParameterSet], meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_checkpoint(sets, meta))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParameterSet], dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    return loads_checkpoint(data, str(path))
