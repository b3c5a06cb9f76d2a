"""Binary checkpoint with a text sidecar.

Layout (all integers little-endian)::

    b"RCEKGQA1"  u32 version  u32 n_sections
    n_sections x (u16 name_len, name, u64 offset, u64 length)
    section payloads

The ``embedding`` section holds ``u64 n, m, d`` followed by the entity real,
entity imaginary, relation real and relation imaginary blocks as f64. The
``filter`` and ``reasoner`` sections are named-tensor lists: ``u32 count``
then per tensor ``u16 name_len, name, u32 ndim, u64 dims..., f64 data``.
Vocabularies, model shapes and the config echo live in ``<path>.meta``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .answer_filter import FilterModel
from .embedding import ComplexEmbeddingTable
from .encoder import Vocabulary
from .reasoner import ReasonerModel

MAGIC = b"RCEKGQA1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    table: ComplexEmbeddingTable
    filter: FilterModel | None = None
    reasoner: ReasonerModel | None = None
    config: dict[str, str] = field(default_factory=dict)


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta")


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _name(buf: io.BytesIO, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _embedding_section(table: ComplexEmbeddingTable) -> bytes:
    n, m, d = table.n_entities, table.n_relations, table.dim
    parts = [struct.pack("<QQQ", n, m, d)]
    parts += [_f64(a) for a in (table.entity_real, table.entity_imag, table.relation_real, table.relation_imag)]
    return b"".join(parts)


def _tensor_section(params: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        data = np.asarray(params[name].data, dtype=np.float64)
        _name(buf, name)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        buf.write(_f64(data))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def f64(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def _read_embedding(data: bytes) -> ComplexEmbeddingTable:
    r = _Reader(data)
    n, m, d = r.unpack("<QQQ")
    return ComplexEmbeddingTable(r.f64((n, d)), r.f64((n, d)), r.f64((m, d)), r.f64((m, d)))


def _read_tensors(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        name = r.name()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        out[name] = r.f64(tuple(shape))
    return out


def _assign(params: dict, saved: dict[str, np.ndarray], section: str) -> None:
    if set(params) != set(saved):
        raise CheckpointError(f"{section}: tensor names do not match the model")
    for name, tensor in params.items():
        if tensor.data.shape != saved[name].shape:
            raise CheckpointError(f"{section}: {name} has shape {saved[name].shape}, "
                                  f"model expects {tensor.data.shape}")
        tensor.data[...] = saved[name]


def _write_sidecar(path: Path, ckpt: Checkpoint) -> None:
    lines = ["[config]"]
    lines += [f"{k}={v}" for k, v in sorted(ckpt.config.items())]
    if ckpt.filter is not None:
        f = ckpt.filter
        lines += ["[filter]", f"hidden={f.hidden}", f"attention={int(f.encoder.seq.attention)}",
                  f"mask_topic={int(f.mask_topic)}", "[filter.vocab]", *f.vocab.tokens]
    if ckpt.reasoner is not None:
        r = ckpt.reasoner
        lines += ["[reasoner]", f"hidden={r.hidden}", f"attention={int(r.attention)}",
                  f"dropout={r.dropout!r}", "[reasoner.vocab]", *r.vocab.tokens]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_sidecar(path: Path) -> dict[str, list[str]]:
    blocks: dict[str, list[str]] = {}
    current = None
    for line in path.read_text(encoding="utf-8").split("\n"):
        if line.startswith("[") and line.endswith("]") and line[1:-1] in (
                "config", "filter", "filter.vocab", "reasoner", "reasoner.vocab"):
            current = line[1:-1]
            blocks[current] = []
        elif current is not None and (line or current.endswith(".vocab")):
            blocks[current].append(line)
    for key in ("filter.vocab", "reasoner.vocab"):
        if key in blocks and blocks[key] and blocks[key][-1] == "":
            blocks[key].pop()
    return blocks


def _kv(lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed sidecar line {line!r}")
        out[key] = value
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    sections = [("embedding", _embedding_section(ckpt.table))]
    if ckpt.filter is not None:
        sections.append(("filter", _tensor_section(ckpt.filter.named_parameters())))
    if ckpt.reasoner is not None:
        sections.append(("reasoner", _tensor_section(ckpt.reasoner.named_parameters())))
    header = io.BytesIO()
    header.write(MAGIC)
    header.write(struct.pack("<II", VERSION, len(sections)))
    table_size = sum(2 + len(name.encode()) + 16 for name, _ in sections)
    offset = header.tell() + table_size
    for name, payload in sections:
        _name(header, name)
        header.write(struct.pack("<QQ", offset, len(payload)))
        offset += len(payload)
    with open(path, "wb") as fh:
        fh.write(header.getvalue())
        for _, payload in sections:
            fh.write(payload)
    _write_sidecar(sidecar_path(path), ckpt)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    sections = {}
    for _ in range(count):
        name = r.name()
        offset, length = r.unpack("<QQ")
        if offset + length > len(data):
            raise CheckpointError(f"{path}: section {name} runs past end of file")
        sections[name] = data[offset:offset + length]
    if "embedding" not in sections:
        raise CheckpointError(f"{path}: missing embedding section")
    table = _read_embedding(sections["embedding"])
    meta = _read_sidecar(sidecar_path(path))
    ckpt = Checkpoint(table, config=_kv(meta.get("config", [])))
    if "filter" in sections:
        info = _kv(meta["filter"])
        vocab = Vocabulary.from_tokens(meta["filter.vocab"])
        model = FilterModel(table, vocab, int(info["hidden"]), None, bool(int(info["attention"])),
                            bool(int(info["mask_topic"])))
        _assign(model.named_parameters(), _read_tensors(sections["filter"]), "filter")
        ckpt.filter = model
    if "reasoner" in sections:
        info = _kv(meta["reasoner"])
        vocab = Vocabulary.from_tokens(meta["reasoner.vocab"])
        model = ReasonerModel(table, vocab, int(info["hidden"]), None, float(info["dropout"]),
                              bool(int(info["attention"])))
        _assign(model.named_parameters(), _read_tensors(sections["reasoner"]), "reasoner")
        ckpt.reasoner = model
    return ckpt
