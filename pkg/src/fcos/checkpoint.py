"""Self-describing binary container and model checkpoint I/O.

Layout (all integers little-endian):

    magic "FCOS" | u32 version | u32 json_len | json descriptor (utf-8)
    u32 record_count
    per record: u16 name_len | name | u8 dtype | u8 rank | rank*u32 dims | payload
    u32 crc32 over everything after the magic+version prefix

The same container carries model checkpoints, datasets, and prune plans;
the descriptor's "container" field says which. Records are written in a
fixed order, and the descriptor JSON is key-sorted, so identical inputs
serialize to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .graph import LayerNode, ModelGraph, validate_shapes
from .tensor import Tensor

MAGIC = b"FCOS"
VERSION = 1

_DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("u1"): 3,
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def write_container(path, descriptor: dict, records: list[tuple[str, np.ndarray]]) -> None:
    body = bytearray()
    desc = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(desc))
    body += desc
    body += struct.pack("<I", len(records))
    for name, arr in records:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype("<i8") if np.issubdtype(arr.dtype, np.integer) else arr.astype("<f4")
        nm = name.encode("utf-8")
        body += struct.pack("<H", len(nm))
        body += nm
        body += struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim)
        for d in arr.shape:
            body += struct.pack("<I", d)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(body)
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"{self.path}: expected {n} more bytes at offset {self.pos}, file ends early"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: missing container magic")
    if len(raw) < 12:
        raise CheckpointTruncatedError(f"{path}: shorter than the fixed header")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: container version {version}, this build reads {VERSION}")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    body = raw[8:-4]
    if (zlib.crc32(body) & 0xFFFFFFFF) != stored_crc:
        raise CheckpointChecksumError(f"{path}: payload checksum mismatch")
    r = _Reader(body, path)
    desc_len = r.u32()
    try:
        descriptor = json.loads(r.take(desc_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: descriptor is not valid JSON: {exc}") from exc
    count = r.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        tag = r.u8()
        if tag not in _TAG_DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype tag {tag} in record {name!r}")
        dtype = _TAG_DTYPES[tag]
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        payload = r.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize)
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if r.pos != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - r.pos} trailing bytes after last record")
    return descriptor, records


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# model checkpoints


def _arch_descriptor(model: ModelGraph) -> dict:
    return {
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "meta": model.meta,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "c_in": n.c_in,
                "c_out": n.c_out,
                "k": n.k,
                "stride": n.stride,
                "pad_l": n.pad_l,
                "pad_r": n.pad_r,
                "frozen": n.frozen,
                "tag": n.tag,
                "params": sorted(n.params),
            }
            for n in model.nodes
        ],
        "preds": {str(n.id): list(model.preds[n.id]) for n in model.nodes},
        "coupled_groups": [sorted([i, s] for i, s in grp) for grp in model.coupled_groups],
    }


def save_checkpoint(model: ModelGraph, path, training_meta: dict | None = None) -> None:
    descriptor = {
        "container": "model-checkpoint",
        "architecture": _arch_descriptor(model),
        "training": training_meta or {},
    }
    records = []
    for node in model.nodes:
        for name in sorted(node.params):
            records.append((f"{node.id}.{name}", node.params[name].data))
    write_container(path, descriptor, records)


def load_checkpoint(path) -> ModelGraph:
    descriptor, records = read_container(path)
    if descriptor.get("container") != "model-checkpoint":
        raise CheckpointFormatError(f"{path}: not a model checkpoint")
    arch = descriptor["architecture"]
    nodes = []
    for nd in arch["nodes"]:
        params = {}
        for pname in nd["params"]:
            key = f"{nd['id']}.{pname}"
            if key not in records:
                raise CheckpointFormatError(f"{path}: missing tensor record {key!r}")
            params[pname] = Tensor(records[key])
        nodes.append(
            LayerNode(
                id=nd["id"],
                kind=nd["kind"],
                params=params,
                c_in=nd["c_in"],
                c_out=nd["c_out"],
                k=nd["k"],
                stride=nd["stride"],
                pad_l=nd["pad_l"],
                pad_r=nd["pad_r"],
                frozen=nd["frozen"],
                tag=nd["tag"],
            )
        )
    model = ModelGraph(
        nodes=nodes,
        preds={int(k): tuple(v) for k, v in arch["preds"].items()},
        input_shape=tuple(arch["input_shape"]),
        num_classes=arch["num_classes"],
        coupled_groups=[frozenset((i, s) for i, s in grp) for grp in arch["coupled_groups"]],
        arch=arch["arch"],
        meta=arch.get("meta", {}),
    )
    validate_shapes(model)
    return model


def checkpoint_training_meta(path) -> dict:
    descriptor, _ = read_container(path)
    return descriptor.get("training", {})
