"""Checkpoint container: a JSON header (format version, config, vocab
hashes, training metadata, payload checksum) followed by named tensors as
little-endian float64 blobs."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, FormatVersionMismatch

MAGIC = b"SILCKPT\x01"
FORMAT_VERSION = 1


def save_checkpoint(
    path: "str | Path",
    tensors: dict[str, np.ndarray],
    config: dict,
    metadata: dict | None = None,
    vocabs: dict[str, str] | None = None,
) -> None:
    names = sorted(tensors)
    payload = b"".join(
        np.ascontiguousarray(tensors[name], dtype="<f8").tobytes() for name in names
    )
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "metadata": metadata or {},
        "vocab_hashes": {
            name: hashlib.sha256(text.encode()).hexdigest()[:16]
            for name, text in (vocabs or {}).items()
        },
        "tensors": [
            {"name": name, "shape": list(tensors[name].shape)} for name in names
        ],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    if vocabs:
        for name, text in vocabs.items():
            Path(str(path) + f".{name}.json").write_text(text, encoding="utf-8")


def load_checkpoint(path: "str | Path") -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors, header). Verifies magic, version, and payload
    checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + header_len:
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset : offset + header_len])
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"expected format {FORMAT_VERSION}, got {header.get('format_version')}"
        )
    payload = raw[offset + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    tensors: dict[str, np.ndarray] = {}
    cursor = 0
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if cursor + nbytes > len(payload):
            raise CorruptCheckpoint(f"{path}: truncated payload at {spec['name']}")
        tensors[spec["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=cursor
        ).reshape(shape).copy()
        cursor += nbytes
    return tensors, header
