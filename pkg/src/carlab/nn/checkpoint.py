"""Weight checkpoints, format ``car-w/1``.

Layout: one line of UTF-8 JSON header terminated by ``\\n``, then the raw
little-endian parameter blob, each parameter contiguous and row-major in the
order the header lists them. The header carries layer specs, parameter
shapes/dtypes, the owning model's config, the blob length, and a SHA-256 of
the blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from carlab.errors import CorruptFile, FormatVersionMismatch, IoFailure

FORMAT_VERSION = "car-w/1"


def save_checkpoint(path, kind: str, config: dict[str, Any], layers: dict[str, Any], store) -> Path:
    path = Path(path)
    params, chunks = [], []
    for name, p, _ in store.items():
        dt = "<f8" if p.dtype == np.float64 else "<f4"
        params.append({"name": name, "shape": list(p.shape), "dtype": dt})
        chunks.append(np.ascontiguousarray(p, dtype=dt).tobytes())
    blob = b"".join(chunks)
    header = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "layers": layers,
        "params": params,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
            fh.write(b"\n")
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Return ``(header, {name: array})`` after format and integrity checks."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    head, sep, blob = raw.partition(b"\n")
    if not sep:
        raise CorruptFile("checkpoint header is not terminated")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"checkpoint format {header.get('format')!r}, expected {FORMAT_VERSION!r}"
        )
    if len(blob) != header.get("blob_bytes") or hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise CorruptFile("checkpoint blob is truncated or fails its checksum")
    arrays, offset = {}, 0
    for entry in header["params"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(blob, dtype=dt, count=count, offset=offset).reshape(
            entry["shape"]
        )
        offset += count * dt.itemsize
    if offset != len(blob):
        raise CorruptFile("parameter table does not cover the blob")
    return header, arrays


def restore_params(store, arrays: dict[str, np.ndarray]) -> None:
    missing = set(store.names()) ^ set(arrays)
    if missing:
        raise CorruptFile(f"checkpoint parameters do not match the model: {sorted(missing)}")
    for name in store.names():
        store.set(name, arrays[name].astype(store[name].dtype))
