"""Self-describing flat-file envelope used for every persisted artifact.

Layout::

    PDMKIT-ENVELOPE <format_version>\n
    <header length in bytes>\n
    <JSON header, sorted keys>
    <row-major little-endian float64 arrays, in header order>

The header carries a ``type`` tag, free-form ``meta`` and the name/shape of each
array. Arrays are written with ``<f8`` so a load is bit-exact.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArtifactFormatError

MAGIC = b"PDMKIT-ENVELOPE"
FORMAT_VERSION = 1


def dumps(type_tag: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    specs = []
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        specs.append({"name": name, "shape": list(a.shape)})
        payload.append(a.tobytes(order="C"))
    header = {
        "format_version": FORMAT_VERSION,
        "type": type_tag,
        "meta": dict(meta),
        "arrays": specs,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    head = MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n" + str(len(hbytes)).encode() + b"\n"
    return head + hbytes + b"".join(payload)


def loads(blob: bytes, expect_type: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        first, rest = blob.split(b"\n", 1)
        magic, version = first.split(b" ")
        if magic != MAGIC:
            raise ValueError("bad magic")
        if int(version) != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {int(version)}")
        hlen_raw, rest = rest.split(b"\n", 1)
        hlen = int(hlen_raw)
        header = json.loads(rest[:hlen].decode("utf-8"))
        if not isinstance(header, dict) or not {"type", "meta", "arrays"} <= set(header):
            raise ValueError("incomplete header")
    except ArtifactFormatError:
        raise
    except Exception as exc:
        raise ArtifactFormatError(f"not a pdmkit artifact: {exc}") from exc
    if expect_type is not None and header["type"] != expect_type:
        raise ArtifactFormatError(f"expected artifact type {expect_type!r}, found {header['type']!r}")
    body = memoryview(rest)[hlen:]
    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise ArtifactFormatError(f"truncated payload while reading {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(body):
        raise ArtifactFormatError("trailing bytes after payload")
    return header["type"], header["meta"], arrays


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save(path, type_tag: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, dumps(type_tag, meta, arrays))


def load(path, expect_type: str | None = None):
    return loads(Path(path).read_bytes(), expect_type)


def peek(path) -> dict:
    """Return the header of an artifact without materialising its arrays."""
    blob = Path(path).read_bytes()
    first, rest = blob.split(b"\n", 1)
    if not first.startswith(MAGIC):
        raise ArtifactFormatError(f"{path}: not a pdmkit artifact")
    hlen_raw, rest = rest.split(b"\n", 1)
    return json.loads(rest[: int(hlen_raw)].decode("utf-8"))
