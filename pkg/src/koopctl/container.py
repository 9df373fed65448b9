"""Binary container: a JSON header followed by row-major little-endian float64 arrays.

Layout::

    KOOPCTL <format-tag> <header-bytes>\\n
    <header JSON, sorted keys>\\n
    <array 0 bytes><array 1 bytes>...

The header carries an ``arrays`` list of ``{"name", "shape"}`` entries in the
order the raw blocks appear. Everything is written with sorted keys so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"KOOPCTL"


class ContainerError(ValueError):
    pass


def write_container(path, fmt: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(header)
    header["format"] = fmt
    header["arrays"] = [
        {"name": name, "shape": list(np.shape(arr))} for name, arr in arrays.items()
    ]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blobs = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in arrays.values()]
    first = MAGIC + b" " + fmt.encode() + b" " + str(len(head)).encode() + b"\n"
    atomic_write_bytes(path, b"".join([first, head, b"\n", *blobs]))


def read_container(path, fmt: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    parts = raw[:nl].split(b" ")
    if nl < 0 or len(parts) != 3 or parts[0] != MAGIC:
        raise ContainerError(f"{path}: not a koopctl container")
    tag = parts[1].decode()
    if fmt is not None and tag != fmt:
        raise ContainerError(f"{path}: expected format {fmt!r}, found {tag!r}")
    n_head = int(parts[2])
    start = nl + 1
    header = json.loads(raw[start : start + n_head])
    offset = start + n_head + 1
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise ContainerError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ContainerError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
