"""Checkpoint container: one JSON header line plus raw float32 payload.

The header carries the format tag, a config echo, free-form metadata,
and a directory of (name, shape, offset) sorted by name; offsets index
bytes into the little-endian payload that follows the newline.  Saving
the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

FORMAT = "hybridevs-checkpoint"
VERSION = 1


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], config: dict, meta: dict) -> None:
    names = sorted(arrays)
    directory = []
    offset = 0
    chunks = []
    for name in names:
        # asarray rather than ascontiguousarray: the latter would
        # silently promote 0-d arrays to shape (1,)
        a = np.asarray(arrays[name], dtype="<f4", order="C")
        directory.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += len(chunks[-1])
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": config,
        "meta": meta,
        "arrays": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob + b"\n")
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (arrays, config, meta)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"checkpoint: cannot read {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"checkpoint: {path} has no header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint: {path} header is not valid JSON: {exc}") from exc
    if header.get("format") != FORMAT:
        raise DataError(f"checkpoint: {path} is not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise DataError(f"checkpoint: {path} has unsupported version {header.get('version')}")
    payload = raw[nl + 1:]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise DataError(f"checkpoint: {path} payload truncated at array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
    return arrays, header.get("config", {}), header.get("meta", {})
