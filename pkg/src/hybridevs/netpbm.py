"""Binary netpbm I/O: P6 (PPM, RGB) and P5 (PGM, single plane).

Values are stored as maxval-scaled integers, big-endian for 16 bit, and
map to floats in [0,1].  Round-trip error is bounded by 1/(2*maxval).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":  # comment to end of line
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("netpbm: truncated header")
    return buf[start:pos], pos


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a P6 file as (H, W, 3) or a P5 file as (H, W), float32 in [0,1]."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"netpbm: cannot read {path}: {exc}") from exc
    if len(buf) < 2:
        raise DataError(f"netpbm: {path}: not a netpbm file")
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"netpbm: {path}: unsupported magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise DataError(f"netpbm: {path}: bad header token {tok!r}") from exc
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise DataError(f"netpbm: {path}: bad extents {width}x{height}")
    if maxval not in (255, 65535):
        raise DataError(f"netpbm: {path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = count * dtype.itemsize
    raster = buf[pos:pos + need]
    if len(raster) != need:
        raise DataError(f"netpbm: {path}: truncated raster ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.float32) / maxval
    if channels == 3:
        return arr.reshape(height, width, 3)
    return arr.reshape(height, width)


def save_image(img: np.ndarray, path: str | os.PathLike, bits: int = 8) -> None:
    """Write (H, W) as P5 or (H, W, 3) as P6; ``bits`` is 8 or 16."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
        h, w = img.shape[:2]
    elif img.ndim == 2:
        magic = b"P5"
        h, w = img.shape
    else:
        raise DataError(f"netpbm: cannot encode shape {img.shape}")
    if bits not in (8, 16):
        raise DataError(f"netpbm: bits must be 8 or 16, got {bits}")
    maxval = (1 << bits) - 1
    q = np.clip(np.rint(np.clip(img, 0.0, 1.0) * maxval), 0, maxval)
    payload = q.astype(">u2" if bits == 16 else "u1").tobytes()
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    with open(path, "wb") as fh:
        fh.write(header + payload)
