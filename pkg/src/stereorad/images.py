"""Grayscale image file I/O: binary PGM (8/16-bit) and PNG (8/16-bit).

Arrays are (rows, cols); row 0 is the top of the image, matching the scan
row convention. 16-bit PGM uses the big-endian byte order the format
requires.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageIoError(OSError):
    """Unreadable or malformed image file."""


def write_pgm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("PGM output must be a 2D array")
    if arr.dtype == np.uint8:
        maxval, out = 255, arr
    elif arr.dtype == np.uint16:
        maxval, out = 65535, arr.astype(">u2")
    else:
        raise ValueError(f"PGM output must be uint8 or uint16, not {arr.dtype}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode())
        fh.write(out.tobytes())


def read_pgm(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIoError(f"cannot read {path}: {exc}") from exc
    try:
        return _parse_pgm(blob)
    except ImageIoError as exc:
        raise ImageIoError(f"{path}: {exc}") from exc


def _parse_pgm(blob: bytes) -> np.ndarray:
    if not blob.startswith(b"P5"):
        raise ImageIoError("not a binary PGM (P5) file")
    # header: magic, width, height, maxval; comments allowed between tokens
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageIoError("truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        cols, rows, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageIoError(f"bad PGM header: {exc}") from exc
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    data = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=pos)
    if data.size != rows * cols:
        raise ImageIoError("truncated PGM payload")
    arr = data.reshape(rows, cols)
    return arr.astype(np.uint16) if maxval > 255 else arr.copy()


def write_png(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"PNG output must be uint8 or uint16, not {arr.dtype}")
    Image.fromarray(arr).save(path)


def read_image(path) -> np.ndarray:
    """Read a PGM or PNG into a uint8/uint16 array."""
    try:
        return decode_image(Path(path).read_bytes())
    except OSError as exc:
        raise ImageIoError(f"cannot read {path}: {exc}") from exc
    except ImageIoError as exc:
        raise ImageIoError(f"{path}: {exc}") from exc


def decode_image(blob: bytes) -> np.ndarray:
    """Decode PGM or PNG bytes into a uint8/uint16 array."""
    if blob[:2] == b"P5":
        return _parse_pgm(blob)
    import io as _io

    try:
        with Image.open(_io.BytesIO(blob)) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                return np.asarray(im, dtype=np.uint32).astype(np.uint16)
            return np.asarray(im.convert("L"))
    except Exception as exc:
        raise ImageIoError(f"cannot decode image data: {exc}") from exc


def sniff_extension(blob: bytes) -> str:
    """'.pgm' or '.png' by magic bytes; ImageIoError otherwise."""
    if blob[:2] == b"P5":
        return ".pgm"
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        return ".png"
    raise ImageIoError("unsupported image format (expect binary PGM or PNG)")


def preview_8bit(arr: np.ndarray, max_dim: int = 1024) -> np.ndarray:
    """Downscaled, range-normalised 8-bit preview for display."""
    factor = max(1, int(np.ceil(max(arr.shape) / max_dim)))
    small = arr[::factor, ::factor].astype(np.float64)
    lo, hi = float(small.min()), float(small.max())
    if hi <= lo:
        return np.zeros(small.shape, dtype=np.uint8)
    return np.rint((small - lo) / (hi - lo) * 255.0).astype(np.uint8)
