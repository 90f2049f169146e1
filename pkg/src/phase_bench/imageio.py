"""Minimal grayscale PFM / PGM readers and writers.

PFM stores 32-bit floats, bottom row first; the sign of the scale line
selects endianness (negative = little-endian). PGM ("P5") stores raw
unsigned samples, top row first.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import MalformedHeaderError, TruncatedPayloadError, UnsupportedFormatError


def _read_tokens(buf: bytes, count: int):
    """Split ``count`` whitespace-separated header tokens (with ``#`` comments) off ``buf``."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("header ended before all fields were read")
        tokens.append(buf[start:pos].decode("ascii", errors="replace"))
    # exactly one whitespace byte separates the header from the payload
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing separator after header")
    return tokens, pos + 1


def _parse_dims(width_tok, height_tok):
    try:
        width, height = int(width_tok), int(height_tok)
    except ValueError:
        raise MalformedHeaderError(f"bad dimensions {width_tok!r} {height_tok!r}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"nonpositive dimensions {width}x{height}")
    return width, height


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float64 array (top row first)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic == b"PF":
        raise UnsupportedFormatError(f"{path}: color PFM is not supported")
    if magic != b"Pf":
        raise MalformedHeaderError(f"{path}: not a PFM file (magic {magic!r})")
    (_, w_tok, h_tok, s_tok), offset = _read_tokens(buf, 4)
    width, height = _parse_dims(w_tok, h_tok)
    try:
        scale = float(s_tok)
    except ValueError:
        raise MalformedHeaderError(f"{path}: bad scale {s_tok!r}") from None
    if scale == 0.0 or not np.isfinite(scale):
        raise MalformedHeaderError(f"{path}: scale must be finite and nonzero")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * 4
    payload = buf[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    return np.flipud(data).astype(np.float64)


def write_pfm(image, path) -> None:
    """Write a 2D array as little-endian grayscale PFM (values cast to float32)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("write_pfm expects a 2D array")
    height, width = image.shape
    data = np.ascontiguousarray(np.flipud(image).astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM ("P5") file, returning samples scaled to ``[0, 1]``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic in (b"P2", b"P1", b"P3", b"P4", b"P6"):
        raise UnsupportedFormatError(f"{path}: netpbm variant {magic!r} is not supported")
    if magic != b"P5":
        raise MalformedHeaderError(f"{path}: not a PGM file (magic {magic!r})")
    (_, w_tok, h_tok, m_tok), offset = _read_tokens(buf, 4)
    width, height = _parse_dims(w_tok, h_tok)
    try:
        max_value = int(m_tok)
    except ValueError:
        raise MalformedHeaderError(f"{path}: bad maxval {m_tok!r}") from None
    if not 0 < max_value < 65536:
        raise UnsupportedFormatError(f"{path}: maxval {max_value} out of range")
    dtype = np.dtype("u1") if max_value < 256 else np.dtype(">u2")
    expected = width * height * dtype.itemsize
    payload = buf[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    return data.astype(np.float64) / max_value


def quantize(image, max_value=255) -> np.ndarray:
    """Clamp to ``[0, 1]`` and round half up onto ``0..max_value``."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * max_value + 0.5).astype(np.int64)


def write_pgm(image, path, max_value=255) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("write_pgm expects a 2D array")
    if not 0 < max_value < 65536:
        raise ValueError("max_value must be in 1..65535")
    height, width = image.shape
    q = quantize(image, max_value)
    dtype = "u1" if max_value < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{max_value}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


def read_image(path) -> np.ndarray:
    """Dispatch on file extension (``.pfm`` or ``.pgm``)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        return read_pfm(path)
    if ext == ".pgm":
        return read_pgm(path)
    raise UnsupportedFormatError(f"{path}: unsupported extension {ext!r}")
