"""PGM image and PFM float-map file I/O.

PFM ("Pf", grayscale): 32-bit floats, rows stored bottom-to-top, scale
sign encodes endianness (negative = little-endian).  PGM ("P5"): binary,
16-bit big-endian samples for images, 8-bit for label masks.
"""

from __future__ import annotations

import struct

import numpy as np


class FileFormatError(ValueError):
    """Malformed or truncated image/map file."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class _TokenReader:
    """Pulls whitespace-separated header tokens, skipping '#' comments."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_space_and_comments(self) -> None:
        while self.pos < len(self.data):
            c = self.data[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = self.data.find(b"\n", self.pos)
                if nl < 0:
                    self.pos = len(self.data)
                else:
                    self.pos = nl + 1
            else:
                return

    def token(self, what: str) -> bytes:
        self._skip_space_and_comments()
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if self.pos == start:
            raise FileFormatError(f"missing {what}", start)
        return self.data[start : self.pos]

    def int_token(self, what: str) -> int:
        start = self.pos
        tok = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise FileFormatError(f"bad {what} {tok!r}", start) from None

    def float_token(self, what: str) -> float:
        start = self.pos
        tok = self.token(what)
        try:
            return float(tok)
        except ValueError:
            raise FileFormatError(f"bad {what} {tok!r}", start) from None

    def payload_after_single_whitespace(self, what: str) -> bytes:
        # Header ends with exactly one whitespace byte before the raster.
        if self.pos >= len(self.data):
            raise FileFormatError(f"truncated before {what}", self.pos)
        if not self.data[self.pos : self.pos + 1].isspace():
            raise FileFormatError(f"expected whitespace before {what}", self.pos)
        self.pos += 1
        return self.data[self.pos :]


def save_pfm(path, data: np.ndarray) -> None:
    """Write a 2D float map as little-endian grayscale PFM (float32)."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM wants a 2D map, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(arr).tobytes())


def load_pfm(path) -> np.ndarray:
    """Read a grayscale PFM; returns float32 (H, W)."""
    with open(path, "rb") as f:
        data = f.read()
    rd = _TokenReader(data)
    magic = rd.token("PFM magic")
    if magic == b"PF":
        raise FileFormatError("color PFM not supported", 0)
    if magic != b"Pf":
        raise FileFormatError(f"not a PFM file (magic {magic!r})", 0)
    w = rd.int_token("width")
    h = rd.int_token("height")
    scale = rd.float_token("scale")
    if scale == 0.0:
        raise FileFormatError("zero scale", rd.pos)
    payload = rd.payload_after_single_whitespace("raster")
    need = w * h * 4
    if len(payload) < need:
        raise FileFormatError(
            f"truncated raster: need {need} bytes, have {len(payload)}", rd.pos
        )
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload[:need], dtype=dt).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def save_pgm16(path, values: np.ndarray) -> None:
    """Write a uint16 array as binary 16-bit PGM (big-endian samples)."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2D array, got shape {arr.shape}")
    if arr.dtype != np.uint16:
        if np.any(arr < 0) or np.any(arr > 65535):
            raise ValueError("values outside uint16 range")
        arr = arr.astype(np.uint16)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(arr.astype(">u2").tobytes())


def save_pgm8(path, values: np.ndarray) -> None:
    """Write a uint8 array as binary 8-bit PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2D array, got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM; returns uint8 (maxval <= 255) or uint16."""
    with open(path, "rb") as f:
        data = f.read()
    rd = _TokenReader(data)
    magic = rd.token("PGM magic")
    if magic != b"P5":
        raise FileFormatError(f"not a binary PGM (magic {magic!r})", 0)
    w = rd.int_token("width")
    h = rd.int_token("height")
    maxval = rd.int_token("maxval")
    if not 0 < maxval < 65536:
        raise FileFormatError(f"bad maxval {maxval}", rd.pos)
    payload = rd.payload_after_single_whitespace("raster")
    bps = 1 if maxval <= 255 else 2
    need = w * h * bps
    if len(payload) < need:
        raise FileFormatError(
            f"truncated raster: need {need} bytes, have {len(payload)}", rd.pos
        )
    if bps == 1:
        return np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w).copy()
    return np.frombuffer(payload[:need], dtype=">u2").reshape(h, w).astype(np.uint16)


def image_to_u16(image01: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to uint16 levels."""
    arr = np.clip(np.asarray(image01, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 65535.0).astype(np.uint16)


def u16_to_image(values: np.ndarray) -> np.ndarray:
    """Map uint16 levels back to [0, 1] float64."""
    return np.asarray(values, dtype=np.float64) / 65535.0
