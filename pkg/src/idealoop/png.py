"""Minimal PNG writing and header reading.

Mock backends must produce byte-identical images for identical inputs
across machines and library versions, so encoding is done here with the
stdlib only: 8-bit RGB, filter 0 scanlines, one zlib-compressed IDAT.
Reading is limited to pulling width/height out of the IHDR header, which
is all the wire-protocol shape checks need.
"""

from __future__ import annotations

import struct
import zlib

SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(Exception):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_rgb(width: int, height: int, pixels: bytes) -> bytes:
    """Encode a row-major RGB byte buffer (3 bytes per pixel) as PNG."""
    if width < 1 or height < 1:
        raise PngError("dimensions must be positive")
    expected = width * height * 3
    if len(pixels) != expected:
        raise PngError(f"pixel buffer holds {len(pixels)} bytes, expected {expected}")
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    stride = width * 3
    raw = b"".join(
        b"\x00" + pixels[y * stride : (y + 1) * stride] for y in range(height)
    )
    idat = zlib.compress(raw, 9)
    return SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def read_size(data: bytes) -> tuple[int, int]:
    """Return (width, height) from a PNG header without decoding pixels."""
    if len(data) < 24 or not data.startswith(SIGNATURE):
        raise PngError("not a PNG stream")
    if data[12:16] != b"IHDR":
        raise PngError("first chunk is not IHDR")
    width, height = struct.unpack(">II", data[16:24])
    return width, height


def solid_rgb(width: int, height: int, rgb: tuple[int, int, int]) -> bytes:
    """A single-color PNG; used for placeholder drafts."""
    pixel = bytes(rgb)
    return encode_rgb(width, height, pixel * (width * height))
