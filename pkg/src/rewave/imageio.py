"""Byte-stable PNG encoding and decoding for the two image kinds.

Only what the datasets need is supported: 8-bit grayscale and 8-bit RGB,
no alpha, no interlacing. Encoder settings are pinned (filter type 0 on
every row, fixed zlib level/window/strategy) so identical pixels always
produce identical bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .projection import BinaryImage, RawImage

SIGNATURE = b"\x89PNG\r\n\x1a\n"
GRAY, RGB = 0, 2
COMPRESSION_LEVEL = 6
ZLIB_WBITS = 15
ZLIB_MEMLEVEL = 8


class PngDecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _chunk(kind: bytes, data: bytes) -> bytes:
    crc = zlib.crc32(data, zlib.crc32(kind)) & 0xFFFFFFFF
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", crc)


def _encode(pixels: np.ndarray, color_type: int) -> bytes:
    h, w = pixels.shape[:2]
    rows = np.ascontiguousarray(pixels, dtype=np.uint8).reshape(h, -1)
    raw = np.zeros((h, rows.shape[1] + 1), dtype=np.uint8)  # leading 0 = filter None
    raw[:, 1:] = rows
    comp = zlib.compressobj(
        COMPRESSION_LEVEL, zlib.DEFLATED, ZLIB_WBITS, ZLIB_MEMLEVEL, zlib.Z_DEFAULT_STRATEGY
    )
    idat = comp.compress(raw.tobytes()) + comp.flush()
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def encode_binary(image: BinaryImage) -> bytes:
    if image.pixels.ndim != 2:
        raise ValueError("binary image must be 2-D")
    return _encode(image.pixels, GRAY)


def encode_raw(image: RawImage) -> bytes:
    if image.pixels.ndim != 3 or image.pixels.shape[2] != 3:
        raise ValueError("raw image must be (h, w, 3)")
    return _encode(image.pixels, RGB)


def encode(image) -> bytes:
    if isinstance(image, BinaryImage):
        return encode_binary(image)
    if isinstance(image, RawImage):
        return encode_raw(image)
    raise TypeError(f"cannot encode {type(image).__name__}")


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(data: bytes, h: int, stride: int, bpp: int, offset: int) -> np.ndarray:
    if len(data) != h * (stride + 1):
        raise PngDecodeError(
            f"image data has {len(data)} bytes, expected {h * (stride + 1)}", offset
        )
    buf = np.frombuffer(data, dtype=np.uint8).reshape(h, stride + 1)
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(h):
        ftype = buf[y, 0]
        line = buf[y, 1:]
        if ftype == 0:
            cur = line.copy()
        elif ftype == 2:
            cur = line + prev
        elif ftype in (1, 3, 4):
            cur = bytearray(line.tobytes())
            up = prev.tobytes()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up[i]) >> 1
                else:
                    pred = _paeth(left, up[i], up[i - bpp] if i >= bpp else 0)
                cur[i] = (cur[i] + pred) & 0xFF
            cur = np.frombuffer(bytes(cur), dtype=np.uint8)
        else:
            raise PngDecodeError(f"unknown filter type {ftype} on row {y}", offset)
        out[y] = cur
        prev = out[y]
    return out


def decode(data: bytes) -> BinaryImage | RawImage:
    """Parse a grayscale or RGB 8-bit PNG.

    Raises :class:`PngDecodeError` (with the byte offset of the problem) on
    truncated or malformed streams. Pixel values are returned as stored;
    use ``validate()`` on the result to enforce the value codes.
    """
    data = bytes(data)
    if data[:8] != SIGNATURE:
        raise PngDecodeError("missing PNG signature", 0)
    pos = 8
    header = None
    idat = []
    idat_at = None
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise PngDecodeError("truncated chunk header", pos)
        length, kind = struct.unpack(">I4s", data[pos : pos + 8])
        end = pos + 8 + length + 4
        if end > len(data):
            raise PngDecodeError(f"truncated {kind!r} chunk", pos)
        body = data[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack(">I", data[end - 4 : end])
        if zlib.crc32(body, zlib.crc32(kind)) & 0xFFFFFFFF != crc:
            raise PngDecodeError(f"CRC mismatch in {kind!r} chunk", pos)
        if kind == b"IHDR":
            if length != 13:
                raise PngDecodeError("bad IHDR length", pos)
            header = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            if idat_at is None:
                idat_at = pos
            idat.append(body)
        elif kind == b"IEND":
            seen_end = True
            pos = end
            break
        pos = end
    if header is None:
        raise PngDecodeError("no IHDR chunk", 8)
    if not seen_end:
        raise PngDecodeError("missing IEND chunk", pos)
    if not idat:
        raise PngDecodeError("no IDAT chunk", pos)
    w, h, depth, ctype, comp, filt, interlace = header
    if depth != 8 or ctype not in (GRAY, RGB) or comp or filt or interlace:
        raise PngDecodeError(
            f"unsupported format depth={depth} color={ctype} interlace={interlace}", 8
        )
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise PngDecodeError(f"corrupt image data: {exc}", idat_at) from None
    channels = 1 if ctype == GRAY else 3
    pixels = _unfilter(raw, h, w * channels, channels, idat_at)
    if ctype == GRAY:
        return BinaryImage(pixels.reshape(h, w))
    return RawImage(pixels.reshape(h, w, 3))


def write_png(path, image) -> None:
    Path(path).write_bytes(encode(image))


def read_png(path) -> BinaryImage | RawImage:
    path = Path(path)
    try:
        return decode(path.read_bytes())
    except PngDecodeError as exc:
        raise PngDecodeError(f"{path}: {exc.args[0]}", exc.offset) from None
