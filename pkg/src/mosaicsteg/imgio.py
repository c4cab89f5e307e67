"""Minimal 8-bit image codecs: PNG (gray / RGB, non-interlaced) and
binary PPM (P6). Decoded images become (3, H, W) float tensors in
[0, 1]; grayscale sources are replicated across the three channels.
Saving requires values already on the 1/255 grid so a load/save round
trip is bit-exact.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .autodiff import ContractError, Tensor

__all__ = ["DecodeError", "FormatError", "load_image", "save_image"]

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class DecodeError(ValueError):
    """The file is damaged or is not valid image data."""


class FormatError(ValueError):
    """The file is valid but uses an unsupported variant."""


def load_image(path):
    """Read a PNG or PPM file into a (3, H, W) tensor in [0, 1]."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if blob.startswith(_PNG_SIG):
        arr = _decode_png(blob, path)
    elif blob.startswith(b"P6"):
        arr = _decode_ppm(blob, path)
    else:
        raise FormatError(f"{path}: not a PNG or binary PPM file")
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    return Tensor(arr.astype(np.float32) / 255.0)


def save_image(tensor, path):
    """Write a quantized-range (3, H, W) tensor as PNG or PPM by extension."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected a (3, H, W) tensor, got {arr.shape}")
    scaled = arr.astype(np.float64) * 255.0
    rounded = np.floor(scaled + 0.5)
    if np.any(scaled < -1e-6) or np.any(scaled > 255.0 + 1e-6) \
            or np.max(np.abs(scaled - rounded)) > 1e-3:
        raise ContractError("tensor values must lie on the 8-bit grid in [0, 1]")
    pixels = rounded.astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        data = _encode_png(pixels)
    elif ext == ".ppm":
        data = _encode_ppm(pixels)
    else:
        raise FormatError(f"unsupported extension {ext!r} (use .png or .ppm)")
    with open(path, "wb") as fh:
        fh.write(data)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _decode_png(blob, path):
    pos = len(_PNG_SIG)
    ihdr = None
    idat = []
    try:
        while pos < len(blob):
            if pos + 8 > len(blob):
                raise DecodeError(f"{path}: truncated chunk header")
            length, ctype = struct.unpack(">I4s", blob[pos:pos + 8])
            pos += 8
            if pos + length + 4 > len(blob):
                raise DecodeError(f"{path}: truncated chunk data")
            data = blob[pos:pos + length]
            crc = struct.unpack(">I", blob[pos + length:pos + length + 4])[0]
            if zlib.crc32(ctype + data) & 0xFFFFFFFF != crc:
                raise DecodeError(f"{path}: chunk CRC mismatch")
            pos += length + 4
            if ctype == b"IHDR":
                ihdr = data
            elif ctype == b"IDAT":
                idat.append(data)
            elif ctype == b"IEND":
                break
    except struct.error as exc:
        raise DecodeError(f"{path}: malformed chunk structure") from exc

    if ihdr is None or len(ihdr) != 13:
        raise DecodeError(f"{path}: missing or malformed IHDR")
    w, h, depth, color, comp, filt, interlace = struct.unpack(">IIBBBBB", ihdr)
    if depth != 8:
        raise FormatError(f"{path}: unsupported bit depth {depth}")
    if color not in (0, 2):
        raise FormatError(f"{path}: unsupported color type {color}")
    if comp != 0 or filt != 0:
        raise DecodeError(f"{path}: invalid compression/filter method")
    if interlace != 0:
        raise FormatError(f"{path}: interlaced PNG not supported")
    if not idat:
        raise DecodeError(f"{path}: no image data")
    channels = 1 if color == 0 else 3
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise DecodeError(f"{path}: corrupt compressed stream") from exc

    stride = w * channels
    if len(raw) != h * (stride + 1):
        raise DecodeError(f"{path}: wrong decompressed size")
    out = np.empty((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for row in range(h):
        off = row * (stride + 1)
        ftype = raw[off]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=off + 1)
        out[row] = _unfilter(ftype, line, prev, channels, path)
        prev = out[row]
    if channels == 1:
        return out.reshape(h, w)
    return out.reshape(h, w, 3).transpose(2, 0, 1)


def _unfilter(ftype, line, prev, bpp, path):
    if ftype == 0:
        return line.copy()
    if ftype == 2:
        return line + prev
    cur = np.empty_like(line)
    if ftype == 1:
        cur[:bpp] = line[:bpp]
        for i in range(bpp, line.size):
            cur[i] = line[i] + cur[i - bpp]
        return cur
    if ftype == 3:
        for i in range(line.size):
            left = int(cur[i - bpp]) if i >= bpp else 0
            cur[i] = (int(line[i]) + (left + int(prev[i])) // 2) & 0xFF
        return cur
    if ftype == 4:
        for i in range(line.size):
            left = int(cur[i - bpp]) if i >= bpp else 0
            up = int(prev[i])
            ul = int(prev[i - bpp]) if i >= bpp else 0
            p = left + up - ul
            pa, pb, pc = abs(p - left), abs(p - up), abs(p - ul)
            if pa <= pb and pa <= pc:
                pred = left
            elif pb <= pc:
                pred = up
            else:
                pred = ul
            cur[i] = (int(line[i]) + pred) & 0xFF
        return cur
    raise DecodeError(f"{path}: unknown scanline filter {ftype}")


def _chunk(ctype, data):
    return (struct.pack(">I", len(data)) + ctype + data
            + struct.pack(">I", zlib.crc32(ctype + data) & 0xFFFFFFFF))


def _encode_png(pixels):
    """pixels: (3, H, W) uint8 -> RGB PNG bytes (filter 0 scanlines)."""
    _, h, w = pixels.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    rows = pixels.transpose(1, 2, 0).reshape(h, w * 3)
    raw = b"".join(b"\x00" + rows[r].tobytes() for r in range(h))
    return (_PNG_SIG + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw, 6))
            + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# PPM (P6)
# ---------------------------------------------------------------------------

def _decode_ppm(blob, path):
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated PPM header")
        fields.append(blob[start:pos])
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DecodeError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    body = blob[pos:pos + need]
    if len(body) != need:
        raise DecodeError(f"{path}: truncated PPM pixel data")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1)


def _encode_ppm(pixels):
    _, h, w = pixels.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + pixels.transpose(1, 2, 0).tobytes()
