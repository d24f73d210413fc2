"""Image files: 16-bit binary PGM (P5) and flat raw float64."""

from __future__ import annotations

import os

import numpy as np


class ImageFormatError(ValueError):
    pass


def write_raw(path, img) -> None:
    """ASCII side length on the first line, then side*side little-endian float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"raw images must be square, got {a.shape}")
    with open(path, "wb") as fh:
        fh.write(f"{a.shape[0]}\n".encode("ascii"))
        fh.write(a.astype("<f8").tobytes())


def read_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    nl = buf.find(b"\n")
    if nl < 0:
        raise ImageFormatError(f"{path}: missing header line (no newline found in {len(buf)} bytes)")
    try:
        side = int(buf[:nl].decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ImageFormatError(f"{path}: bad header at byte 0: {buf[:nl][:32]!r}") from None
    if side <= 0:
        raise ImageFormatError(f"{path}: non-positive side {side} at byte 0")
    expected = side * side * 8
    payload = buf[nl + 1:]
    if len(payload) != expected:
        raise ImageFormatError(
            f"{path}: payload starting at byte {nl + 1} has {len(payload)} bytes, "
            f"expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(side, side).astype(np.float64)


def write_pgm(path, img) -> None:
    """16-bit P5 PGM; pixels in [0, 1] map to 0..65535."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM images must be 2-D, got {a.shape}")
    q = np.round(np.clip(a, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def _pgm_tokens(buf: bytes, count: int):
    """First ``count`` header tokens (comments skipped) and the payload offset."""
    toks, pos = [], 0
    while len(toks) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"truncated PGM header at byte {pos}")
        toks.append((buf[start:pos], start))
    return toks, pos + 1  # single whitespace after maxval


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    toks, offset = _pgm_tokens(buf, 4)
    if toks[0][0] != b"P5":
        raise ImageFormatError(f"{path}: expected magic P5 at byte 0, got {toks[0][0]!r}")
    try:
        w, h, maxval = (int(t) for t, _ in toks[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric PGM header field near byte {toks[1][1]}") from None
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: maxval {maxval} at byte {toks[3][1]} out of range")
    bpp = 2 if maxval > 255 else 1
    expected = w * h * bpp
    payload = buf[offset:]
    if len(payload) < expected:
        raise ImageFormatError(
            f"{path}: truncated payload at byte {offset}: expected {expected} bytes, "
            f"got {len(payload)}")
    dtype = ">u2" if bpp == 2 else "u1"
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(h, w)
    return data.astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    return read_pgm(path) if ext == ".pgm" else read_raw(path)


def write_image(path, img) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    (write_pgm if ext == ".pgm" else write_raw)(path, img)


def read_dataset(directory) -> list:
    """All ``.raw`` / ``.pgm`` images in a directory, sorted by file name."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith((".raw", ".pgm")))
    if not names:
        raise ValueError(f"{directory}: no .raw or .pgm images found")
    return [read_image(os.path.join(directory, n)) for n in names]
