"""Atomic file writes and PPM (P6, 8-bit) image IO."""

from __future__ import annotations

import os
import tempfile

import numpy as np


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class PPMFormatError(ValueError):
    pass


def write_ppm(path: str, image: np.ndarray) -> None:
    """Save a (3, H, W) float image in [0, 1] as binary PPM (P6, maxval 255)."""
    image = np.asarray(image, float)
    if image.ndim != 3 or image.shape[0] != 3:
        raise PPMFormatError(f"expected (3, H, W) image, got {image.shape}")
    _, H, W = image.shape
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{W} {H}\n255\n".encode("ascii")
    body = pixels.transpose(1, 2, 0).tobytes()
    atomic_write_bytes(path, header + body)


def _read_token(f) -> bytes:
    # skip whitespace and '#' comments between header tokens
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise PPMFormatError("unexpected end of PPM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_ppm(path: str) -> np.ndarray:
    """Load a binary PPM (P6, maxval 255) as a (3, H, W) float image in [0, 1]."""
    with open(path, "rb") as f:
        if f.read(2) != b"P6":
            raise PPMFormatError("not a P6 PPM file")
        W = int(_read_token(f))
        H = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise PPMFormatError(f"unsupported maxval {maxval}; expected 255")
        body = f.read(3 * H * W)
        if len(body) != 3 * H * W:
            raise PPMFormatError("truncated PPM pixel data")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3)
    return pixels.transpose(2, 0, 1).astype(float) / 255.0
