"""Binary PPM (P6) and 16-bit PGM (P5) image I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["write_ppm", "read_ppm", "write_pgm16", "read_pgm16"]


def write_ppm(path, image: np.ndarray) -> None:
    """Write an RGB image in [0, 1] as binary P6 with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    h, w = img.shape[:2]
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    tokens = []
    while len(tokens) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        body = line.split(b"#", 1)[0]
        tokens.extend(body.split())
    return int(tokens[0]), int(tokens[1]), int(tokens[2])


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a float image in [0, 1]."""
    with Path(path).open("rb") as fh:
        w, h, maxval = _read_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / float(maxval)


def write_pgm16(path, depth: np.ndarray) -> None:
    """Write a nonnegative depth map as 16-bit big-endian P5.

    Values are scaled to use the full range; the scale is recorded in a
    header comment so ``read_pgm16`` can undo it.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("expected an (H, W) depth map")
    if np.any(d < 0):
        raise ValueError("depth values must be nonnegative")
    peak = float(d.max())
    scale = 65535.0 / peak if peak > 0 else 1.0
    h, w = d.shape
    data = np.clip(np.rint(d * scale), 0, 65535).astype(">u2")
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n# scale {scale!r}\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a 16-bit P5 depth map written by :func:`write_pgm16`."""
    with Path(path).open("rb") as fh:
        if fh.read(2) != b"P5":
            raise ValueError("not a P5 file")
        scale = 1.0
        tokens = []
        while len(tokens) < 3:
            line = fh.readline()
            if not line:
                raise ValueError("truncated header")
            if line.lstrip().startswith(b"#"):
                parts = line.split()
                if len(parts) >= 3 and parts[1] == b"scale":
                    scale = float(parts[2])
                continue
            tokens.extend(line.split())
        w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
        if maxval != 65535:
            raise ValueError("expected 16-bit PGM")
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2")
    return data.reshape(h, w).astype(np.float64) / scale
