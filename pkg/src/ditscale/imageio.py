"""Binary PGM (portable graymap) reading and writing.

P5 with maxval 255 or 65535: a trivially parseable format with no codec
dependency, so golden-file comparisons can be byte-exact.
"""

from __future__ import annotations

import os

import numpy as np


def write_pgm(path: str | os.PathLike, image: np.ndarray, bits: int = 8) -> None:
    """Write a [0, 1] float image as binary PGM (big-endian for 16-bit)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2D, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    if bits == 8:
        maxval, dtype = 255, ">u1"
    elif bits == 16:
        maxval, dtype = 65535, ">u2"
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    quantized = np.floor(img * maxval + 0.5).astype(dtype)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM back into floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval, separated by whitespace (no comments
    # are ever written by this package; reject them rather than mis-parse)
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            raise ValueError(f"PGM comments not supported in {path!r}")
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval == 255:
        raw = np.frombuffer(data, dtype=">u1", offset=pos, count=width * height)
    elif maxval == 65535:
        raw = np.frombuffer(data, dtype=">u2", offset=pos, count=width * height)
    else:
        raise ValueError(f"unsupported maxval {maxval}")
    return raw.reshape(height, width).astype(np.float64) / maxval
