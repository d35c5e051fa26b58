"""Token-grid primitives shared by every other module.

A token grid is a float array of shape (height, width, channels): one feature
vector per spatial site. Patch extraction and weighted accumulation are the
two primitives the partitioning/splicing machinery is built from, and the raw
binary serialization here is what checkpoints and debug dumps use.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Window:
    """Rectangular footprint of a patch inside a parent grid."""

    row_start: int
    col_start: int
    height: int
    width: int

    def __post_init__(self):
        if self.row_start < 0 or self.col_start < 0:
            raise ValueError(
                f"window origin must be non-negative, got ({self.row_start}, {self.col_start})"
            )
        if self.height < 1 or self.width < 1:
            raise ValueError(f"window must be at least 1x1, got {self.height}x{self.width}")

    @property
    def row_end(self) -> int:
        return self.row_start + self.height

    @property
    def col_end(self) -> int:
        return self.col_start + self.width

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row_start, self.row_end), slice(self.col_start, self.col_end)


def new_grid(height: int, width: int, channels: int, fill: float = 0.0) -> np.ndarray:
    """Allocate a (height, width, channels) grid filled with a constant."""
    if height < 1 or width < 1 or channels < 1:
        raise ValueError(f"grid dimensions must be >= 1, got ({height}, {width}, {channels})")
    return np.full((height, width, channels), fill, dtype=np.float64)


def check_grid(grid: np.ndarray) -> np.ndarray:
    """Validate that an array is a well-formed token grid."""
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValueError(f"token grid must be 3D (height, width, channels), got shape {grid.shape}")
    if min(grid.shape) < 1:
        raise ValueError(f"token grid has a zero dimension: {grid.shape}")
    return grid


def check_window(grid: np.ndarray, win: Window) -> None:
    if win.row_end > grid.shape[0] or win.col_end > grid.shape[1]:
        raise ValueError(
            f"window {win} does not fit inside grid of shape {grid.shape[:2]}"
        )


def extract_patch(grid: np.ndarray, win: Window) -> np.ndarray:
    """Copy the window contents out of a grid; the source is left untouched."""
    grid = check_grid(grid)
    check_window(grid, win)
    rs, cs = win.slices()
    return grid[rs, cs].copy()


def accumulate_patch(
    grid: np.ndarray, win: Window, patch: np.ndarray, weights: np.ndarray | float
) -> None:
    """Add ``weights * patch`` into ``grid`` under ``win``, channel-wise, in place.

    ``weights`` is a per-token scalar field of shape (win.height, win.width)
    (or a plain scalar). Callers that need a normalizing denominator keep
    their own accumulator alongside and add the same weights into it.
    """
    grid = check_grid(grid)
    check_window(grid, win)
    patch = np.asarray(patch)
    if patch.shape != (win.height, win.width, grid.shape[2]):
        raise ValueError(
            f"patch shape {patch.shape} does not match window {win.height}x{win.width}"
            f"x{grid.shape[2]}"
        )
    w = np.asarray(weights, dtype=grid.dtype)
    if w.ndim == 0:
        w = np.broadcast_to(w, (win.height, win.width))
    if w.shape != (win.height, win.width):
        raise ValueError(f"weights shape {w.shape} does not match window {win.height}x{win.width}")
    rs, cs = win.slices()
    grid[rs, cs] += w[:, :, None] * patch


# --- raw tensor serialization -------------------------------------------------
#
# One-line JSON header {"height": H, "width": W, "channels": C} followed by the
# row-major, channel-last payload as little-endian float32.


def save_grid(path: str | os.PathLike, grid: np.ndarray) -> None:
    grid = check_grid(grid)
    header = {"height": int(grid.shape[0]), "width": int(grid.shape[1]), "channels": int(grid.shape[2])}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def load_grid(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("ascii"))
            shape = (int(header["height"]), int(header["width"]), int(header["channels"]))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"malformed grid header in {path!r}: {header_line!r}") from exc
        payload = fh.read()
    expected = shape[0] * shape[1] * shape[2] * 4
    if len(payload) != expected:
        raise ValueError(
            f"grid payload in {path!r} has {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
