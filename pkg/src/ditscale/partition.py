"""Minimum-overlap patch placement and Gaussian-weighted splicing.

Along an axis of length L covered by patches of size P, we pick the number of
patches N so that N > L / P and spread the starting indices evenly:

    t_k = k * (L - P) / (N - 1)   for k = 0 .. N-1   (rounded to integers)

The first patch starts at 0, the last ends exactly at L, and adjacent patches
overlap. Overlapping patch outputs are recombined by a Gaussian-of-distance
weighted average centered on each patch, which fades a patch out smoothly
toward its borders instead of cutting it off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Window, accumulate_patch, check_grid, check_window, extract_patch


@dataclass(frozen=True)
class SpliceConfig:
    """Per-axis standard deviations (in tokens) of the splicing Gaussian."""

    sigma_rows: float
    sigma_cols: float

    def __post_init__(self):
        if not (self.sigma_rows > 0 and math.isfinite(self.sigma_rows)):
            raise ValueError(f"sigma_rows must be positive and finite, got {self.sigma_rows}")
        if not (self.sigma_cols > 0 and math.isfinite(self.sigma_cols)):
            raise ValueError(f"sigma_cols must be positive and finite, got {self.sigma_cols}")

    @classmethod
    def for_patch(cls, patch_h: int, patch_w: int) -> "SpliceConfig":
        """Default falloff: patch edges sit near one standard deviation."""
        return cls(sigma_rows=patch_h / 2.0, sigma_cols=patch_w / 2.0)


def min_n(length: int, patch: int) -> int:
    """Smallest patch count that covers the axis with positive overlap."""
    if patch < 1 or length < 1:
        raise ValueError(f"dimensions must be >= 1, got length={length}, patch={patch}")
    if patch > length:
        raise ValueError(f"patch {patch} larger than axis length {length}")
    if length == patch:
        return 1
    return length // patch + 1


def axis_starts(length: int, patch: int, n: int) -> list[int]:
    """Starting indices of n patches covering an axis of the given length.

    Endpoints are pinned exactly (first start 0, last start length - patch);
    interior starts are the evenly spaced fractional positions rounded to the
    nearest integer. Requires n > length / patch, which keeps the exact stride
    below the patch size: coverage is always gap-free, and the total overlap
    across the axis is positive (rounding can make an individual pair of
    windows exactly touch when the exact stride exceeds patch - 1).
    """
    if patch > length:
        raise ValueError(f"patch {patch} larger than axis length {length}")
    if length == patch:
        if n != 1:
            raise ValueError(f"axis of length {length} equal to patch needs n=1, got {n}")
        return [0]
    if n < 2 or n * patch <= length:
        raise ValueError(
            f"n={n} patches of size {patch} cannot cover length {length} with overlap"
        )
    span = length - patch
    starts = [int(math.floor(k * span / (n - 1) + 0.5)) for k in range(n)]
    starts[0] = 0
    starts[-1] = span
    return starts


@dataclass(frozen=True)
class PatchLayout:
    """The full 2D set of overlapping windows over a token grid.

    Windows are the Cartesian product of the per-axis starts, ordered
    row-major over the (n_rows, n_cols) patch grid.
    """

    grid_h: int
    grid_w: int
    patch_h: int
    patch_w: int
    row_starts: tuple[int, ...]
    col_starts: tuple[int, ...]

    def __post_init__(self):
        for starts, length, patch, name in (
            (self.row_starts, self.grid_h, self.patch_h, "row"),
            (self.col_starts, self.grid_w, self.patch_w, "col"),
        ):
            if not starts or starts[0] != 0 or starts[-1] != length - patch:
                raise ValueError(f"{name} starts {starts} not pinned to [0, {length - patch}]")
            if any(b < a for a, b in zip(starts, starts[1:])):
                raise ValueError(f"{name} starts {starts} not non-decreasing")
            if any(b - a > patch for a, b in zip(starts, starts[1:])):
                raise ValueError(f"{name} starts {starts} leave gaps (stride > patch {patch})")

    @property
    def n_rows(self) -> int:
        return len(self.row_starts)

    @property
    def n_cols(self) -> int:
        return len(self.col_starts)

    @property
    def windows(self) -> list[Window]:
        return [
            Window(rs, cs, self.patch_h, self.patch_w)
            for rs in self.row_starts
            for cs in self.col_starts
        ]

    @property
    def centers(self) -> list[tuple[float, float]]:
        return [
            (rs + (self.patch_h - 1) / 2.0, cs + (self.patch_w - 1) / 2.0)
            for rs in self.row_starts
            for cs in self.col_starts
        ]


def make_layout(
    grid_h: int,
    grid_w: int,
    patch_h: int,
    patch_w: int,
    n_rows: int | None = None,
    n_cols: int | None = None,
) -> PatchLayout:
    """Minimum-overlap layout; n per axis defaults to the smallest valid count."""
    if n_rows is None:
        n_rows = min_n(grid_h, patch_h)
    if n_cols is None:
        n_cols = min_n(grid_w, patch_w)
    return PatchLayout(
        grid_h=grid_h,
        grid_w=grid_w,
        patch_h=patch_h,
        patch_w=patch_w,
        row_starts=tuple(axis_starts(grid_h, patch_h, n_rows)),
        col_starts=tuple(axis_starts(grid_w, patch_w, n_cols)),
    )


def tiling_layout(grid_h: int, grid_w: int, patch_h: int, patch_w: int) -> PatchLayout:
    """Non-overlapping rigid tiling (the no-overlap ablation).

    Starts advance by a full patch; when the axis is not divisible the last
    tile is pulled back so it still ends at the axis length.
    """
    def starts(length: int, patch: int) -> tuple[int, ...]:
        if patch > length:
            raise ValueError(f"patch {patch} larger than axis length {length}")
        out = list(range(0, length - patch + 1, patch))
        if out[-1] != length - patch:
            out.append(length - patch)
        return tuple(out)

    return PatchLayout(
        grid_h=grid_h,
        grid_w=grid_w,
        patch_h=patch_h,
        patch_w=patch_w,
        row_starts=starts(grid_h, patch_h),
        col_starts=starts(grid_w, patch_w),
    )


def gaussian_weight(
    p: tuple[float, float], center: tuple[float, float], cfg: SpliceConfig
) -> float:
    """Weight of one patch at token p: exp of minus half the scaled squared distance.

    Strictly positive, equals 1 exactly at the patch center. With square
    patches and equal sigmas this is the isotropic exp(-||p - c||^2 / 2 sigma^2).
    """
    dr = (p[0] - center[0]) / cfg.sigma_rows
    dc = (p[1] - center[1]) / cfg.sigma_cols
    return float(np.exp(-0.5 * (dr * dr + dc * dc)))


def window_weights(win: Window, center: tuple[float, float], cfg: SpliceConfig) -> np.ndarray:
    """Gaussian weights for every token of a window, shape (height, width)."""
    rows = (np.arange(win.row_start, win.row_end, dtype=np.float64) - center[0]) / cfg.sigma_rows
    cols = (np.arange(win.col_start, win.col_end, dtype=np.float64) - center[1]) / cfg.sigma_cols
    return np.exp(-0.5 * (rows[:, None] ** 2 + cols[None, :] ** 2))


def extract_patches(grid: np.ndarray, layout: PatchLayout) -> list[np.ndarray]:
    """All patch views of a grid, in layout (row-major) order."""
    grid = check_grid(grid)
    if grid.shape[:2] != (layout.grid_h, layout.grid_w):
        raise ValueError(f"grid {grid.shape[:2]} does not match layout {layout.grid_h}x{layout.grid_w}")
    return [extract_patch(grid, win) for win in layout.windows]


def splice(patches: list[np.ndarray], layout: PatchLayout, cfg: SpliceConfig) -> np.ndarray:
    """Gaussian-weighted recombination of per-window patches into a full grid.

    Every token's output is the weighted average over the windows covering it;
    weights are strictly positive so the denominator never vanishes. Windows
    accumulate in layout order, which keeps results bit-reproducible.
    """
    windows = layout.windows
    if len(patches) != len(windows):
        raise ValueError(f"got {len(patches)} patches for {len(windows)} windows")
    channels = np.asarray(patches[0]).shape[-1]
    dtype = np.promote_types(np.result_type(*[np.asarray(p).dtype for p in patches]), np.float32)
    num = np.zeros((layout.grid_h, layout.grid_w, channels), dtype=dtype)
    den = np.zeros((layout.grid_h, layout.grid_w), dtype=dtype)
    for patch, win, center in zip(patches, windows, layout.centers):
        patch = np.asarray(patch)
        if patch.shape != (win.height, win.width, channels):
            raise ValueError(f"patch shape {patch.shape} does not match window {win}")
        check_window(num, win)
        w = window_weights(win, center, cfg).astype(dtype)
        accumulate_patch(num, win, patch, w)
        rs, cs = win.slices()
        den[rs, cs] += w
    return num / den[:, :, None]


def hard_splice(patches: list[np.ndarray], layout: PatchLayout) -> np.ndarray:
    """Nearest-patch hard assignment (the no-Gaussian ablation).

    Each token takes its value from the window whose center is closest along
    each axis; ties go to the earlier window in layout order.
    """
    windows = layout.windows
    if len(patches) != len(windows):
        raise ValueError(f"got {len(patches)} patches for {len(windows)} windows")

    def nearest(starts: tuple[int, ...], patch: int, length: int) -> np.ndarray:
        centers = np.asarray(starts, dtype=np.float64) + (patch - 1) / 2.0
        coords = np.arange(length, dtype=np.float64)
        return np.argmin(np.abs(coords[:, None] - centers[None, :]), axis=1)

    row_idx = nearest(layout.row_starts, layout.patch_h, layout.grid_h)
    col_idx = nearest(layout.col_starts, layout.patch_w, layout.grid_w)
    channels = np.asarray(patches[0]).shape[-1]
    dtype = np.result_type(*[np.asarray(p).dtype for p in patches])
    out = np.empty((layout.grid_h, layout.grid_w, channels), dtype=dtype)
    for r in range(layout.grid_h):
        for c in range(layout.grid_w):
            i = row_idx[r] * layout.n_cols + col_idx[c]
            win = windows[i]
            out[r, c] = np.asarray(patches[i])[r - win.row_start, c - win.col_start]
    return out
