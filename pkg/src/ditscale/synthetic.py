"""Synthetic dataset and layout metrics for the resolution experiments.

The training data is a single bright anti-aliased disk on a dark background.
Its two layout statistics, area fraction and centroid, make "the subject got
smaller / moved" measurable, and the seam-energy metric quantifies grid
artifacts along patch-boundary lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partition import PatchLayout


def synth_disk(rng: np.random.Generator, h_px: int, w_px: int):
    """One disk image plus its ground truth.

    The center is uniform over the central 60% of the frame, the radius is
    uniform in [0.15, 0.25] of the shorter side, and the rim gets a one-pixel
    linear anti-aliasing ramp. Returns (image, (cy, cx), radius) with the
    image in [0, 1].
    """
    if h_px < 8 or w_px < 8:
        raise ValueError(f"image dimensions must be >= 8, got {h_px}x{w_px}")
    cy = rng.uniform(0.2 * h_px, 0.8 * h_px)
    cx = rng.uniform(0.2 * w_px, 0.8 * w_px)
    radius = rng.uniform(0.15, 0.25) * min(h_px, w_px)
    yy = np.arange(h_px, dtype=np.float64)[:, None] + 0.5
    xx = np.arange(w_px, dtype=np.float64)[None, :] + 0.5
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    image = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return image, (cy, cx), radius


def synth_ring(rng: np.random.Generator, h_px: int, w_px: int):
    """Annulus variant (the second class for guidance experiments)."""
    image, center, radius = synth_disk(rng, h_px, w_px)
    cy, cx = center
    inner = 0.55 * radius
    yy = np.arange(h_px, dtype=np.float64)[:, None] + 0.5
    xx = np.arange(w_px, dtype=np.float64)[None, :] + 0.5
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    hole = np.clip(inner + 0.5 - dist, 0.0, 1.0)
    return np.clip(image - hole, 0.0, 1.0), center, radius


def disk_batch(rng: np.random.Generator, batch: int, h_px: int, w_px: int) -> np.ndarray:
    return np.stack([synth_disk(rng, h_px, w_px)[0] for _ in range(batch)])


@dataclass(frozen=True)
class DiskStats:
    area_fraction: float
    centroid: tuple[float, float]  # (row, col) normalized to [0, 1]
    seam_energy: float | None


def area_fraction(image: np.ndarray, threshold: float = 0.5) -> float:
    """Fraction of pixels at or above the threshold."""
    return float(np.mean(np.asarray(image) >= threshold))


def centroid(image: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted mean position, normalized to [0, 1] per axis.

    An all-zero image has no mass; its centroid is the frame center by
    convention.
    """
    img = np.asarray(image, dtype=np.float64)
    total = img.sum()
    if total <= 0.0:
        return (0.5, 0.5)
    h, w = img.shape
    rows = (np.arange(h) + 0.5) / h
    cols = (np.arange(w) + 0.5) / w
    return (
        float((img.sum(axis=1) * rows).sum() / total),
        float((img.sum(axis=0) * cols).sum() / total),
    )


def boundary_lines(layout: PatchLayout) -> tuple[list[int], list[int]]:
    """Interior window-edge coordinates of a layout, per axis.

    A row line at r means the seam runs between rows r-1 and r. Window starts
    and window ends both count; edges at the grid border are skipped.
    """
    rows, cols = set(), set()
    for starts, patch, length, acc in (
        (layout.row_starts, layout.patch_h, layout.grid_h, rows),
        (layout.col_starts, layout.patch_w, layout.grid_w, cols),
    ):
        for s in starts:
            if 0 < s < length:
                acc.add(s)
            if 0 < s + patch < length:
                acc.add(s + patch)
    return sorted(rows), sorted(cols)


def seam_energy(image: np.ndarray, layout: PatchLayout) -> float:
    """Mean squared jump across the layout's interior boundary lines.

    The layout must be expressed in the image's own raster (use
    ``pixel_layout`` to convert a token-grid layout). Returns 0 for a layout
    with no interior lines.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (layout.grid_h, layout.grid_w):
        raise ValueError(f"image {img.shape} does not match layout {layout.grid_h}x{layout.grid_w}")
    rows, cols = boundary_lines(layout)
    total = 0.0
    count = 0
    for r in rows:
        diff = img[r, :] - img[r - 1, :]
        total += float((diff * diff).sum())
        count += diff.size
    for c in cols:
        diff = img[:, c] - img[:, c - 1]
        total += float((diff * diff).sum())
        count += diff.size
    return total / count if count else 0.0


def pixel_layout(layout: PatchLayout, patch_px: int) -> PatchLayout:
    """Scale a token-grid layout to pixel coordinates."""
    return PatchLayout(
        grid_h=layout.grid_h * patch_px,
        grid_w=layout.grid_w * patch_px,
        patch_h=layout.patch_h * patch_px,
        patch_w=layout.patch_w * patch_px,
        row_starts=tuple(s * patch_px for s in layout.row_starts),
        col_starts=tuple(s * patch_px for s in layout.col_starts),
    )


def disk_stats(image: np.ndarray, layout: PatchLayout | None = None, threshold: float = 0.5) -> DiskStats:
    """Area fraction, centroid and (optionally) seam energy of one image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a grayscale image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return DiskStats(
        area_fraction=area_fraction(img, threshold),
        centroid=centroid(img),
        seam_energy=seam_energy(img, layout) if layout is not None else None,
    )
