"""Rectified positional indices and 2D axial rotary embedding.

Two index constructions feed the two attention branches:

* ``scaled_indices`` divides high-resolution indices by the resolution ratio
  so every position falls inside the range the model was trained on
  (position interpolation). Indices become fractional; rotary angles are
  continuous in position, so fractional indices are consumed directly.
* ``patchwise_indices`` gives every patch the plain base-resolution integer
  grid regardless of where the patch sits, so patch-local attention sees
  exactly the positions it was trained with.

The rotary embedding is the standard 2D axial split: the first half of each
head's channels rotates by the row position, the second half by the column
position, with channel pair (2j, 2j+1) rotated by angle
``p * base**(-4j/head_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PositionGrid:
    """Per-token fractional 2D positions for a (rows, cols) token grid."""

    pos_h: np.ndarray  # (rows, cols)
    pos_w: np.ndarray  # (rows, cols)

    def __post_init__(self):
        ph, pw = np.asarray(self.pos_h), np.asarray(self.pos_w)
        if ph.shape != pw.shape or ph.ndim != 2:
            raise ValueError(f"position grids must share a 2D shape, got {ph.shape} / {pw.shape}")
        if not (np.isfinite(ph).all() and np.isfinite(pw).all()):
            raise ValueError("positions must be finite")
        if ph.min() < 0 or pw.min() < 0:
            raise ValueError("positions must be non-negative")

    @property
    def rows(self) -> int:
        return self.pos_h.shape[0]

    @property
    def cols(self) -> int:
        return self.pos_h.shape[1]

    def shifted(self, delta_h: float, delta_w: float) -> "PositionGrid":
        """Same grid with a constant offset added to every position."""
        return PositionGrid(self.pos_h + delta_h, self.pos_w + delta_w)


@dataclass(frozen=True)
class ScaleFactors:
    """Resolution ratio between a target grid and the training-time grid."""

    base_h: int
    base_w: int
    target_h: int
    target_w: int

    def __post_init__(self):
        if min(self.base_h, self.base_w) < 1:
            raise ValueError("base dimensions must be >= 1")
        if self.target_h < self.base_h or self.target_w < self.base_w:
            raise ValueError(
                f"target {self.target_h}x{self.target_w} below base "
                f"{self.base_h}x{self.base_w}; downscaling is out of scope"
            )

    @property
    def s_h(self) -> float:
        return self.target_h / self.base_h

    @property
    def s_w(self) -> float:
        return self.target_w / self.base_w


def scaled_indices(target_h: int, target_w: int, base_h: int, base_w: int) -> PositionGrid:
    """Row/column indices of a target grid compressed into the training range.

    Row r maps to r / (target_h / base_h), so the largest index stays strictly
    below base_h (and likewise for columns).
    """
    scale = ScaleFactors(base_h, base_w, target_h, target_w)
    rows = np.arange(target_h, dtype=np.float64) / scale.s_h
    cols = np.arange(target_w, dtype=np.float64) / scale.s_w
    pos_h = np.repeat(rows[:, None], target_w, axis=1)
    pos_w = np.repeat(cols[None, :], target_h, axis=0)
    return PositionGrid(pos_h, pos_w)


def patchwise_indices(patch_h: int, patch_w: int) -> PositionGrid:
    """Plain integer indices 0..patch_h-1 x 0..patch_w-1, independent of patch location."""
    if patch_h < 1 or patch_w < 1:
        raise ValueError(f"patch dimensions must be >= 1, got {patch_h}x{patch_w}")
    rows = np.arange(patch_h, dtype=np.float64)
    cols = np.arange(patch_w, dtype=np.float64)
    pos_h = np.repeat(rows[:, None], patch_w, axis=1)
    pos_w = np.repeat(cols[None, :], patch_h, axis=0)
    return PositionGrid(pos_h, pos_w)


@dataclass(frozen=True)
class RotaryField:
    """Precomputed cos/sin tables for one token grid.

    cos_h/sin_h hold the row-axis angles, cos_w/sin_w the column-axis angles,
    each of shape (rows, cols, head_dim // 4): one angle per frequency, applied
    to one channel pair.
    """

    cos_h: np.ndarray
    sin_h: np.ndarray
    cos_w: np.ndarray
    sin_w: np.ndarray
    head_dim: int
    base: float


def rotary_field(pos: PositionGrid, head_dim: int, base: float = 10000.0) -> RotaryField:
    """Build the rotation tables for the given positions.

    Frequency j of head_dim // 4 per axis rotates by theta_j(p) = p * base**(-4j/head_dim).
    Fractional positions are valid inputs.
    """
    if head_dim % 4 != 0 or head_dim < 4:
        raise ValueError(f"head_dim must be a positive multiple of 4, got {head_dim}")
    if base <= 1.0:
        raise ValueError(f"frequency base must be > 1, got {base}")
    n_freq = head_dim // 4
    inv_freq = base ** (-4.0 * np.arange(n_freq, dtype=np.float64) / head_dim)
    ang_h = np.asarray(pos.pos_h)[:, :, None] * inv_freq
    ang_w = np.asarray(pos.pos_w)[:, :, None] * inv_freq
    return RotaryField(
        cos_h=np.cos(ang_h),
        sin_h=np.sin(ang_h),
        cos_w=np.cos(ang_w),
        sin_w=np.sin(ang_w),
        head_dim=head_dim,
        base=base,
    )


def _rotate_pairs(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x (..., 2k) with cos/sin (..., k); pair (2j, 2j+1) rotated by angle j
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rotary(vectors: np.ndarray, field: RotaryField) -> np.ndarray:
    """Rotate per-token vectors by their positional angles.

    ``vectors`` is (rows, cols, head_dim); the first head_dim/2 channels rotate
    with the row angles, the rest with the column angles. Rotations preserve
    per-token Euclidean norm.
    """
    vectors = np.asarray(vectors)
    if vectors.ndim != 3 or vectors.shape[2] != field.head_dim:
        raise ValueError(
            f"vectors shape {vectors.shape} incompatible with head_dim {field.head_dim}"
        )
    if vectors.shape[:2] != field.cos_h.shape[:2]:
        raise ValueError(
            f"vectors grid {vectors.shape[:2]} does not match field grid {field.cos_h.shape[:2]}"
        )
    half = field.head_dim // 2
    out = np.empty_like(vectors)
    out[..., :half] = _rotate_pairs(vectors[..., :half], field.cos_h, field.sin_h)
    out[..., half:] = _rotate_pairs(vectors[..., half:], field.cos_w, field.sin_w)
    return out
