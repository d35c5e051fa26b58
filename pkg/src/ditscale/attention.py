"""Scaled-dot-product attention and its two-branch restructuring.

The vanilla attention of a transformer block is split into two complementary
paths when sampling beyond the training resolution:

* global branch: attention over the whole token grid, with positional indices
  scaled back into the training range (keeps the large-scale layout),
* local branch: attention restricted to overlapping training-size patches,
  each with its own base-resolution integer positions (keeps detail quality),
  recombined by Gaussian splicing.

``branched_attention`` dispatches between running one branch alone and fusing
both per patch in the frequency domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import check_grid
from .partition import PatchLayout, SpliceConfig, hard_splice, splice
from .rope import (
    PositionGrid,
    RotaryField,
    ScaleFactors,
    apply_rotary,
    patchwise_indices,
    rotary_field,
    scaled_indices,
)
from .spectral import FusionConfig, spectral_fusion


class BranchMode(Enum):
    GLOBAL = "global"
    LOCAL = "local"
    FUSED = "fused"


@dataclass(frozen=True)
class AttentionWeights:
    """Projection matrices of one attention layer, all (model_dim, model_dim)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    num_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d}), got {m.shape}")
            if not np.isfinite(m).all():
                raise ValueError(f"{name} contains non-finite entries")
        if d % self.num_heads != 0:
            raise ValueError(f"model_dim {d} not divisible by {self.num_heads} heads")
        if (d // self.num_heads) % 4 != 0:
            raise ValueError(
                f"head_dim {d // self.num_heads} must be a multiple of 4 for axial rotary"
            )

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    # (T, C) -> (heads, T, head_dim)
    t, c = x.shape
    return np.ascontiguousarray(x.reshape(t, num_heads, c // num_heads).transpose(1, 0, 2))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # (heads, T, head_dim) -> (T, C)
    h, t, d = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(t, h * d)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row softmax over the last axis, max-subtracted for stability."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, num_heads: int) -> np.ndarray:
    """Multi-head scaled-dot-product attention over a flattened token grid.

    q, k, v are (rows, cols, channels) grids that have already been projected
    (and rotated, if positional encoding applies). No masking: every token
    attends to every token of the grid.
    """
    q, k, v = check_grid(q), check_grid(k), check_grid(v)
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    rows, cols, channels = q.shape
    if channels % num_heads != 0:
        raise ValueError(f"channels {channels} not divisible by {num_heads} heads")
    head_dim = channels // num_heads
    qh = _split_heads(q.reshape(-1, channels), num_heads)
    kh = _split_heads(k.reshape(-1, channels), num_heads)
    vh = _split_heads(v.reshape(-1, channels), num_heads)
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) / math.sqrt(head_dim)
    probs = softmax_rows(scores)
    out = _merge_heads(np.matmul(probs, vh))
    return out.reshape(rows, cols, channels)


def _rotate_heads(x2d: np.ndarray, field: RotaryField, rows: int, cols: int, num_heads: int) -> np.ndarray:
    # apply the same rotary field inside each head, returning (T, C)
    channels = x2d.shape[1]
    head_dim = channels // num_heads
    grid = x2d.reshape(rows, cols, num_heads, head_dim)
    out = np.empty_like(grid)
    half = head_dim // 2
    cos_h, sin_h = field.cos_h[:, :, None, :], field.sin_h[:, :, None, :]
    cos_w, sin_w = field.cos_w[:, :, None, :], field.sin_w[:, :, None, :]
    for src, dst, cos, sin in (
        (grid[..., :half], out[..., :half], cos_h, sin_h),
        (grid[..., half:], out[..., half:], cos_w, sin_w),
    ):
        even, odd = src[..., 0::2], src[..., 1::2]
        dst[..., 0::2] = even * cos - odd * sin
        dst[..., 1::2] = even * sin + odd * cos
    return out.reshape(-1, channels)


def attention_with_positions(
    x: np.ndarray, w: AttentionWeights, pos: PositionGrid, rope_base: float = 10000.0
) -> np.ndarray:
    """One full attention layer: project, rotate q/k by position, attend, project out."""
    x = check_grid(x)
    rows, cols, channels = x.shape
    if channels != w.model_dim:
        raise ValueError(f"input channels {channels} do not match weights dim {w.model_dim}")
    if (pos.rows, pos.cols) != (rows, cols):
        raise ValueError(f"positions {pos.rows}x{pos.cols} do not match grid {rows}x{cols}")
    field = rotary_field(pos, w.head_dim, rope_base)
    x2d = x.reshape(-1, channels)
    q = _rotate_heads(x2d @ w.w_q, field, rows, cols, w.num_heads)
    k = _rotate_heads(x2d @ w.w_k, field, rows, cols, w.num_heads)
    v = x2d @ w.w_v
    out = attention(
        q.reshape(rows, cols, channels),
        k.reshape(rows, cols, channels),
        v.reshape(rows, cols, channels),
        w.num_heads,
    )
    return (out.reshape(-1, channels) @ w.w_o).reshape(rows, cols, channels)


def global_branch(x: np.ndarray, w: AttentionWeights, scale: ScaleFactors, rope_base: float = 10000.0) -> np.ndarray:
    """Full-grid attention with positional indices scaled into the training range."""
    x = check_grid(x)
    if x.shape[:2] != (scale.target_h, scale.target_w):
        raise ValueError(
            f"grid {x.shape[:2]} does not match scale target {scale.target_h}x{scale.target_w}"
        )
    pos = scaled_indices(scale.target_h, scale.target_w, scale.base_h, scale.base_w)
    return attention_with_positions(x, w, pos, rope_base)


def local_patch_outputs(
    x: np.ndarray, w: AttentionWeights, layout: PatchLayout, rope_base: float = 10000.0
) -> list[np.ndarray]:
    """Per-window attention outputs, before any splicing.

    Each window is processed independently with its own base-resolution
    integer positions, so every patch sees exactly the positional range the
    model was trained on.
    """
    x = check_grid(x)
    if x.shape[:2] != (layout.grid_h, layout.grid_w):
        raise ValueError(f"grid {x.shape[:2]} does not match layout {layout.grid_h}x{layout.grid_w}")
    pos = patchwise_indices(layout.patch_h, layout.patch_w)
    outputs = []
    for win in layout.windows:
        rs, cs = win.slices()
        patch = np.ascontiguousarray(x[rs, cs])
        outputs.append(attention_with_positions(patch, w, pos, rope_base))
    return outputs


def local_branch(
    x: np.ndarray,
    w: AttentionWeights,
    layout: PatchLayout,
    splice_cfg: SpliceConfig,
    rope_base: float = 10000.0,
    splice_mode: str = "gaussian",
) -> np.ndarray:
    """Patch-local attention spliced back into a full grid."""
    patches = local_patch_outputs(x, w, layout, rope_base)
    if splice_mode == "gaussian":
        return splice(patches, layout, splice_cfg)
    if splice_mode == "nearest":
        return hard_splice(patches, layout)
    raise ValueError(f"unknown splice mode {splice_mode!r}")


def branched_attention(
    x: np.ndarray,
    w: AttentionWeights,
    mode: BranchMode,
    scale: ScaleFactors | None = None,
    layout: PatchLayout | None = None,
    splice_cfg: SpliceConfig | None = None,
    fusion_cfg: FusionConfig | None = None,
    rope_base: float = 10000.0,
    splice_mode: str = "gaussian",
    spatial_average: bool = False,
) -> np.ndarray:
    """Attention layer restructured into global / local / fused branches.

    GLOBAL and LOCAL run a single branch. FUSED runs both and combines them
    per patch in the frequency domain (low band from global, high band from
    local) before splicing; with ``spatial_average`` the spectral step is
    replaced by a plain average of the two branch outputs (ablation).
    """
    if mode == BranchMode.GLOBAL:
        if scale is None:
            raise ValueError("GLOBAL mode needs scale factors")
        return global_branch(x, w, scale, rope_base)
    if mode == BranchMode.LOCAL:
        if layout is None or splice_cfg is None:
            raise ValueError("LOCAL mode needs a layout and splice config")
        return local_branch(x, w, layout, splice_cfg, rope_base, splice_mode)
    if mode == BranchMode.FUSED:
        if scale is None or layout is None or splice_cfg is None:
            raise ValueError("FUSED mode needs scale factors, layout and splice config")
        g = global_branch(x, w, scale, rope_base)
        if spatial_average:
            l = local_branch(x, w, layout, splice_cfg, rope_base, splice_mode)
            return 0.5 * (g + l)
        if fusion_cfg is None:
            raise ValueError("FUSED mode needs a fusion config")
        locals_ = local_patch_outputs(x, w, layout, rope_base)
        return spectral_fusion(g, locals_, layout, fusion_cfg, splice_cfg, splice_mode)
    raise ValueError(f"unknown branch mode {mode!r}")
