"""Patch-wise spectral fusion of the global and local attention branches.

Each aligned patch pair is transformed with a per-channel 2D FFT, combined
through a binary DC-centered low-pass mask (low band from the global branch,
high band from the local branch), and transformed back:

    fused = ifft2( M * fft2(global) + (1 - M) * fft2(local) )

Spectra are stored DC-centered so the cutoff geometry reads off directly.
The mask is symmetric under frequency negation, which keeps real inputs real
through the round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import check_grid
from .partition import PatchLayout, SpliceConfig, extract_patches, hard_splice, splice


@dataclass(frozen=True)
class FusionConfig:
    """Spectral fusion settings: normalized cutoff and mask geometry."""

    cutoff: float = 0.2
    geometry: str = "radial"  # "radial" (elliptical for non-square) or "rect"

    def __post_init__(self):
        if not 0.0 < self.cutoff <= 1.0:
            raise ValueError(f"cutoff must be in (0, 1], got {self.cutoff}")
        if self.geometry not in ("radial", "rect"):
            raise ValueError(f"unknown mask geometry {self.geometry!r}")


def fft2(patch: np.ndarray) -> np.ndarray:
    """Per-channel 2D DFT of a (rows, cols, channels) patch, DC-centered."""
    patch = check_grid(patch)
    return np.fft.fftshift(np.fft.fft2(patch, axes=(0, 1)), axes=(0, 1))


def ifft2(spec: np.ndarray, max_imag_ratio: float = 1e-5) -> np.ndarray:
    """Invert a DC-centered spectrum back to a real spatial patch.

    The imaginary residue is discarded after checking it is negligible; a
    large residue means the spectrum lost conjugate symmetry (an asymmetric
    mask or a corrupted spectrum), which is reported instead of silenced.
    """
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ValueError(f"spectrum must be 3D, got shape {spec.shape}")
    out = np.fft.ifft2(np.fft.ifftshift(spec, axes=(0, 1)), axes=(0, 1))
    scale = np.linalg.norm(out.ravel())
    residue = np.linalg.norm(out.imag.ravel())
    if residue > max_imag_ratio * max(scale, 1e-300):
        raise RuntimeError(
            f"inverse FFT imaginary residue {residue:.3e} exceeds "
            f"{max_imag_ratio:.1e} of signal norm {scale:.3e}"
        )
    return np.ascontiguousarray(out.real)


def _centered_freqs(n: int) -> np.ndarray:
    # integer frequencies in fftshift order: -(n//2) .. ceil(n/2)-1
    return np.arange(n, dtype=np.float64) - n // 2


def lowpass_mask(rows: int, cols: int, cutoff: float, geometry: str = "radial") -> np.ndarray:
    """Binary DC-centered low-pass mask with the given normalized cutoff.

    Radial geometry keeps frequency (u, v) when
    sqrt((u/u_max)^2 + (v/v_max)^2) <= cutoff with u_max = rows/2,
    v_max = cols/2; the rectangular variant bounds each axis separately.
    The mask only depends on |u|, |v|, so it is symmetric under frequency
    negation and the DC bin is always kept.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"mask dimensions must be >= 1, got {rows}x{cols}")
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
    u = _centered_freqs(rows) / max(rows / 2.0, 1e-300)
    v = _centered_freqs(cols) / max(cols / 2.0, 1e-300)
    if geometry == "radial":
        radius = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
        keep = radius <= cutoff
    elif geometry == "rect":
        keep = (np.abs(u)[:, None] <= cutoff) & (np.abs(v)[None, :] <= cutoff)
    else:
        raise ValueError(f"unknown mask geometry {geometry!r}")
    return keep.astype(np.float64)


def fuse_patch(global_patch: np.ndarray, local_patch: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Combine one aligned patch pair: low band from global, high band from local."""
    g = check_grid(global_patch)
    l = check_grid(local_patch)
    if g.shape != l.shape:
        raise ValueError(f"patch shapes differ: {g.shape} vs {l.shape}")
    mask = np.asarray(mask)
    if mask.shape != g.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match patch {g.shape[:2]}")
    m = mask[:, :, None]
    fused = m * fft2(g) + (1.0 - m) * fft2(l)
    return ifft2(fused).astype(g.dtype, copy=False)


def spectral_fusion(
    global_grid: np.ndarray,
    local_patches: list[np.ndarray],
    layout: PatchLayout,
    cfg: FusionConfig,
    splice_cfg: SpliceConfig,
    splice_mode: str = "gaussian",
) -> np.ndarray:
    """Fuse a full global grid with per-window local outputs and splice.

    The global grid is partitioned with the same layout that produced the
    local patches, each aligned pair is fused in the frequency domain, and the
    fused patches are spliced back into a full grid.
    """
    global_grid = check_grid(global_grid)
    global_patches = extract_patches(global_grid, layout)
    if len(local_patches) != len(global_patches):
        raise ValueError(
            f"{len(local_patches)} local patches do not match {len(global_patches)} windows"
        )
    mask = lowpass_mask(layout.patch_h, layout.patch_w, cfg.cutoff, cfg.geometry)
    fused = [fuse_patch(g, l, mask) for g, l in zip(global_patches, local_patches)]
    if splice_mode == "gaussian":
        return splice(fused, layout, splice_cfg)
    if splice_mode == "nearest":
        return hard_splice(fused, layout)
    raise ValueError(f"unknown splice mode {splice_mode!r}")
