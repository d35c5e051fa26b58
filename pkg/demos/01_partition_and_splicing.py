"""Minimum-overlap partitioning and Gaussian splicing, step by step.

Places overlapping windows over a token grid, perturbs each window
independently (as patch-local processing would), and compares hard
nearest-patch recombination against Gaussian-weighted splicing.
"""

import numpy as np
import scipy.ndimage

from ditscale.partition import (
    SpliceConfig,
    hard_splice,
    make_layout,
    min_n,
    splice,
    tiling_layout,
    window_weights,
)
from ditscale.grid import extract_patch
from ditscale.synthetic import seam_energy

GRID, PATCH = 48, 32

print(f"axis of length {GRID}, patches of {PATCH}: need n > {GRID / PATCH:.2f}")
print(f"smallest valid count: {min_n(GRID, PATCH)}")

layout = make_layout(GRID, GRID, PATCH, PATCH)
print(f"\nlayout: {layout.n_rows}x{layout.n_cols} windows, starts {layout.row_starts}")
for win, center in zip(layout.windows, layout.centers):
    print(f"  window at ({win.row_start:2d},{win.col_start:2d}), center {center}")

# the gaussian weight of a window peaks at its center and fades to the edges
cfg = SpliceConfig.for_patch(PATCH, PATCH)
w = window_weights(layout.windows[0], layout.centers[0], cfg)
print(f"\nwindow weight: 1.0 at center, {w[0, 0]:.3f} at the corner")

# a smooth field, each window shifted by its own offset (simulating
# independent per-patch processing), then recombined two ways
rng = np.random.default_rng(0)
field = scipy.ndimage.gaussian_filter(rng.standard_normal((GRID, GRID)), sigma=4.0)
field = (field - field.min()) / (field.max() - field.min())

soft_patches = [extract_patch(field[:, :, None], win) + rng.normal(0, 0.2) for win in layout.windows]
tiles = tiling_layout(GRID, GRID, PATCH, PATCH)
hard_patches = [extract_patch(field[:, :, None], win) + rng.normal(0, 0.2) for win in tiles.windows]

soft = splice(soft_patches, layout, cfg)[:, :, 0]
hard = hard_splice(hard_patches, tiles)[:, :, 0]

print(f"\nseam energy across tile boundaries:")
print(f"  hard nearest-patch splice: {seam_energy(hard, tiles):.5f}")
print(f"  gaussian overlap splice:   {seam_energy(soft, tiles):.5f}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
    for ax, (img, title) in zip(
        axes, [(field, "original"), (hard, "hard tiles"), (soft, "gaussian splice")]
    ):
        ax.imshow(img, cmap="gray")
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig("demo01_splicing.png", dpi=120)
    print("\nwrote demo01_splicing.png")
except ImportError:
    pass
