"""Training-free resolution scaling for diffusion transformers.

Library layout:

* ``grid``       token-grid container, patch extract/accumulate, raw tensor I/O
* ``rope``       scaled and patch-wise positional indices, 2D axial rotary embedding
* ``partition``  minimum-overlap patch placement, Gaussian-weighted splicing
* ``spectral``   per-patch FFT fusion of the global and local branches
* ``attention``  scaled-dot-product attention and the two-branch restructuring
* ``dit``        desk-scale flow-matching DiT: training, sampling, checkpoints
* ``synthetic``  disk dataset and layout metrics for the resolution experiments
* ``cli``        command-line front end (train / generate / layout / fig2 / ...)
"""

from .attention import (
    AttentionWeights,
    BranchMode,
    attention,
    branched_attention,
    global_branch,
    local_branch,
)
from .dit import (
    GuidanceConfig,
    ModelConfig,
    SamplerSchedule,
    ToyDiT,
    build_schedule,
    load_checkpoint,
    sample,
    save_checkpoint,
    train_step,
)
from .grid import Window, accumulate_patch, extract_patch, load_grid, new_grid, save_grid
from .partition import (
    PatchLayout,
    SpliceConfig,
    axis_starts,
    gaussian_weight,
    make_layout,
    min_n,
    splice,
    tiling_layout,
)
from .rope import (
    PositionGrid,
    RotaryField,
    ScaleFactors,
    apply_rotary,
    patchwise_indices,
    rotary_field,
    scaled_indices,
)
from .spectral import FusionConfig, fft2, fuse_patch, ifft2, lowpass_mask, spectral_fusion
from .synthetic import DiskStats, disk_stats, seam_energy, synth_disk, synth_ring

__version__ = "0.1.0"
