"""FFT round trips, mask geometry, and spectral fusion against a naive pipeline."""

import numpy as np
import pytest

from ditscale.partition import SpliceConfig, extract_patches, make_layout, splice
from ditscale.spectral import (
    FusionConfig,
    fft2,
    fuse_patch,
    ifft2,
    lowpass_mask,
    spectral_fusion,
)


def test_fft2_constant_patch_is_dc_only():
    v = 1.7
    spec = fft2(np.full((6, 4, 2), v))
    dc = spec[3, 2]  # fftshift center
    assert np.allclose(dc, 6 * 4 * v)
    spec[3, 2] = 0.0
    assert np.abs(spec).max() <= 1e-9


def test_fft2_impulse_is_flat():
    patch = np.zeros((8, 8, 1))
    patch[0, 0, 0] = 1.0
    mag = np.abs(fft2(patch))
    assert np.abs(mag - 1.0).max() <= 1e-12


def test_fft_roundtrip():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 8, 2))
    back = ifft2(fft2(x))
    assert np.abs(back - x).max() <= 1e-6 * np.abs(x).max()


def test_parseval():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((16, 12, 3))
    spec = fft2(x)
    lhs = np.sum(np.abs(spec) ** 2)
    rhs = 16 * 12 * np.sum(x**2)
    assert abs(lhs - rhs) <= 1e-6 * rhs


def test_ifft2_dc_only_gives_constant():
    spec = np.zeros((4, 4, 1), dtype=complex)
    spec[2, 2, 0] = 4 * 4 * 2.5
    out = ifft2(spec)
    assert np.abs(out - 2.5).max() <= 1e-12


def test_ifft2_flags_asymmetric_spectrum():
    rng = np.random.default_rng(2)
    spec = fft2(rng.standard_normal((8, 8, 1)))
    spec[1, 3, 0] = 0.0  # break conjugate symmetry at one frequency
    with pytest.raises(RuntimeError):
        ifft2(spec)


def test_masked_real_spectrum_inverts_to_real():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((9, 8, 2))  # odd x even dims
    mask = lowpass_mask(9, 8, 0.37)
    out = ifft2(mask[:, :, None] * fft2(x))  # residue check inside
    assert out.shape == x.shape


# --- mask geometry ----------------------------------------------------------------


def _negated_index(i, n):
    # index of frequency -f in fftshift layout, where f = i - n//2
    return (2 * (n // 2) - i) % n


@pytest.mark.parametrize("rows,cols", [(8, 8), (7, 7), (8, 7), (16, 4), (1, 8)])
@pytest.mark.parametrize("cutoff", [0.15, 0.2, 0.5, 1.0])
def test_mask_symmetric_under_frequency_negation(rows, cols, cutoff):
    m = lowpass_mask(rows, cols, cutoff)
    for i in range(rows):
        for j in range(cols):
            assert m[i, j] == m[_negated_index(i, rows), _negated_index(j, cols)]


def test_mask_binary_and_dc():
    for cutoff in (0.05, 0.2, 1.0):
        m = lowpass_mask(10, 14, cutoff)
        assert set(np.unique(m)) <= {0.0, 1.0}
        assert m[5, 7] == 1.0  # DC always kept


def test_mask_cutoff_one_excludes_corners_keeps_axes():
    m = lowpass_mask(8, 8, 1.0)
    assert m[0, 0] == 0.0  # corner (-4, -4): radius sqrt(2)
    assert m[0, 4] == 1.0  # (-4, 0): radius exactly 1
    assert m[4, 0] == 1.0


def test_mask_tiny_cutoff_keeps_only_dc():
    m = lowpass_mask(16, 16, 0.01)
    assert m.sum() == 1.0 and m[8, 8] == 1.0


def test_mask_count_matches_brute_force_enumeration():
    rows = cols = 64
    cutoff = 0.2
    count = 0
    for u in range(-rows // 2, rows // 2):
        for v in range(-cols // 2, cols // 2):
            if np.sqrt((u / (rows / 2)) ** 2 + (v / (cols / 2)) ** 2) <= cutoff:
                count += 1
    assert int(lowpass_mask(rows, cols, cutoff).sum()) == count


def test_mask_rect_geometry_all_pass_at_one():
    m = lowpass_mask(8, 6, 1.0, geometry="rect")
    assert np.all(m == 1.0)


def test_mask_partition_of_unity():
    m = lowpass_mask(12, 12, 0.2)
    assert np.array_equal(m + (1.0 - m), np.ones_like(m))


def test_mask_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        lowpass_mask(8, 8, 0.0)
    with pytest.raises(ValueError):
        lowpass_mask(8, 8, 1.5)


# --- patch fusion -----------------------------------------------------------------


def test_fuse_patch_identity_when_branches_agree():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 8, 3))
    mask = lowpass_mask(8, 8, 0.2)
    out = fuse_patch(x, x, mask)
    assert np.abs(out - x).max() <= 1e-5


def test_fuse_patch_mask_extremes():
    rng = np.random.default_rng(5)
    g = rng.standard_normal((8, 8, 2))
    l = rng.standard_normal((8, 8, 2))
    assert np.abs(fuse_patch(g, l, np.ones((8, 8))) - g).max() <= 1e-5
    assert np.abs(fuse_patch(g, l, np.zeros((8, 8))) - l).max() <= 1e-5


def test_fuse_patch_shape_mismatch():
    with pytest.raises(ValueError):
        fuse_patch(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        fuse_patch(np.zeros((4, 4, 1)), np.zeros((4, 4, 1)), np.ones((5, 4)))


def test_spectral_complementarity():
    rng = np.random.default_rng(6)
    mask = lowpass_mask(8, 8, 0.2)[:, :, None]
    for _ in range(100):
        g = rng.standard_normal((8, 8, 2))
        l = rng.standard_normal((8, 8, 2))
        fused_spec = fft2(fuse_patch(g, l, mask[:, :, 0]))
        g_spec, l_spec = fft2(g), fft2(l)
        scale = max(np.abs(g_spec).max(), np.abs(l_spec).max())
        assert np.abs((fused_spec - g_spec) * mask).max() <= 1e-5 * scale
        assert np.abs((fused_spec - l_spec) * (1 - mask)).max() <= 1e-5 * scale


def test_fused_energy_splits_by_band():
    # disjoint frequency supports are orthogonal: energies add exactly
    rng = np.random.default_rng(7)
    g = rng.standard_normal((8, 8, 1))
    l = rng.standard_normal((8, 8, 1))
    mask = lowpass_mask(8, 8, 0.3)[:, :, None]
    fused = fuse_patch(g, l, mask[:, :, 0])
    e_fused = np.sum(fused**2)
    e_low = np.sum(np.abs(mask * fft2(g)) ** 2) / 64
    e_high = np.sum(np.abs((1 - mask) * fft2(l)) ** 2) / 64
    assert abs(e_fused - (e_low + e_high)) <= 1e-6 * max(e_fused, 1.0)


# --- full fusion pipeline ----------------------------------------------------------


def _naive_fusion(global_grid, local_patches, layout, cutoff, splice_cfg):
    """Step-by-step loops: extract, FFT, mask, inverse FFT, splice."""
    rows, cols = layout.patch_h, layout.patch_w
    mask = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            u = i - rows // 2
            v = j - cols // 2
            if np.sqrt((u / (rows / 2)) ** 2 + (v / (cols / 2)) ** 2) <= cutoff:
                mask[i, j] = 1.0
    fused = []
    for win, local in zip(layout.windows, local_patches):
        rs, cs = win.slices()
        gp = global_grid[rs, cs]
        out = np.empty_like(gp)
        for ch in range(gp.shape[2]):
            gs = np.fft.fftshift(np.fft.fft2(gp[:, :, ch]))
            ls = np.fft.fftshift(np.fft.fft2(local[:, :, ch]))
            mixed = mask * gs + (1 - mask) * ls
            out[:, :, ch] = np.fft.ifft2(np.fft.ifftshift(mixed)).real
        fused.append(out)
    return splice(fused, layout, splice_cfg)


def test_spectral_fusion_identity_on_self():
    rng = np.random.default_rng(8)
    g = rng.standard_normal((16, 16, 2))
    layout = make_layout(16, 16, 12, 12)
    cfg = SpliceConfig.for_patch(12, 12)
    out = spectral_fusion(g, extract_patches(g, layout), layout, FusionConfig(cutoff=0.2), cfg)
    assert np.abs(out - g).max() <= 1e-5


def test_spectral_fusion_all_pass_returns_global():
    rng = np.random.default_rng(9)
    g = rng.standard_normal((16, 16, 2))
    locals_ = [rng.standard_normal((12, 12, 2)) for _ in range(4)]
    layout = make_layout(16, 16, 12, 12)
    cfg = SpliceConfig.for_patch(12, 12)
    out = spectral_fusion(g, locals_, layout, FusionConfig(cutoff=1.0, geometry="rect"), cfg)
    assert np.abs(out - g).max() <= 1e-5


def test_spectral_fusion_matches_naive_pipeline():
    rng = np.random.default_rng(10)
    g = rng.standard_normal((16, 16, 3))
    layout = make_layout(16, 16, 12, 12)
    assert len(layout.windows) == 4
    locals_ = [rng.standard_normal((12, 12, 3)) for _ in range(4)]
    cfg = SpliceConfig.for_patch(12, 12)
    fast = spectral_fusion(g, locals_, layout, FusionConfig(cutoff=0.2), cfg)
    slow = _naive_fusion(g, locals_, layout, 0.2, cfg)
    assert np.abs(fast - slow).max() <= 1e-6


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(cutoff=0.0)
    with pytest.raises(ValueError):
        FusionConfig(cutoff=0.2, geometry="hexagonal")
