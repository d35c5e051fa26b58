"""What the two positional-index constructions do, and why rotary cares.

At 2x the training resolution, vanilla indices run past the trained range
(0..31 when the model saw 0..15); scaled indices compress them back; the
patch-wise variant hands every window the exact trained integer grid.
"""

import numpy as np

from ditscale.attention import attention
from ditscale.rope import (
    PositionGrid,
    apply_rotary,
    patchwise_indices,
    rotary_field,
    scaled_indices,
)

BASE, TARGET = 16, 32

vanilla = scaled_indices(TARGET, TARGET, TARGET, TARGET)   # scale 1: plain integers
scaled = scaled_indices(TARGET, TARGET, BASE, BASE)        # compressed into [0, BASE)
patch = patchwise_indices(BASE, BASE)                      # per-window integers

print(f"training range: rows 0..{BASE - 1}")
print(f"vanilla row indices at {TARGET}: 0 .. {vanilla.pos_h.max():.1f}  (extrapolates)")
print(f"scaled  row indices at {TARGET}: 0 .. {scaled.pos_h.max():.1f}  (stays inside)")
print(f"patch-wise indices (any window): 0 .. {patch.pos_h.max():.1f}")
print(f"scaled indices are fractional: first four = {scaled.pos_h[:4, 0]}")

# rotary embedding is a per-token rotation: norms never change
rng = np.random.default_rng(0)
v = rng.standard_normal((TARGET, TARGET, 16))
rotated = apply_rotary(v, rotary_field(scaled, 16))
print(f"\nrotation preserves norms: max drift = "
      f"{np.abs(np.linalg.norm(rotated, axis=-1) - np.linalg.norm(v, axis=-1)).max():.2e}")

# attention built on rotary positions depends only on relative offsets:
# shifting every position by the same amount changes nothing
q = rng.standard_normal((4, 4, 16))
k = rng.standard_normal((4, 4, 16))
val = rng.standard_normal((4, 4, 16))
pos = PositionGrid(rng.uniform(0, 10, (4, 4)), rng.uniform(0, 10, (4, 4)))
out = attention(apply_rotary(q, rotary_field(pos, 16)), apply_rotary(k, rotary_field(pos, 16)), val, 1)
moved = pos.shifted(5.0, 2.5)
out2 = attention(apply_rotary(q, rotary_field(moved, 16)), apply_rotary(k, rotary_field(moved, 16)), val, 1)
print(f"shift invariance: max output change after +[5.0, 2.5] shift = {np.abs(out2 - out).max():.2e}")
