"""A small-scale version of the positional-embedding intervention study.

Trains briefly, then samples a handful of seeds at 2x resolution under three
positional regimes and compares the layout statistic (disk area fraction)
against the base-resolution reference. With unscaled positions the subject
shrinks; with scaled positions the layout survives the resolution change.

The full 32-seed version runs through the CLI:

    ditscale train --out ckpt
    ditscale fig2 --checkpoint ckpt --out fig2_report
"""

import numpy as np

from ditscale.dit import ModelConfig, ToyDiT, build_schedule, make_optimizer, sample, train_step
from ditscale.synthetic import disk_batch, disk_stats

config = ModelConfig(model_dim=32, num_heads=4, num_blocks=3, base_h=8, base_w=8)
rng = np.random.default_rng(7)
model = ToyDiT(config, rng)
optimizer = make_optimizer(model.params, "adam", 1e-3)
print("training ...")
for step in range(800):
    train_step(model, disk_batch(rng, 8, 16, 16), rng, optimizer)

schedule = build_schedule(35, 35, 0)  # pure global attention isolates the PE effect
SEEDS = 8

def mean_area(**kwargs):
    return float(np.mean([
        disk_stats(sample(model, schedule, seed=s, **kwargs)).area_fraction
        for s in range(SEEDS)
    ]))

base = mean_area(target_h=16, target_w=16)
vanilla = mean_area(target_h=32, target_w=32, vanilla_pe=True)
scaled = mean_area(target_h=32, target_w=32)

print(f"\nmean disk area fraction over {SEEDS} seeds")
print(f"  base resolution reference: {base:.4f}")
print(f"  2x, vanilla positions:     {vanilla:.4f}  (deviation {abs(vanilla-base)/base:.0%})")
print(f"  2x, scaled positions:      {scaled:.4f}  (deviation {abs(scaled-base)/base:.0%})")
print("\nvanilla positions push the subject off the trained layout; scaling restores it.")
