"""Criss-cross attention next to its dense counterpart.

Shows that one pass equals dense attention restricted to each position's row
and column, that a single pass only mixes along that cross while two passes
reach every position, and what the score/MAC counters report.
"""

import numpy as np

from fetr import DCAParams, Tensor, cca_pass, count_ops, criss_cross_mask, dca_forward
from fetr.bench import nonlocal_forward

rng = np.random.default_rng(0)
C, H, W = 16, 5, 5
params = DCAParams.create(C, rng, np.float64)
r = rng.standard_normal((1, C, H, W))

cross = cca_pass(Tensor(r), params).data
masked = nonlocal_forward(Tensor(r), params, mask=criss_cross_mask(H, W)).data
print(f"one pass vs masked dense: max |diff| = {np.abs(cross - masked).max():.2e}")


def reach(passes):
    """Which output positions move when a single input position is nudged."""
    base = dca_forward(Tensor(r), params, passes).data
    bumped = r.copy()
    bumped[0, :, 2, 2] += 1.0
    moved = np.abs(dca_forward(Tensor(bumped), params, passes).data - base).sum(axis=(0, 1))
    return moved > 0


for passes in (1, 2):
    print(f"\npositions influenced by (2, 2) after {passes} pass(es):")
    for row in reach(passes):
        print("  " + " ".join("#" if v else "." for v in row))

print("\n   H   scores(cc)   scores(dense)   ratio")
for size in (8, 16, 32, 64):
    x = Tensor(rng.standard_normal((1, C, size, size)))
    with count_ops() as cc:
        cca_pass(x, params)
    n = size * size
    print(f"{size:4d} {cc.scores:12d} {n * n:15d}   {cc.scores / (n * n):.4f}")
