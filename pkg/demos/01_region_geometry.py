"""Region geometry walk-through: masks, adjacency, boundaries, distance fields.

Builds a three-region canvas, derives everything the samplers consume from it,
and prints the clipped distance field that drives boundary blending.
"""

import numpy as np

import contrastposter as cp

# a 12x18 canvas split into three vertical bands
labels = np.zeros((12, 18), dtype=np.int32)
labels[:, 6:12] = 1
labels[:, 12:] = 2
rs = cp.load_region_mask(labels)

print("region ids:", rs.region_ids)
print("adjacency: ", rs.adjacency)
for (i, j), pairs in rs.boundaries.items():
    print(f"boundary {i}-{j}: {len(pairs)} straddling pixel pairs")

# the clipped Euclidean distance from region 1 toward its boundary with 0
df = cp.distance_field(rs, 1, 0, r=3)
print("\ndistance field for region 1 toward region 0 (clipped to r=3):")
for row in df.values[:4]:
    print("  " + " ".join(f"{v:3.1f}" for v in row))
print("  ...")

# downsample to a latent-resolution mask (majority vote per cell)
latent_rs = cp.downsample_to_latent(rs, 6, 4)
print("\nlatent-resolution labels (6x4):")
print(latent_rs.labels)

# the blending margin rule: ceil(min(H, W) / 32), at least one pixel
cfg = cp.SamplerConfig()
print("\nmargin for a 64x64 latent:", cfg.margin_pixels(64, 64), "pixel(s)")
print("margin for a  8x8  latent:", cfg.margin_pixels(8, 8), "pixel(s)")
