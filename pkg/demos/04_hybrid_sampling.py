"""The two-stage hybrid sampler end to end on a toy two-region canvas.

Stage 1 denoises each region independently under its own prompt with boundary
guidance; at step tau the latents compose through the masks; stage 2 denoises
jointly with distance-weighted neighbor blending and CFG-style aggregation.
"""

import os

import numpy as np

import contrastposter as cp
from contrastposter.imaging import latent_to_image, save_image_png
from contrastposter.metrics import compute_bgd
from contrastposter.models import composed_field_target

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

labels = np.zeros((16, 16), dtype=np.int32)
labels[:, 8:] = 1
rs = cp.load_region_mask(labels)

targets = {
    0: cp.GaussianTarget.point(np.array([3.0]), 1.0),
    1: cp.GaussianTarget.point(np.array([-3.0]), 1.0),
}
model = cp.AnalyticGaussianVelocity(
    {"region 0": targets[0], "region 1": targets[1]},
    channels=1,
    null_target=composed_field_target(rs, targets, 1),
)
conds = {0: cp.Condition.prompt("region 0"), 1: cp.Condition.prompt("region 1")}

cfg = cp.SamplerConfig(steps=50, tau=10, w=3.0, eta=0.1, seed=7, channels=1)
z, trace = cp.run_sampler(rs, conds, model, cfg)

print(f"margin r = {trace.meta['r_pixels']} pixel(s); {cfg.tau} stage-1 + {cfg.steps - cfg.tau} stage-2 steps")
print(f"left-region mean  {z[0, :, :6].mean():+.3f} (target +3)")
print(f"right-region mean {z[0, :, 10:].mean():+.3f} (target -3)")

stage1 = [r for r in trace.records if r["stage"] == 1]
print(f"consistency loss during stage 1: {stage1[0]['l_grad']:.3f} -> {stage1[-1]['l_grad']:.3f}")

img, affine = latent_to_image(z)
save_image_png(os.path.join(OUT, "hybrid_two_region.png"), img)
bgd, _, _ = compute_bgd(img, rs, strip_k=4)
print(f"boundary gradient difference of the render: {bgd:.4f}")
print(f"wrote {OUT}/hybrid_two_region.png")

# the same run composed only at the end (no joint stage): a visibly harder seam
cfg_off = cp.SamplerConfig(steps=50, tau=50, w=3.0, eta=0.1, seed=7, channels=1)
z_off, _ = cp.run_sampler(rs, conds, model, cfg_off)
img_off, _ = latent_to_image(z_off)
bgd_off, _, _ = compute_bgd(img_off, rs, strip_k=4)
save_image_png(os.path.join(OUT, "hybrid_compose_at_end.png"), img_off)
print(f"\nwithout joint denoising the same seed scores BGD {bgd_off:.4f} (higher = harsher seam)")
