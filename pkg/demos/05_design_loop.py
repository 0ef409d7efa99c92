"""The full three-agent design loop against the bundled mock transcript.

The cognition agent proposes contrastive element pairs with color-wheel hues,
the arranger turns them into a region layout, the sampler renders a candidate,
and the refiner approves or routes feedback.  With the mock client everything
is deterministic and offline.
"""

import json
import os
from importlib import resources

import contrastposter as cp
from contrastposter.agents import MockChatClient
from contrastposter.imaging import save_image_png
from contrastposter.models import composed_field_target

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

assets = resources.files("contrastposter").joinpath("assets/demo")
rs = cp.load_mask_json(str(assets / "demo_mask.json"))
client = MockChatClient(str(assets / "demo_transcript.json"))

targets = {
    0: cp.GaussianTarget.point([-0.5, 0.2, 2.5], 0.6),   # cool blues for the iceberg
    1: cp.GaussianTarget.point([2.2, 1.2, -1.5], 0.6),   # warm ambers for the sandstorm
}
model = cp.AnalyticGaussianVelocity(
    {"iceberg": targets[0], "sandstorm": targets[1]},
    channels=3,
    null_target=composed_field_target(cp.downsample_to_latent(rs, 16, 16), targets, 3),
)

cfg = cp.SamplerConfig(steps=24, tau=6, seed=7, channels=3)
result = cp.run_design_loop(
    "A public awareness poster about climate change. Print the slogan ACT NOW on it.",
    rs, model, cfg, client, latent_size=(16, 16),
)

print("theme:       ", result.theme.theme_text)
print("visual texts:", list(result.theme.visual_texts))
for region in result.layout.regions:
    print(f"region {region.region_id}: {region.element} ({region.color_names[0]}, hue {region.hues[0]:.0f})")
verdict = result.log["iterations"][-1]["verdict"]
print(f"refiner: contrast {verdict['contrast_score']}, harmony {verdict['harmony_score']}, "
      f"approved={verdict['approved']}")

save_image_png(os.path.join(OUT, "design_loop_poster.png"), result.image)
with open(os.path.join(OUT, "design_loop_layout.json"), "w") as fh:
    fh.write(result.layout.to_json())
print(f"\nwrote {OUT}/design_loop_poster.png and design_loop_layout.json")
print(json.dumps(result.log["iterations"][0]["verdict"], indent=2))
