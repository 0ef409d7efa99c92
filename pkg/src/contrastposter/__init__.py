"""Regional-contrast poster engine.

A training-free pipeline: a three-agent design loop proposes a contrastive
layout over user-supplied region divisions, and a two-stage hybrid sampler
synthesizes the image region by region with gradient-consistent boundaries
and distance-weighted blending.  Analytic Gaussian velocity models make the
whole pipeline runnable and testable without any pretrained network; a wire
protocol binds real diffusion backends.
"""

from contrastposter.regions import (
    RegionSet,
    DistanceField,
    RegionError,
    load_region_mask,
    load_mask_png,
    load_mask_json,
    distance_field,
    downsample_to_latent,
)
from contrastposter.models import (
    Condition,
    NULL_CONDITION,
    GaussianTarget,
    VelocityModel,
    AnalyticGaussianVelocity,
    GaussianProcessVelocity,
    RemoteVelocityModel,
    analytic_gaussian_velocity,
    composed_field_target,
    condition_lookup,
)
from contrastposter.guidance import (
    sobel_kernels,
    masked_sobel,
    boundary_gradients,
    gradient_consistency_loss,
    loss_gradient,
    apply_guidance,
    ConsistencyPlan,
    BoundaryGradientPair,
)
from contrastposter.sampler import (
    SamplerConfig,
    SamplerTrace,
    run_sampler,
    sample_single_prompt,
    compose_latents,
    blended_velocity,
    aggregate_guided_velocity,
)
from contrastposter.layout import LayoutSpec, LayoutRegion, TextBox, validate_layout
from contrastposter.agents import (
    Theme,
    Element,
    ElementPair,
    RefinerVerdict,
    ChatClient,
    MockChatClient,
    HttpChatClient,
    hue_relation,
    run_design_loop,
)
from contrastposter.metrics import (
    MetricsReport,
    StyleExtractor,
    GaborStyleExtractor,
    default_style_extractor,
    compute_bgd,
    compute_rsd,
    metrics_report,
)
from contrastposter.imaging import latent_to_image, upscale_nearest
from contrastposter.overlay import TextOverlayPlan, build_overlay_plan, render_text_overlay

__version__ = "0.1.0"

__all__ = [
    "RegionSet",
    "DistanceField",
    "RegionError",
    "load_region_mask",
    "load_mask_png",
    "load_mask_json",
    "distance_field",
    "downsample_to_latent",
    "Condition",
    "NULL_CONDITION",
    "GaussianTarget",
    "VelocityModel",
    "AnalyticGaussianVelocity",
    "GaussianProcessVelocity",
    "RemoteVelocityModel",
    "analytic_gaussian_velocity",
    "composed_field_target",
    "condition_lookup",
    "sobel_kernels",
    "masked_sobel",
    "boundary_gradients",
    "gradient_consistency_loss",
    "loss_gradient",
    "apply_guidance",
    "ConsistencyPlan",
    "BoundaryGradientPair",
    "SamplerConfig",
    "SamplerTrace",
    "run_sampler",
    "sample_single_prompt",
    "compose_latents",
    "blended_velocity",
    "aggregate_guided_velocity",
    "LayoutSpec",
    "LayoutRegion",
    "TextBox",
    "validate_layout",
    "Theme",
    "Element",
    "ElementPair",
    "RefinerVerdict",
    "ChatClient",
    "MockChatClient",
    "HttpChatClient",
    "hue_relation",
    "run_design_loop",
    "MetricsReport",
    "StyleExtractor",
    "GaborStyleExtractor",
    "default_style_extractor",
    "compute_bgd",
    "compute_rsd",
    "metrics_report",
    "latent_to_image",
    "upscale_nearest",
    "TextOverlayPlan",
    "build_overlay_plan",
    "render_text_overlay",
]
