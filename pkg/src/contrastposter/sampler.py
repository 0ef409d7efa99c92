"""Two-stage hybrid denoising over region divisions.

Stage 1 (steps 1..tau): every region denoises its own full-canvas latent with
its prompt, followed by one gradient-consistency guidance update across all
boundaries.  At step tau the latents are composed through the region masks.
Stage 2 (steps tau+1..N): joint denoising of the composed latent, where each
region's prediction blends its neighbors' predictions by clipped boundary
distance and folds them in with a classifier-free-guidance style combination.

Two update modes ship: "ode" integrates the velocity field on a uniform time
grid from 1 to 0; "ancestral" applies the DDPM-style update with a linear beta
schedule mapped over the same steps and fresh seeded noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from contrastposter.guidance import ConsistencyPlan, apply_guidance
from contrastposter.models import Condition, NULL_CONDITION, VelocityModel
from contrastposter.regions import DistanceField, RegionSet, distance_field


@dataclass
class SamplerConfig:
    """All hybrid-sampler hyperparameters.

    tau counts the initial independent per-region steps; r_fraction sets the
    blending margin as a fraction of the smaller latent dimension (1/32 by
    default, at least one pixel); w is the guidance weight of the multi-region
    combination; eta the gradient-consistency step size.
    """

    steps: int = 50
    tau: int = 10
    r_fraction: float = 1.0 / 32.0
    w: float = 3.0
    eta: float = 0.1
    mode: str = "ode"  # "ode" | "ancestral"
    seed: int = 0
    channels: int = 1
    strip_k: float = 2.0
    beta_start: float = 1e-4
    beta_end: float = 0.02
    record_snapshots: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 <= self.tau <= self.steps:
            raise ValueError("tau must satisfy 0 <= tau <= steps")
        if self.w < 0:
            raise ValueError("guidance weight w must be >= 0")
        if not 0.0 < self.r_fraction <= 1.0:
            raise ValueError("r_fraction must lie in (0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.mode not in ("ode", "ancestral"):
            raise ValueError("mode must be 'ode' or 'ancestral'")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    def margin_pixels(self, height: int, width: int) -> int:
        """Blending margin r in latent pixels: ceil(min(H, W) * r_fraction), at least 1."""
        return max(1, math.ceil(min(height, width) * self.r_fraction))


def make_ddpm_schedule(n: int, beta_start: float, beta_end: float):
    """Linear-beta DDPM arrays indexed s = 1..n (index 0 unused).

    sigma is sqrt of the posterior variance beta * (1 - abar_{s-1}) / (1 - abar_s),
    forced to 0 at the final step s=1.
    """
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, n)])
    alpha = 1.0 - beta
    abar = np.cumprod(alpha)
    abar[0] = 1.0
    sigma = np.zeros(n + 1)
    for s in range(2, n + 1):
        sigma[s] = math.sqrt(beta[s] * (1.0 - abar[s - 1]) / (1.0 - abar[s]))
    return beta, alpha, abar, sigma


@dataclass
class SamplerTrace:
    """Per-step diagnostics and (optionally) latent snapshots."""

    records: list[dict] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, step: int, t: float, stage: int, l_grad: float | None, vnorms: dict[int, float]):
        self.records.append(
            {
                "step": step,
                "t": t,
                "stage": stage,
                "l_grad": l_grad,
                "per_region_vnorm": [vnorms[k] for k in sorted(vnorms)],
            }
        )

    def dump_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if self.meta:
                fh.write(json.dumps({"type": "header", **self.meta}, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


class SamplerWorkspace:
    """Mask-derived state reused across runs on the same RegionSet."""

    def __init__(self, rs: RegionSet, cfg: SamplerConfig):
        self.rs = rs
        self.margin = cfg.margin_pixels(rs.height, rs.width)
        self.masks = {rid: rs.mask(rid).astype(np.float64) for rid in rs.region_ids}
        self.d_fields: dict[tuple[int, int], DistanceField] = {}
        for i in rs.region_ids:
            for j in rs.adjacency[i]:
                self.d_fields[(i, j)] = distance_field(rs, i, j, self.margin)
        self.plan = ConsistencyPlan(rs, k=cfg.strip_k) if rs.boundaries else None


def stage1_step(
    latents: dict[int, np.ndarray],
    t: float,
    dt: float,
    conditions: dict[int, Condition],
    model: VelocityModel,
    rs: RegionSet,
    cfg: SamplerConfig,
    plan: ConsistencyPlan | None = None,
) -> tuple[dict[int, np.ndarray], float | None, dict[int, float]]:
    """One independent per-region ODE step plus one joint guidance update.

    Returns the new latents, the consistency loss measured after the ODE step
    (None when there are no boundaries), and per-region velocity norms.
    """
    new_latents: dict[int, np.ndarray] = {}
    vnorms: dict[int, float] = {}
    for rid in rs.region_ids:
        try:
            v = model.evaluate(latents[rid], t, conditions[rid])
        except Exception as exc:
            raise RuntimeError(f"velocity evaluation failed for region {rid} at t={t}: {exc}") from exc
        new_latents[rid] = latents[rid] - dt * v
        vnorms[rid] = float(np.linalg.norm(v))
    l_grad = None
    if rs.boundaries:
        if plan is None:
            plan = ConsistencyPlan(rs, k=cfg.strip_k)
        if cfg.eta > 0:
            l_grad, grads = plan.loss_and_grad(new_latents)
            for rid in rs.region_ids:
                new_latents[rid] = apply_guidance(new_latents[rid], grads[rid], cfg.eta)
        else:
            l_grad = plan.loss(new_latents)
    for rid, z in new_latents.items():
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite latent for region {rid} after stage-1 step at t={t}")
    return new_latents, l_grad, vnorms


def compose_latents(latents: dict[int, np.ndarray], rs: RegionSet) -> np.ndarray:
    """Masked composition: sum over regions of latent * mask (exact partition)."""
    out = None
    for rid in rs.region_ids:
        z = np.asarray(latents[rid], dtype=np.float64)
        if z.shape[1:] != (rs.height, rs.width):
            raise ValueError(
                f"latent for region {rid} has spatial shape {z.shape[1:]}, mask is {(rs.height, rs.width)}"
            )
        term = z * rs.mask(rid).astype(np.float64)
        out = term if out is None else out + term
    return out


def blended_velocity(
    z: np.ndarray,
    t: float,
    i: int,
    j: int,
    d_field: DistanceField,
    model: VelocityModel,
    conditions: dict[int, Condition],
    cache: dict | None = None,
) -> np.ndarray:
    """Distance-weighted pair prediction ((r+d) v_i + (r-d) v_j) / 2r.

    d is the clipped distance of each pixel toward the (i, j) boundary, so the
    two weights sum to one pointwise: pure v_i at the margin, an equal split
    on boundary pixels.  Both model calls see the full canvas.
    """
    r = d_field.margin
    if r <= 0:
        raise ValueError("blending margin r must be positive")
    v_i = _cached_eval(model, z, t, conditions[i], cache)
    v_j = _cached_eval(model, z, t, conditions[j], cache)
    d = d_field.values
    w_own = (r + d) / (2.0 * r)
    w_other = (r - d) / (2.0 * r)
    return w_own * v_i + w_other * v_j


def _cached_eval(model, z, t, c: Condition, cache: dict | None):
    if cache is None:
        return model.evaluate(z, t, c)
    key = c.text if c.kind == "prompt" else None
    if key not in cache:
        cache[key] = model.evaluate(z, t, c)
    return cache[key]


def aggregate_guided_velocity(
    z: np.ndarray,
    t: float,
    i: int,
    model: VelocityModel,
    conditions: dict[int, Condition],
    adjacency: dict[int, tuple[int, ...]],
    d_fields: dict[tuple[int, int], DistanceField],
    w: float,
    cache: dict | None = None,
) -> np.ndarray:
    """Classifier-free-guidance combination of all neighbor-blended predictions.

    eps_i = v(z, t, null) + (w / |A(i)|) * sum_j (blend(i, j) - v(z, t, null)).
    A region with no neighbors falls back to standard CFG on its own prompt.
    """
    v_null = _cached_eval(model, z, t, NULL_CONDITION, cache)
    neighbors = adjacency.get(i, ())
    if not neighbors:
        v_own = _cached_eval(model, z, t, conditions[i], cache)
        return v_null + w * (v_own - v_null)
    acc = np.zeros_like(v_null)
    for j in neighbors:
        eps_ij = blended_velocity(z, t, i, j, d_fields[(i, j)], model, conditions, cache)
        acc = acc + (eps_ij - v_null)
    return v_null + (w / len(neighbors)) * acc


def stage2_step(
    z: np.ndarray,
    t: float,
    dt: float,
    rs: RegionSet,
    d_fields: dict[tuple[int, int], DistanceField],
    model: VelocityModel,
    conditions: dict[int, Condition],
    cfg: SamplerConfig,
    masks: dict[int, np.ndarray] | None = None,
    schedule=None,
    ddpm_index: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict[int, float]]:
    """One joint denoising step of the composed latent.

    ode mode: z - dt * sum_i (eps_i * M_i).  ancestral mode: the DDPM update
    (z - (1-a)/sqrt(1-abar) * masked sum) / sqrt(a) + sigma * fresh noise.
    """
    if masks is None:
        masks = {rid: rs.mask(rid).astype(np.float64) for rid in rs.region_ids}
    cache: dict = {}
    eps_sum = np.zeros_like(z)
    vnorms: dict[int, float] = {}
    for rid in rs.region_ids:
        eps_i = aggregate_guided_velocity(
            z, t, rid, model, conditions, rs.adjacency, d_fields, cfg.w, cache
        )
        vnorms[rid] = float(np.linalg.norm(eps_i))
        eps_sum = eps_sum + eps_i * masks[rid]
    if cfg.mode == "ode":
        z_next = z - dt * eps_sum
    else:
        if schedule is None or ddpm_index is None or rng is None:
            raise ValueError("ancestral mode requires schedule, ddpm_index and rng")
        _, alpha, abar, sigma = schedule
        s = ddpm_index
        z_next = (z - (1.0 - alpha[s]) / math.sqrt(1.0 - abar[s]) * eps_sum) / math.sqrt(alpha[s])
        if sigma[s] > 0:
            z_next = z_next + sigma[s] * rng.standard_normal(z.shape)
    if not np.isfinite(z_next).all():
        raise FloatingPointError(f"non-finite latent after stage-2 step at t={t}")
    return z_next, vnorms


def run_sampler(
    rs: RegionSet,
    conditions: dict[int, Condition],
    model: VelocityModel,
    cfg: SamplerConfig,
    workspace: SamplerWorkspace | None = None,
    collect_trace: bool = True,
) -> tuple[np.ndarray, SamplerTrace]:
    """Full hybrid schedule: tau stage-1 steps, composition, stage-2 to t=0.

    All regions share one seeded initial latent (so tau=0 composes to exactly
    that noise).  In ode mode with a deterministic model the output is
    bit-identical across runs with the same seed.
    """
    if sorted(conditions) != sorted(rs.region_ids):
        raise ValueError(f"conditions {sorted(conditions)} do not match regions {sorted(rs.region_ids)}")
    ws = workspace or SamplerWorkspace(rs, cfg)
    n, tau = cfg.steps, cfg.tau
    dt = 1.0 / n
    rng = np.random.default_rng(cfg.seed)
    z0 = rng.standard_normal((cfg.channels, rs.height, rs.width))
    trace = SamplerTrace(
        meta={
            "steps": n,
            "tau": tau,
            "mode": cfg.mode,
            "w": cfg.w,
            "eta": cfg.eta,
            "r_pixels": ws.margin,
            "seed": cfg.seed,
            "model": model.name,
        }
    )
    schedule = make_ddpm_schedule(n, cfg.beta_start, cfg.beta_end) if cfg.mode == "ancestral" else None

    latents = {rid: z0.copy() for rid in rs.region_ids}
    if cfg.record_snapshots:
        trace.snapshots.append(z0.copy())
    for step in range(1, tau + 1):
        t = 1.0 - (step - 1) * dt
        latents, l_grad, vnorms = stage1_step(
            latents, t, dt, conditions, model, rs, cfg, plan=ws.plan
        )
        if collect_trace:
            trace.add(step, t, 1, l_grad, vnorms)
        if cfg.record_snapshots:
            trace.snapshots.append(compose_latents(latents, rs))

    z = compose_latents(latents, rs)
    for step in range(tau + 1, n + 1):
        t = 1.0 - (step - 1) * dt
        try:
            z, vnorms = stage2_step(
                z,
                t,
                dt,
                rs,
                ws.d_fields,
                model,
                conditions,
                cfg,
                masks=ws.masks,
                schedule=schedule,
                ddpm_index=(n - step + 1),
                rng=rng,
            )
        except FloatingPointError as exc:
            raise FloatingPointError(f"step {step}: {exc}") from exc
        if collect_trace:
            trace.add(step, t, 2, None, vnorms)
        if cfg.record_snapshots:
            trace.snapshots.append(z.copy())
    return z, trace


def sample_single_prompt(
    model: VelocityModel, condition: Condition, cfg: SamplerConfig, height: int, width: int
) -> np.ndarray:
    """Reference single-prompt sampler the one-region pipeline must match bit-exactly.

    The same schedule shape as the hybrid run: tau plain conditional Euler
    steps, then classifier-free-guided steps (with tau=0 this is textbook CFG
    sampling).  Written straight-line, with no region machinery.
    """
    n, tau = cfg.steps, cfg.tau
    dt = 1.0 / n
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((cfg.channels, height, width))
    schedule = make_ddpm_schedule(n, cfg.beta_start, cfg.beta_end) if cfg.mode == "ancestral" else None
    for step in range(1, tau + 1):
        t = 1.0 - (step - 1) * dt
        z = z - dt * model.evaluate(z, t, condition)
    for step in range(tau + 1, n + 1):
        t = 1.0 - (step - 1) * dt
        v_null = model.evaluate(z, t, NULL_CONDITION)
        v_own = model.evaluate(z, t, condition)
        eps = v_null + cfg.w * (v_own - v_null)
        if cfg.mode == "ode":
            z = z - dt * eps
        else:
            _, alpha, abar, sigma = schedule
            s = n - step + 1
            z = (z - (1.0 - alpha[s]) / math.sqrt(1.0 - abar[s]) * eps) / math.sqrt(alpha[s])
            if sigma[s] > 0:
                z = z + sigma[s] * rng.standard_normal(z.shape)
    return z
