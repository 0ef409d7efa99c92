"""Velocity predictor abstraction and its implementations.

The sampler only ever sees `VelocityModel.evaluate(z, t, condition)`.  Two
implementations ship: a closed-form linear-Gaussian model (the verification
workhorse: its posterior-expected velocity is exact, so sampler moments can be
checked against known targets) and a thin client for remote diffusion
backends speaking the wire protocol.

Time convention: t=1 is pure noise, t=0 is data, and a denoising step is
z_{t-dt} = z_t - dt * v(z_t, t, c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from contrastposter import wire
from contrastposter.regions import RegionSet

_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class Condition:
    """A prompt or the null (unconditional) condition."""

    kind: str  # "prompt" | "null"
    text: str | None = None

    def __post_init__(self):
        if self.kind not in ("prompt", "null"):
            raise ValueError(f"unknown condition kind '{self.kind}'")
        if self.kind == "prompt" and not self.text:
            raise ValueError("prompt condition requires non-empty text")
        if self.kind == "null" and self.text is not None:
            raise ValueError("null condition carries no text")

    @staticmethod
    def prompt(text: str) -> "Condition":
        return Condition(kind="prompt", text=text)

    @staticmethod
    def null() -> "Condition":
        return Condition(kind="null")


NULL_CONDITION = Condition.null()


@dataclass(frozen=True, eq=False)
class GaussianTarget:
    """Mixture of isotropic Gaussians over latent pixels.

    Each component is (weight, mean, scale); the mean broadcasts per channel
    (shape (C,)) or is a full (C, H, W) field.  Weights must be positive and
    sum to one.
    """

    components: tuple[tuple[float, np.ndarray, float], ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("target needs at least one component")
        weights = np.array([w for w, _, _ in self.components])
        if (weights <= 0).any():
            raise ValueError("component weights must be positive")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"component weights must sum to 1, got {float(weights.sum())}")
        for _, _, s in self.components:
            if not s > 0:
                raise ValueError("component scale must be > 0")

    @staticmethod
    def point(mean, scale: float = 1.0) -> "GaussianTarget":
        mu = np.asarray(mean, dtype=np.float64)
        return GaussianTarget(components=((1.0, mu, float(scale)),))

    @staticmethod
    def mixture(parts) -> "GaussianTarget":
        comps = tuple(
            (float(w), np.asarray(mu, dtype=np.float64), float(s)) for w, mu, s in parts
        )
        return GaussianTarget(components=comps)

    @staticmethod
    def mixture_of(targets: list["GaussianTarget"]) -> "GaussianTarget":
        """Equal-weight pool of several targets' components."""
        comps = []
        for tg in targets:
            for w, mu, s in tg.components:
                comps.append((w / len(targets), mu, s))
        return GaussianTarget.mixture(comps)

    def mean_field(self, channels: int) -> np.ndarray:
        """Overall mean, broadcast to (C, 1, 1) or (C, H, W)."""
        acc = None
        for w, mu, _ in self.components:
            m = _broadcast_mean(mu, channels)
            acc = w * m if acc is None else acc + w * m
        return acc

    def mean_scale(self) -> float:
        return float(sum(w * s for w, _, s in self.components))


def _broadcast_mean(mu: np.ndarray, channels: int) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim == 0:
        return np.full((channels, 1, 1), float(mu))
    if mu.ndim == 1:
        if mu.shape[0] != channels:
            raise ValueError(f"mean vector has {mu.shape[0]} channels, model has {channels}")
        return mu.reshape(channels, 1, 1)
    if mu.ndim == 3:
        if mu.shape[0] != channels:
            raise ValueError(f"mean field has {mu.shape[0]} channels, model has {channels}")
        return mu
    raise ValueError(f"mean must be scalar, (C,), or (C, H, W); got shape {mu.shape}")


def composed_field_target(
    rs: RegionSet, targets_by_region: dict[int, GaussianTarget], channels: int
) -> GaussianTarget:
    """Layout-composed target: each pixel takes its owning region's mean.

    Serves as the null-condition response for toy runs, so classifier-free
    guidance extrapolates around content the canvas already carries instead of
    around a global prior (a global prior biases per-region means under w > 1).
    The scale is the area-weighted average of the per-region mean scales.
    """
    h, w = rs.height, rs.width
    mean = np.zeros((channels, h, w))
    scale = 0.0
    for rid in rs.region_ids:
        m = rs.mask(rid)
        tg = targets_by_region[rid]
        mean += np.where(m, tg.mean_field(channels) * np.ones((channels, h, w)), 0.0)
        scale += tg.mean_scale() * (float(m.sum()) / (h * w))
    return GaussianTarget.point(mean, scale)


def analytic_gaussian_velocity(z: np.ndarray, t: float, target: GaussianTarget) -> np.ndarray:
    """Exact posterior-expected velocity E[noise - data | z_t] for a Gaussian mixture.

    Under the linear path z_t = (1-t) x + t e with x ~ component k and
    e ~ N(0, I), each component contributes an affine velocity; components are
    combined with per-pixel posterior weights computed in log space.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be (C, H, W), got {z.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time t must lie in [0, 1], got {t}")
    channels = z.shape[0]
    comps = target.components
    vs = np.empty((len(comps),) + z.shape)
    logw = np.empty((len(comps),) + z.shape[1:])
    for idx, (pi, mu, s) in enumerate(comps):
        m = _broadcast_mean(mu, channels)
        var = max((1.0 - t) ** 2 * s * s + t * t, _VAR_FLOOR)
        resid = z - (1.0 - t) * m
        vs[idx] = (t - (1.0 - t) * s * s) / var * resid - m
        # component membership is a per-pixel choice: sum channel log-densities
        logw[idx] = np.log(pi) - 0.5 * channels * np.log(var) - (resid * resid).sum(axis=0) / (
            2.0 * var
        )
    if len(comps) == 1:
        return vs[0]
    logw -= logw.max(axis=0, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=0, keepdims=True)
    return np.einsum("khw,kchw->chw", w, vs)


class VelocityModel:
    """Interface: evaluate(z, t, condition) -> velocity of identical shape."""

    name: str = "velocity-model"
    channels: int = 0
    deterministic: bool = False

    def evaluate(self, z: np.ndarray, t: float, c: Condition) -> np.ndarray:
        raise NotImplementedError


class AnalyticGaussianVelocity(VelocityModel):
    """Closed-form model mapping prompt strings to Gaussian targets.

    A prompt resolves to the target whose key equals it, else to the longest
    key contained in the prompt (so layout prompts like "iceberg, towering
    blue iceberg, blue" match the "iceberg" target).  The null condition maps
    to `null_target` (default: equal-weight mixture of all prompt targets).
    """

    deterministic = True

    def __init__(
        self,
        targets: dict[str, GaussianTarget],
        channels: int,
        null_target: GaussianTarget | None = None,
        name: str = "analytic-gaussian",
    ):
        if not targets:
            raise ValueError("need at least one prompt target")
        self.targets = dict(targets)
        self.channels = int(channels)
        self.null_target = null_target or GaussianTarget.mixture_of(list(targets.values()))
        self.name = name

    def resolve(self, c: Condition) -> GaussianTarget:
        if c.kind == "null":
            return self.null_target
        if c.text in self.targets:
            return self.targets[c.text]
        hits = [key for key in self.targets if key in c.text]
        if not hits:
            raise KeyError(f"no analytic target matches prompt '{c.text}'")
        hits.sort(key=len, reverse=True)
        if len(hits) > 1 and len(hits[0]) == len(hits[1]):
            raise KeyError(f"prompt '{c.text}' matches multiple targets {hits[:2]}")
        return self.targets[hits[0]]

    def evaluate(self, z: np.ndarray, t: float, c: Condition) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[0] != self.channels:
            raise ValueError(f"latent has {z.shape[0]} channels, model expects {self.channels}")
        return analytic_gaussian_velocity(z, t, self.resolve(c))


def _rbf_spectrum(h: int, w: int, length: float, variance: float) -> np.ndarray:
    """Eigenvalues of a periodic RBF covariance on the h x w grid (FFT basis)."""
    yy = np.minimum(np.arange(h), h - np.arange(h))
    xx = np.minimum(np.arange(w), w - np.arange(w))
    d2 = yy[:, None] ** 2 + xx[None, :] ** 2
    lam = np.fft.fft2(np.exp(-d2 / (2.0 * length * length))).real
    lam = np.maximum(lam, 1e-10)
    lam *= variance / lam.mean()  # stationary per-pixel variance
    return lam


class GaussianProcessVelocity(VelocityModel):
    """Closed-form model whose targets are spatially correlated Gaussian fields.

    Per-pixel Gaussian targets produce latents with independent pixels, which
    carry no transferable alignment structure for boundary diagnostics; this
    variant gives the target a periodic RBF covariance (correlation length in
    pixels) so latents are smooth fields, the natural desk-scale analog of a
    real backbone's spatial coherence.  The posterior-expected velocity stays
    exact: each Fourier mode follows the scalar linear-Gaussian formula with
    its own eigenvalue.

    Prompts map to (C, H, W) mean fields; the null condition uses null_mean
    (default: zero field).
    """

    deterministic = True

    def __init__(
        self,
        means: dict[str, np.ndarray],
        height: int,
        width: int,
        channels: int = 1,
        length: float = 2.0,
        variance: float = 1.0,
        null_mean: np.ndarray | None = None,
        name: str = "analytic-gp",
    ):
        if not means:
            raise ValueError("need at least one prompt mean field")
        self.means = {k: np.broadcast_to(np.asarray(v, dtype=np.float64), (channels, height, width))
                      for k, v in means.items()}
        self.null_mean = (
            np.zeros((channels, height, width))
            if null_mean is None
            else np.broadcast_to(np.asarray(null_mean, dtype=np.float64), (channels, height, width))
        )
        self.lam = _rbf_spectrum(height, width, length, variance)
        self.channels = int(channels)
        self.name = name

    def resolve_mean(self, c: Condition) -> np.ndarray:
        if c.kind == "null":
            return self.null_mean
        if c.text in self.means:
            return self.means[c.text]
        hits = sorted((k for k in self.means if k in c.text), key=len, reverse=True)
        if not hits:
            raise KeyError(f"no mean field matches prompt '{c.text}'")
        return self.means[hits[0]]

    def evaluate(self, z: np.ndarray, t: float, c: Condition) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time t must lie in [0, 1], got {t}")
        mu = self.resolve_mean(c)
        resid = z - (1.0 - t) * mu
        rhat = np.fft.fft2(resid, axes=(1, 2))
        gain = (t - (1.0 - t) * self.lam) / np.maximum(
            (1.0 - t) ** 2 * self.lam + t * t, _VAR_FLOOR
        )
        return np.fft.ifft2(gain[None] * rhat, axes=(1, 2)).real - mu


def remote_velocity(
    z: np.ndarray, t: float, c: Condition, endpoint: str, model: str = "default", timeout: float = 30.0
) -> np.ndarray:
    """One velocity evaluation against a wire-protocol backend."""
    payload = wire.velocity_request(z, t, c.text if c.kind == "prompt" else None, model)
    obj = wire.post_json(endpoint.rstrip("/") + wire.VELOCITY_PATH, payload, timeout=timeout)
    return wire.parse_velocity_response(obj, tuple(z.shape))


class RemoteVelocityModel(VelocityModel):
    """Client-side VelocityModel over the HTTP wire protocol.

    Stateless per call, so concurrent evaluation is safe.  The health check at
    construction pins the channel count the backend produces.
    """

    deterministic = False

    def __init__(self, endpoint: str, model: str = "default", timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.name = f"remote({model})"
        health = wire.post_json(self.endpoint + wire.HEALTH_PATH, {}, timeout=timeout)
        if not health.get("ok"):
            raise wire.BackendError(f"backend at {endpoint} reports not ok: {health}")
        self.channels = int(health["channels"])

    def evaluate(self, z: np.ndarray, t: float, c: Condition) -> np.ndarray:
        return remote_velocity(z, t, c, self.endpoint, self.model, self.timeout)

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Latent -> RGB uint8 image via the backend decoder."""
        import base64
        import io

        from PIL import Image

        payload = {"shape": [int(s) for s in z.shape], "latent_b64": wire.encode_f32(z)}
        obj = wire.post_json(self.endpoint + wire.DECODE_PATH, payload, timeout=self.timeout)
        if "png_b64" not in obj:
            raise wire.BackendError("decode response missing 'png_b64'")
        raw = base64.b64decode(obj["png_b64"])
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"))


def condition_lookup(layout, region_id: int) -> Condition:
    """Prompt for one region: "<element>, <description>, <colors>, <global style>".

    Empty segments are dropped, so there is never a dangling comma.
    """
    entry = None
    for region in layout.regions:
        if region.region_id == region_id:
            entry = region
            break
    if entry is None:
        raise KeyError(f"region {region_id} not present in layout")
    segments = [entry.element, entry.description, ", ".join(entry.color_names), ", ".join(layout.global_style)]
    text = ", ".join(seg for seg in segments if seg)
    return Condition.prompt(text)
