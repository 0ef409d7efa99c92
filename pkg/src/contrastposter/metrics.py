"""Boundary and style metrics for generated posters.

BGD (boundary gradient difference) measures content continuity: one minus the
mean cosine similarity of matched Sobel gradients along region boundaries
(lower is better).  RSD (regional style difference) measures visual contrast:
the mean squared difference between per-region Gram matrices of style features
(higher means stronger contrast).

The default style extractor is a fixed bank of 16 Gabor filters over
luminance.  It is a desk-scale stand-in, so absolute RSD values are only
comparable within one extractor; an external-features file can supply Grams
from any other extractor through the same formula.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from contrastposter.guidance import masked_sobel_operators, match_boundary_strips
from contrastposter.regions import RegionSet

DEFAULT_STRIP_K = 4
_ZERO_NORM_EPS = 1e-20  # on squared gradient norms of [0,1]-scaled images


@dataclass
class MetricsReport:
    bgd: float
    rsd: float | None
    per_boundary_bgd: dict[str, float]
    extractor_id: str
    parameters: dict
    flags: list[str] = field(default_factory=list)
    rsd_error: str | None = None

    def to_dict(self) -> dict:
        return {
            "bgd": self.bgd,
            "rsd": self.rsd,
            "per_boundary_bgd": self.per_boundary_bgd,
            "extractor_id": self.extractor_id,
            "parameters": self.parameters,
            "flags": self.flags,
            "rsd_error": self.rsd_error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _image_planes(image: np.ndarray) -> np.ndarray:
    """Image as (C, H, W) float in [0, 1]."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3:
        return np.moveaxis(arr, 2, 0)
    raise ValueError(f"image must be (H, W) or (H, W, C), got {arr.shape}")


def compute_bgd(
    image: np.ndarray, rs: RegionSet, strip_k: float = DEFAULT_STRIP_K
) -> tuple[float, dict[tuple[int, int], float], list[str]]:
    """Boundary gradient difference: 1 - mean cosine over matched gradient pairs.

    The 5x5 Sobel field is computed on the whole image (content continuity is
    judged on what actually renders, so a hard step sitting exactly on the
    boundary yields parallel gradients on both sides); the strip matching is
    the guidance module's nearest-pixel pairing.  Pairs where either gradient
    vanishes carry no orientation to compare and are excluded from the mean;
    if every pair degenerates this way (a flat image) the boundary is flagged
    and scores the zero-vector convention value 1.

    Returns (bgd, per-boundary bgd, flags); per-boundary values average back
    to bgd when weighted by their counted pair totals.
    """
    planes = _image_planes(image)
    if planes.shape[1:] != (rs.height, rs.width):
        raise ValueError(
            f"image resolution {planes.shape[1:]} does not match mask {(rs.height, rs.width)}"
        )
    flags: list[str] = []
    if not rs.boundaries:
        return 0.0, {}, ["no boundaries"]
    c, h, w = planes.shape
    sx, sy = masked_sobel_operators(np.ones((h, w), dtype=bool))
    flat = planes.reshape(c, h * w)
    grad = np.concatenate([(sx @ flat.T).T, (sy @ flat.T).T], axis=0)  # (2C, H*W)
    matched = match_boundary_strips(rs, strip_k)
    per_boundary: dict[tuple[int, int], float] = {}
    weights: dict[tuple[int, int], int] = {}
    total_cos, total_n = 0.0, 0
    for key, (pix_i, pix_j) in matched.items():
        v = grad[:, pix_i[:, 0] * w + pix_i[:, 1]]
        u = grad[:, pix_j[:, 0] * w + pix_j[:, 1]]
        nv = np.einsum("cn,cn->n", v, v)
        nu = np.einsum("cn,cn->n", u, u)
        counted = (nv > _ZERO_NORM_EPS) & (nu > _ZERO_NORM_EPS)
        n = int(counted.sum())
        if n == 0:
            per_boundary[key] = 1.0
            weights[key] = 0
            continue
        dot = np.einsum("cn,cn->n", v, u)
        cos = np.where(counted, dot / np.sqrt(np.maximum(nv * nu, _ZERO_NORM_EPS)), 0.0)
        per_boundary[key] = 1.0 - float(cos[counted].mean())
        weights[key] = n
        total_cos += float(cos[counted].sum())
        total_n += n
    if total_n == 0:
        flags.append("degenerate gradients")
        return 1.0, per_boundary, flags
    bgd = 1.0 - total_cos / total_n
    if any(w == 0 for w in weights.values()):
        flags.append("some boundaries fully degenerate")
    return bgd, per_boundary, flags


class StyleExtractor:
    """Interface: features(image, mask) -> (F, F) Gram of masked filter responses."""

    extractor_id: str = "style-extractor"
    support: int = 1  # pixels a region must at least hold

    def features(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _gabor_kernel(wavelength: float, theta_deg: float, phase: float, sigma: float) -> np.ndarray:
    """Isotropic-envelope Gabor sampled on an odd square grid, made zero-mean.

    With an isotropic envelope, the 90-degree-rotated kernel equals the kernel
    of the 90-degree-shifted orientation exactly, which keeps the bank's
    orientation blocks permutation-consistent under image rotation.
    """
    half = int(np.ceil(2.5 * sigma))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xs, ys = np.meshgrid(ax, ax)  # xs: column offset, ys: row offset
    theta = np.deg2rad(theta_deg)
    xr = xs * np.cos(theta) + ys * np.sin(theta)
    k = np.exp(-(xs * xs + ys * ys) / (2.0 * sigma * sigma)) * np.cos(
        2.0 * np.pi * xr / wavelength + phase
    )
    return k - k.mean()


class GaborStyleExtractor(StyleExtractor):
    """Fixed bank of 16 Gabor filters (4 orientations x 2 scales x 2 phases).

    Responses are computed on luminance with reflect padding; the Gram over
    masked pixels is normalized by the masked pixel count.  All parameters are
    frozen here and echoed in reports.
    """

    ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
    WAVELENGTHS = (4.0, 8.0)
    PHASES = (0.0, np.pi / 2.0)
    SIGMA_FACTOR = 0.5

    def __init__(self):
        self.kernels = []
        self.channel_labels = []
        for lam in self.WAVELENGTHS:
            for theta in self.ORIENTATIONS:
                for phase in self.PHASES:
                    self.kernels.append(
                        _gabor_kernel(lam, theta, phase, self.SIGMA_FACTOR * lam)
                    )
                    self.channel_labels.append((lam, theta, phase))
        self.extractor_id = "gabor16-o4s2p2"
        self.support = max(k.size for k in self.kernels)

    def parameters(self) -> dict:
        return {
            "orientations_deg": list(self.ORIENTATIONS),
            "wavelengths": list(self.WAVELENGTHS),
            "phases": [0.0, 90.0],
            "sigma_factor": self.SIGMA_FACTOR,
            "filters": len(self.kernels),
        }

    def responses(self, image: np.ndarray) -> np.ndarray:
        planes = _image_planes(image)
        if planes.shape[0] >= 3:
            gray = 0.299 * planes[0] + 0.587 * planes[1] + 0.114 * planes[2]
        else:
            gray = planes[0]
        return np.stack([ndimage.correlate(gray, k, mode="reflect") for k in self.kernels])

    def features(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        resp = self.responses(image)
        sel = resp[:, np.asarray(mask, dtype=bool)]
        n = sel.shape[1]
        if n == 0:
            raise ValueError("mask selects no pixels")
        return (sel @ sel.T) / n


def default_style_extractor() -> StyleExtractor:
    return GaborStyleExtractor()


def _pairwise_gram_mse(grams: dict[int, np.ndarray]) -> float:
    ids = sorted(grams)
    total, count = 0.0, 0
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            diff = grams[ids[a]] - grams[ids[b]]
            total += float((diff * diff).mean())
            count += 1
    return total / count


def compute_rsd(
    image: np.ndarray, rs: RegionSet, extractor: StyleExtractor | None = None
) -> tuple[float, list[str]]:
    """Mean squared Gram difference over unordered region pairs.

    Regions holding fewer pixels than the filter support are excluded with a
    warning; fewer than two usable regions is an error.
    """
    if len(rs.region_ids) < 2:
        raise ValueError("RSD needs at least 2 regions")
    extractor = extractor or default_style_extractor()
    warnings: list[str] = []
    grams: dict[int, np.ndarray] = {}
    for rid in rs.region_ids:
        mask = rs.mask(rid)
        if int(mask.sum()) < extractor.support:
            warnings.append(f"region {rid} smaller than the filter support, excluded")
            continue
        grams[rid] = extractor.features(image, mask)
    if len(grams) < 2:
        raise ValueError("fewer than 2 regions large enough for style features")
    return _pairwise_gram_mse(grams), warnings


def rsd_from_features_file(path: str) -> tuple[float, str]:
    """RSD from an external features file {"extractor_id", "regions": [{"id", "gram"}]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    grams = {}
    for entry in doc["regions"]:
        g = np.asarray(entry["gram"], dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"region {entry['id']}: gram must be square, got {g.shape}")
        grams[int(entry["id"])] = g
    if len(grams) < 2:
        raise ValueError("features file needs at least 2 regions")
    return _pairwise_gram_mse(grams), str(doc.get("extractor_id", "external"))


def write_features_file(path: str, extractor_id: str, grams: dict[int, np.ndarray]) -> None:
    doc = {
        "extractor_id": extractor_id,
        "regions": [
            {"id": rid, "gram": np.asarray(g, dtype=float).tolist()} for rid, g in sorted(grams.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def metrics_report(
    image: np.ndarray,
    rs: RegionSet,
    strip_k: float = DEFAULT_STRIP_K,
    extractor: StyleExtractor | None = None,
    features_path: str | None = None,
) -> MetricsReport:
    """Full report: BGD always, RSD from the extractor or an external features file."""
    extractor = extractor or default_style_extractor()
    bgd, per_boundary, flags = compute_bgd(image, rs, strip_k=strip_k)
    rsd: float | None = None
    rsd_error: str | None = None
    extractor_id = extractor.extractor_id
    if features_path is not None:
        rsd, extractor_id = rsd_from_features_file(features_path)
    else:
        try:
            rsd, warns = compute_rsd(image, rs, extractor)
            flags.extend(warns)
        except ValueError as exc:
            rsd_error = str(exc)
    params = {"strip_k": strip_k}
    if isinstance(extractor, GaborStyleExtractor) and features_path is None:
        params["filter_bank"] = extractor.parameters()
    return MetricsReport(
        bgd=bgd,
        rsd=rsd,
        per_boundary_bgd={f"{i}-{j}": v for (i, j), v in per_boundary.items()},
        extractor_id=extractor_id,
        parameters=params,
        flags=flags,
        rsd_error=rsd_error,
    )
