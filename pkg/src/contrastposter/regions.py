"""Region geometry: mask loading, partitions, adjacency, boundaries, distance fields.

A canvas is divided into labeled regions by an integer mask.  This module
derives everything downstream of that mask: which regions touch (adjacency),
the exact pixel pairs straddling each boundary, and the clipped Euclidean
distance fields that drive the boundary blending weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class RegionError(ValueError):
    """Raised for malformed region masks or invalid region queries."""


@dataclass(frozen=True, eq=False)
class RegionSet:
    """Exact partition of a canvas into labeled regions.

    labels      -- (H, W) int32, one region id per pixel (read-only).
    region_ids  -- sorted tuple of the ids present.
    adjacency   -- region id -> sorted tuple of neighbors (symmetric).
    boundaries  -- {(i, j) with i < j: (n, 4) int32 array of boundary pixel
                   pairs [yi, xi, yj, xj], where (yi, xi) lies in region i}.
    connectivity -- 4 (default) or 8; defines which pixel pairs count.
    """

    labels: np.ndarray
    region_ids: tuple[int, ...]
    adjacency: dict[int, tuple[int, ...]]
    boundaries: dict[tuple[int, int], np.ndarray]
    connectivity: int = 4

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    def mask(self, region_id: int) -> np.ndarray:
        """Boolean (H, W) mask of one region."""
        if region_id not in self.adjacency:
            raise RegionError(f"unknown region id {region_id}")
        return self.labels == region_id

    def boundary_pairs(self, i: int, j: int) -> np.ndarray:
        """Boundary pixel pairs oriented (side i, side j) as an (n, 4) array."""
        key = (min(i, j), max(i, j))
        if key not in self.boundaries:
            raise RegionError(f"regions {i} and {j} are not adjacent")
        pairs = self.boundaries[key]
        if i <= j:
            return pairs
        return pairs[:, [2, 3, 0, 1]]

    def boundary_side_pixels(self, i: int, j: int) -> np.ndarray:
        """Unique region-i pixels that touch region j, sorted (row, col)."""
        pairs = self.boundary_pairs(i, j)
        side = np.unique(pairs[:, :2], axis=0)
        return side


def load_region_mask(indexed_image: np.ndarray, connectivity: int = 4) -> RegionSet:
    """Build a RegionSet from a per-pixel integer label image.

    Every pixel must carry a non-negative id; adjacency and boundary pixel
    pairs are scanned with the requested connectivity (4 by default, 8 adds
    diagonal pairs).
    """
    labels = np.asarray(indexed_image)
    if labels.ndim != 2 or labels.size == 0:
        raise RegionError("region mask must be a non-empty 2-D integer image")
    if not np.issubdtype(labels.dtype, np.integer):
        raise RegionError("region mask must have an integer dtype")
    if labels.min() < 0:
        raise RegionError("region ids must be non-negative")
    if connectivity not in (4, 8):
        raise RegionError("connectivity must be 4 or 8")
    labels = labels.astype(np.int32, copy=True)

    region_ids = tuple(int(v) for v in np.unique(labels))

    pair_rows: dict[tuple[int, int], list[np.ndarray]] = {}

    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w]

    def collect(dy: int, dx: int) -> None:
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        ay, ax = yy[ys, xs], xx[ys, xs]
        by, bx = ay + dy, ax + dx
        la = labels[ay, ax]
        lb = labels[by, bx]
        hit = la != lb
        if not hit.any():
            return
        quad = np.stack([ay[hit], ax[hit], by[hit], bx[hit]], axis=1).astype(np.int32)
        ia, ib = la[hit], lb[hit]
        swap = ia > ib
        if swap.any():
            quad[swap] = quad[swap][:, [2, 3, 0, 1]]
            ia, ib = np.where(swap, ib, ia), np.where(swap, ia, ib)
        for i, j in np.unique(np.stack([ia, ib], axis=1), axis=0):
            sel = (ia == i) & (ib == j)
            pair_rows.setdefault((int(i), int(j)), []).append(quad[sel])

    offsets = [(0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    for dy, dx in offsets:
        collect(dy, dx)

    boundaries: dict[tuple[int, int], np.ndarray] = {}
    for key, chunks in pair_rows.items():
        pairs = np.concatenate(chunks, axis=0)
        order = np.lexsort((pairs[:, 3], pairs[:, 2], pairs[:, 1], pairs[:, 0]))
        pairs = np.ascontiguousarray(pairs[order])
        pairs.setflags(write=False)
        boundaries[key] = pairs

    adjacency: dict[int, tuple[int, ...]] = {rid: () for rid in region_ids}
    neigh: dict[int, set[int]] = {rid: set() for rid in region_ids}
    for i, j in boundaries:
        neigh[i].add(j)
        neigh[j].add(i)
    for rid in region_ids:
        adjacency[rid] = tuple(sorted(neigh[rid]))

    labels.setflags(write=False)
    return RegionSet(
        labels=labels,
        region_ids=region_ids,
        adjacency=adjacency,
        boundaries=boundaries,
        connectivity=connectivity,
    )


def load_mask_png(path: str, connectivity: int = 4) -> RegionSet:
    """Load an indexed (palette) PNG whose palette index is the region id.

    Ids must be contiguous from 0: a gap (an id below the maximum used index
    with zero pixels) is an error.  Trailing unused palette entries are fine.
    """
    from PIL import Image

    with Image.open(path) as im:
        if im.mode != "P":
            raise RegionError(
                f"region mask PNG must be palette-indexed (mode 'P'), got mode '{im.mode}'"
            )
        labels = np.asarray(im, dtype=np.int32)
    used = np.unique(labels)
    expected = np.arange(used[-1] + 1)
    if used.size != expected.size:
        missing = sorted(set(expected.tolist()) - set(used.tolist()))
        raise RegionError(f"region ids not contiguous: id(s) {missing} have zero pixels")
    return load_region_mask(labels, connectivity=connectivity)


def load_mask_json(path: str, connectivity: int = 4) -> RegionSet:
    """Load a polygon mask: {"width", "height", "regions": [{"id", "polygons"}]}.

    Each region's polygons are rasterized together under the even-odd rule at
    pixel centers; regions are painted in file order (later regions win on
    overlap).  Every pixel must end up covered and every declared region must
    keep at least one pixel.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        width = int(doc["width"])
        height = int(doc["height"])
        regions = doc["regions"]
    except (KeyError, TypeError) as exc:
        raise RegionError(f"polygon mask missing required field: {exc}") from exc
    if width < 1 or height < 1:
        raise RegionError("polygon mask dimensions must be positive")
    if not regions:
        raise RegionError("polygon mask declares no regions")

    labels = np.full((height, width), -1, dtype=np.int32)
    for entry in regions:
        rid = int(entry["id"])
        if rid < 0:
            raise RegionError(f"region id {rid} is negative")
        polys = entry.get("polygons") or []
        inside = _rasterize_even_odd(polys, width, height)
        if not inside.any():
            raise RegionError(f"region {rid} declared but rasterizes to zero pixels")
        labels[inside] = rid
    if (labels < 0).any():
        n = int((labels < 0).sum())
        raise RegionError(f"{n} pixel(s) not covered by any region polygon")
    declared = {int(e["id"]) for e in regions}
    present = {int(v) for v in np.unique(labels)}
    gone = sorted(declared - present)
    if gone:
        raise RegionError(f"region(s) {gone} fully overpainted by later regions")
    return load_region_mask(labels, connectivity=connectivity)


def _rasterize_even_odd(polygons: list, width: int, height: int) -> np.ndarray:
    """Scanline even-odd fill of a polygon set, sampled at pixel centers."""
    inside = np.zeros((height, width), dtype=bool)
    edges = []
    for poly in polygons:
        pts = [(float(x), float(y)) for x, y in poly]
        if len(pts) < 3:
            raise RegionError("polygon needs at least 3 vertices")
        for k in range(len(pts)):
            x1, y1 = pts[k]
            x2, y2 = pts[(k + 1) % len(pts)]
            if y1 != y2:
                edges.append((x1, y1, x2, y2))
    if not edges:
        return inside
    for row in range(height):
        yc = row + 0.5
        xs = []
        for x1, y1, x2, y2 in edges:
            if (y1 <= yc < y2) or (y2 <= yc < y1):
                xs.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
        if not xs:
            continue
        xs.sort()
        for a, b in zip(xs[0::2], xs[1::2]):
            lo = int(np.ceil(a - 0.5))
            hi = int(np.ceil(b - 0.5))
            lo = max(lo, 0)
            hi = min(hi, width)
            if hi > lo:
                inside[row, lo:hi] = True
    return inside


def save_mask_png(path: str, labels: np.ndarray) -> None:
    """Write a label image as an indexed PNG (palette index = region id)."""
    from PIL import Image

    labels = np.asarray(labels)
    if labels.max() > 255:
        raise RegionError("indexed PNG supports at most 256 regions")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    # distinct palette colors so the mask is human-viewable
    palette = []
    for k in range(256):
        palette.extend([(k * 67) % 256, (k * 131) % 256, (k * 197) % 256])
    im.putpalette(palette)
    im.save(path, format="PNG")


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Clipped Euclidean distance from region pixels to one boundary.

    values holds min(d, margin) for every canvas pixel, where d is the exact
    Euclidean distance to the nearest region-`region`-side boundary pixel of
    the (region, neighbor) boundary; only values at region-`region` pixels
    are consumed by the blending weights.  `unclipped` keeps the raw field.
    """

    region: int
    neighbor: int
    margin: float
    values: np.ndarray
    unclipped: np.ndarray


def distance_field(rs: RegionSet, i: int, j: int, r: float) -> DistanceField:
    """Exact Euclidean distance from region i toward its boundary with j, clipped to [0, r]."""
    if r < 1:
        raise RegionError(f"margin r must be >= 1, got {r}")
    if j not in rs.adjacency.get(i, ()):
        raise RegionError(f"regions {i} and {j} are not adjacent")
    side = rs.boundary_side_pixels(i, j)
    seeds = np.ones(rs.labels.shape, dtype=bool)
    seeds[side[:, 0], side[:, 1]] = False
    unclipped = ndimage.distance_transform_edt(seeds)
    values = np.minimum(unclipped, float(r))
    values.setflags(write=False)
    unclipped.setflags(write=False)
    return DistanceField(region=i, neighbor=j, margin=float(r), values=values, unclipped=unclipped)


def downsample_to_latent(rs: RegionSet, latent_w: int, latent_h: int) -> RegionSet:
    """Majority-vote downsample of the region mask to latent resolution.

    Cell boundaries follow floor(k * dim / latent_dim); ties go to the
    smallest region id.  A region that loses all its pixels is an error (the
    mask is too fine for the chosen latent size).
    """
    h, w = rs.labels.shape
    if latent_h < 1 or latent_w < 1:
        raise RegionError("latent dimensions must be >= 1")
    if latent_h > h or latent_w > w:
        raise RegionError("latent dimensions must not exceed mask dimensions")
    row_edges = (np.arange(latent_h + 1) * h) // latent_h
    col_edges = (np.arange(latent_w + 1) * w) // latent_w
    out = np.zeros((latent_h, latent_w), dtype=np.int32)
    nbins = int(rs.labels.max()) + 1
    for r_ in range(latent_h):
        for c_ in range(latent_w):
            block = rs.labels[row_edges[r_]:row_edges[r_ + 1], col_edges[c_]:col_edges[c_ + 1]]
            counts = np.bincount(block.ravel(), minlength=nbins)
            out[r_, c_] = int(np.argmax(counts))  # argmax takes the smallest id on ties
    kept = set(int(v) for v in np.unique(out))
    vanished = sorted(set(rs.region_ids) - kept)
    if vanished:
        raise RegionError(
            f"region(s) {vanished} vanished at latent resolution {latent_h}x{latent_w}"
        )
    return load_region_mask(out, connectivity=rs.connectivity)
