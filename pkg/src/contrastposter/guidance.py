"""Boundary gradient consistency: masked Sobel fields, the alignment loss, its gradient.

During the independent per-region denoising steps, each region owns a full
canvas latent.  We measure how well the Sobel gradients of adjacent regions
agree along their shared boundary (squared cosine, sign-invariant) and descend
that misalignment with an exact analytic gradient.

The masked Sobel never reads the other region's latent: kernel taps that fall
outside the region (or off the canvas) are replicated from the nearest
in-region pixel.  Both the forward convolution and its adjoint are realized as
one sparse operator per region, so repeated loss/gradient evaluations on fixed
geometry are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from contrastposter.regions import RegionSet

SOBEL_SMOOTH = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
SOBEL_DERIV = np.array([-1.0, -2.0, 0.0, 2.0, 1.0])

DEFAULT_STRIP_WIDTH = 2
_ZERO_NORM_EPS = 1e-24  # on squared-norm products


def sobel_kernels() -> tuple[np.ndarray, np.ndarray]:
    """The fixed 5x5 derivative kernels (horizontal kx, vertical ky).

    Built as smoothing [1,4,6,4,1] x derivative [-1,-2,0,2,1]; kx rotated a
    quarter turn clockwise gives ky.
    """
    kx = np.outer(SOBEL_SMOOTH, SOBEL_DERIV)
    ky = np.outer(SOBEL_DERIV, SOBEL_SMOOTH)
    return kx, ky


def _nearest_inside_flat(mask: np.ndarray) -> np.ndarray:
    """For every canvas cell, the flat index of the nearest in-region pixel."""
    if not mask.any():
        raise ValueError("mask is empty")
    if mask.all():
        h, w = mask.shape
        return np.arange(h * w, dtype=np.int64).reshape(h, w)
    idx = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
    return (idx[0].astype(np.int64) * mask.shape[1] + idx[1]).reshape(mask.shape)


def masked_sobel_operators(
    mask: np.ndarray, out_flat: np.ndarray | None = None
) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse (n_out, H*W) operators computing masked-replicate Sobel gx and gy.

    Row k of each operator evaluates the 5x5 kernel centered at out_flat[k];
    taps are clamped to the canvas and rerouted to the nearest in-region pixel,
    so the result only ever reads region pixels.
    """
    h, w = mask.shape
    nearest = _nearest_inside_flat(mask)
    if out_flat is None:
        out_flat = np.arange(h * w, dtype=np.int64)
    oy, ox = out_flat // w, out_flat % w
    kx, ky = sobel_kernels()
    n_out = out_flat.size
    rows, cols, dx_data, dy_data = [], [], [], []
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            ty = np.clip(oy + dy, 0, h - 1)
            tx = np.clip(ox + dx, 0, w - 1)
            rows.append(np.arange(n_out, dtype=np.int64))
            cols.append(nearest[ty, tx])
            dx_data.append(np.full(n_out, kx[dy + 2, dx + 2]))
            dy_data.append(np.full(n_out, ky[dy + 2, dx + 2]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (n_out, h * w)
    sx = sparse.coo_matrix((np.concatenate(dx_data), (rows, cols)), shape=shape).tocsr()
    sy = sparse.coo_matrix((np.concatenate(dy_data), (rows, cols)), shape=shape).tocsr()
    return sx, sy


def masked_sobel(z_region: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-channel 5x5 Sobel of one region's latent, (2C, H, W).

    The first C planes are horizontal derivatives gx, the next C vertical gy.
    Out-of-region samples are replaced by the nearest in-region pixel value,
    so constants map to zero and the other region's content is never read.
    """
    z = np.asarray(z_region, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be (C, H, W), got shape {z.shape}")
    c, h, w = z.shape
    if mask.shape != (h, w):
        raise ValueError("mask shape does not match latent")
    sx, sy = masked_sobel_operators(np.asarray(mask, dtype=bool))
    flat = z.reshape(c, h * w)
    gx = (sx @ flat.T).T.reshape(c, h, w)
    gy = (sy @ flat.T).T.reshape(c, h, w)
    return np.concatenate([gx, gy], axis=0)


@dataclass(frozen=True, eq=False)
class BoundaryGradientPair:
    """Matched gradient vectors from the two sides of one boundary.

    g and g_prime are (2C, n): one column per matched pixel pair, stacking the
    gx components of every channel then the gy components.
    """

    boundary: tuple[int, int]
    pixels_i: np.ndarray  # (n, 2) row, col on side i
    pixels_j: np.ndarray  # (n, 2) matched pixels on side j
    g: np.ndarray
    g_prime: np.ndarray


def _strip_pixels(rs: RegionSet, i: int, j: int, k: float) -> np.ndarray:
    """Region-i pixels within Euclidean distance < k of the (i, j) boundary, sorted (row, col)."""
    side = rs.boundary_side_pixels(i, j)
    seeds = np.ones(rs.labels.shape, dtype=bool)
    seeds[side[:, 0], side[:, 1]] = False
    dist = ndimage.distance_transform_edt(seeds)
    sel = (dist < k) & (rs.labels == i)
    ys, xs = np.nonzero(sel)  # nonzero is row-major, already (row, col) sorted
    return np.stack([ys, xs], axis=1)


def _match_nearest(pix_i: np.ndarray, pix_j: np.ndarray) -> np.ndarray:
    """Index into pix_j of the nearest pixel for each row of pix_i.

    Distances are compared in exact integer arithmetic; ties resolve to the
    smallest row then column because pix_j arrives sorted (row, col).
    """
    dy = pix_i[:, 0:1].astype(np.int64) - pix_j[None, :, 0]
    dx = pix_i[:, 1:2].astype(np.int64) - pix_j[None, :, 1]
    d2 = dy * dy + dx * dx
    return np.argmin(d2, axis=1)


def match_boundary_strips(
    rs: RegionSet, k: float = DEFAULT_STRIP_WIDTH
) -> dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]:
    """Matched strip pixel pairs for every boundary: {(i, j): (pix_i, pix_j)}.

    Each side-i strip pixel (within distance k of the boundary) pairs with its
    nearest side-j strip pixel; both arrays are (n, 2) row/col with i < j.
    """
    out = {}
    for (i, j) in rs.boundaries:
        pi = _strip_pixels(rs, i, j, k)
        pj = _strip_pixels(rs, j, i, k)
        sel = _match_nearest(pi, pj)
        out[(i, j)] = (pi, pj[sel])
    return out


class ConsistencyPlan:
    """Precomputed geometry for fast loss / gradient evaluation on one RegionSet.

    Building the plan does all mask-dependent work (strips, matching, sparse
    Sobel rows); loss() and loss_and_grad() then only touch latent values.
    """

    def __init__(self, rs: RegionSet, k: float = DEFAULT_STRIP_WIDTH):
        if k <= 0:
            raise ValueError("strip width k must be positive")
        self.rs = rs
        self.k = float(k)
        self.shape = (rs.height, rs.width)
        h, w = self.shape
        self.num_boundaries = len(rs.boundaries)

        matched = match_boundary_strips(rs, self.k)
        for (pi, pj) in matched.values():
            if pi.size == 0 or pj.size == 0:
                raise AssertionError("boundary strip unexpectedly empty")

        # union of matched pixels each region contributes, as sorted flat indices
        self.row_flat: dict[int, np.ndarray] = {rid: np.empty(0, dtype=np.int64) for rid in rs.region_ids}
        chunks: dict[int, list] = {rid: [] for rid in rs.region_ids}
        for (i, j), (pi, pj) in matched.items():
            chunks[i].append(pi[:, 0].astype(np.int64) * w + pi[:, 1])
            chunks[j].append(pj[:, 0].astype(np.int64) * w + pj[:, 1])
        for rid in rs.region_ids:
            if chunks[rid]:
                self.row_flat[rid] = np.unique(np.concatenate(chunks[rid]))

        self.ops: dict[int, tuple[sparse.csr_matrix, sparse.csr_matrix]] = {}
        for rid in rs.region_ids:
            if self.row_flat[rid].size:
                self.ops[rid] = masked_sobel_operators(rs.labels == rid, self.row_flat[rid])

        # per boundary: row positions of matched pixels inside each side's row set
        self.matches: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}
        for (i, j), (pi, pj) in matched.items():
            flat_i = pi[:, 0].astype(np.int64) * w + pi[:, 1]
            flat_j = pj[:, 0].astype(np.int64) * w + pj[:, 1]
            pos_i = np.searchsorted(self.row_flat[i], flat_i)
            pos_j = np.searchsorted(self.row_flat[j], flat_j)
            self.matches[(i, j)] = (pos_i, pos_j, pi, pj)

    def _fields(self, latents: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Per-region stacked gradient rows, (2C, n_rows): gx block then gy block."""
        out = {}
        for rid, (sx, sy) in self.ops.items():
            if rid not in latents:
                continue
            z = np.asarray(latents[rid], dtype=np.float64)
            c = z.shape[0]
            flat = z.reshape(c, -1)
            gx = (sx @ flat.T).T
            gy = (sy @ flat.T).T
            out[rid] = np.concatenate([gx, gy], axis=0)
        return out

    def pair_for(self, latents: dict[int, np.ndarray], b: tuple[int, int]) -> BoundaryGradientPair:
        key = (min(b), max(b))
        pos_i, pos_j, pi, pj = self.matches[key]
        fields = self._fields({rid: latents[rid] for rid in key})
        return BoundaryGradientPair(
            boundary=key,
            pixels_i=pi,
            pixels_j=pj,
            g=fields[key[0]][:, pos_i],
            g_prime=fields[key[1]][:, pos_j],
        )

    def loss(self, latents: dict[int, np.ndarray]) -> float:
        if not self.matches:
            return 0.0
        fields = self._fields(latents)
        total = 0.0
        for (i, j), (pos_i, pos_j, _, _) in self.matches.items():
            v = fields[i][:, pos_i]
            u = fields[j][:, pos_j]
            dot = np.einsum("cn,cn->n", v, u)
            denom = np.einsum("cn,cn->n", v, v) * np.einsum("cn,cn->n", u, u)
            cos2 = np.where(denom > _ZERO_NORM_EPS, dot * dot / np.maximum(denom, _ZERO_NORM_EPS), 0.0)
            total += 1.0 - float(cos2.mean())
        return total

    def loss_and_grad(
        self, latents: dict[int, np.ndarray]
    ) -> tuple[float, dict[int, np.ndarray]]:
        """Loss value and d(loss)/d(latent) for every region (exact, both sides)."""
        shapes = {rid: np.asarray(latents[rid]).shape for rid in latents}
        grads = {rid: np.zeros(shapes[rid]) for rid in latents}
        if not self.matches:
            return 0.0, grads
        fields = self._fields(latents)
        cotangents = {rid: np.zeros_like(f) for rid, f in fields.items()}
        total = 0.0
        for (i, j), (pos_i, pos_j, _, _) in self.matches.items():
            v = fields[i][:, pos_i]
            u = fields[j][:, pos_j]
            n = v.shape[1]
            dot = np.einsum("cn,cn->n", v, u)
            nv = np.einsum("cn,cn->n", v, v)
            nu = np.einsum("cn,cn->n", u, u)
            denom = nv * nu
            ok = denom > _ZERO_NORM_EPS
            safe = np.maximum(denom, _ZERO_NORM_EPS)
            cos2 = np.where(ok, dot * dot / safe, 0.0)
            total += 1.0 - float(cos2.mean())
            # d(1 - mean cos^2)/dv = -(2/n) [ (dot/denom) u - (dot^2/(denom nv)) v ]
            a = np.where(ok, dot / safe, 0.0)
            dv = (-2.0 / n) * (a * u - np.where(ok, a * dot / np.maximum(nv, _ZERO_NORM_EPS), 0.0) * v)
            du = (-2.0 / n) * (a * v - np.where(ok, a * dot / np.maximum(nu, _ZERO_NORM_EPS), 0.0) * u)
            np.add.at(cotangents[i].T, pos_i, dv.T)
            np.add.at(cotangents[j].T, pos_j, du.T)
        for rid, cot in cotangents.items():
            sx, sy = self.ops[rid]
            c2, _ = cot.shape
            c = c2 // 2
            flat = (cot[:c] @ sx) + (cot[c:] @ sy)  # adjoint scatter through the operators
            grads[rid] += flat.reshape(shapes[rid])
        return total, grads


def boundary_gradients(
    latents: dict[int, np.ndarray],
    rs: RegionSet,
    b: tuple[int, int],
    k: float = DEFAULT_STRIP_WIDTH,
) -> BoundaryGradientPair:
    """Matched gradient vectors along one boundary (one-shot convenience form)."""
    key = (min(b), max(b))
    if key not in rs.boundaries:
        raise ValueError(f"no boundary between regions {b[0]} and {b[1]}")
    plan = ConsistencyPlan(rs, k=k)
    return plan.pair_for(latents, key)


def gradient_consistency_loss(pairs: list[BoundaryGradientPair]) -> float:
    """Sum over boundaries of (1 - average squared cosine of matched gradients).

    Zero-norm gradient vectors contribute cosine 0.  An empty pair list (no
    boundaries) gives 0.
    """
    total = 0.0
    for pair in pairs:
        v, u = pair.g, pair.g_prime
        if v.shape != u.shape or v.shape[1] == 0:
            raise ValueError("matched gradient matrices must be non-empty and congruent")
        dot = np.einsum("cn,cn->n", v, u)
        denom = np.einsum("cn,cn->n", v, v) * np.einsum("cn,cn->n", u, u)
        cos2 = np.where(denom > _ZERO_NORM_EPS, dot * dot / np.maximum(denom, _ZERO_NORM_EPS), 0.0)
        total += 1.0 - float(cos2.mean())
    return total


def loss_gradient(
    latents: dict[int, np.ndarray],
    rs: RegionSet,
    k: float = DEFAULT_STRIP_WIDTH,
) -> dict[int, np.ndarray]:
    """d(gradient consistency loss)/d(latent) for every region.

    Exact chain rule through the cosine terms and the masked Sobel adjoint;
    both sides of every boundary receive gradient.  Callers evaluating
    repeatedly on fixed geometry should hold a ConsistencyPlan instead.
    """
    plan = ConsistencyPlan(rs, k=k)
    _, grads = plan.loss_and_grad(latents)
    return grads


def apply_guidance(z_i: np.ndarray, g_i: np.ndarray, eta_t: float) -> np.ndarray:
    """One guidance step z - eta * g / max(|g|_inf, 1e-8).

    Max-norm normalization decouples the step size from the loss scale; a zero
    gradient or eta of 0 returns z unchanged.
    """
    z = np.asarray(z_i, dtype=np.float64)
    g = np.asarray(g_i, dtype=np.float64)
    if z.shape != g.shape:
        raise ValueError("latent and gradient shapes differ")
    if eta_t < 0:
        raise ValueError("guidance step size must be >= 0")
    if not (np.isfinite(z).all() and np.isfinite(g).all()):
        raise ValueError("non-finite values in guidance inputs")
    scale = max(float(np.abs(g).max()), 1e-8)
    return z - eta_t * (g / scale)
