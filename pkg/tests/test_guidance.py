"""Sobel machinery, strip matching, consistency loss, and its analytic gradient."""

import numpy as np
import pytest

import contrastposter as cp
from contrastposter.guidance import (
    ConsistencyPlan,
    _match_nearest,
    _strip_pixels,
    masked_sobel_operators,
)
from conftest import vertical_split


def oracle_correlate(field: np.ndarray, kernel: np.ndarray, y: int, x: int) -> float:
    """Direct 5x5 correlation at one interior pixel (no padding involved)."""
    acc = 0.0
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            acc += kernel[dy + 2, dx + 2] * field[y + dy, x + dx]
    return acc


def fd_loss_gradient(plan: ConsistencyPlan, latents: dict, h: float = 1e-4) -> dict:
    grads = {}
    for rid in latents:
        g = np.zeros_like(latents[rid])
        for idx in range(g.size):
            zp = {k: v.copy() for k, v in latents.items()}
            zp[rid].ravel()[idx] += h
            lp = plan.loss(zp)
            zp[rid].ravel()[idx] -= 2 * h
            lm = plan.loss(zp)
            g.ravel()[idx] = (lp - lm) / (2 * h)
        grads[rid] = g
    return grads


class TestSobelKernels:
    def test_invariants(self):
        kx, ky = cp.sobel_kernels()
        assert kx.shape == (5, 5) and ky.shape == (5, 5)
        assert abs(kx.sum()) == 0.0 and abs(ky.sum()) == 0.0
        # antisymmetric along the derivative axis
        assert np.array_equal(kx[:, ::-1], -kx)
        assert np.array_equal(ky[::-1, :], -ky)
        # quarter turn clockwise carries kx onto ky
        assert np.array_equal(np.rot90(kx, k=-1), ky)


class TestMaskedSobel:
    def test_constant_region_zero(self):
        mask = vertical_split(8, 8, 4) == 0
        z = np.full((2, 8, 8), 3.7)
        g = cp.masked_sobel(z, mask)
        assert np.abs(g).max() < 1e-12

    def test_horizontal_ramp_interior(self):
        a = 0.37
        xs = np.arange(12, dtype=np.float64)
        z = np.tile(a * xs, (12, 1))[None]
        mask = vertical_split(12, 12, 6) == 0
        g = cp.masked_sobel(z, mask)
        kx, ky = cp.sobel_kernels()
        # interior of region 0, away from canvas edges and the replicated side
        for y in range(2, 10):
            for x in range(2, 4):
                assert g[0, y, x] == pytest.approx(oracle_correlate(z[0], kx, y, x))
                assert abs(g[1, y, x]) < 1e-12
        # the ramp derivative is constant there
        assert np.allclose(g[0, 2:10, 2:4], g[0, 2, 2])
        assert g[0, 2, 2] > 0

    def test_single_pixel_region_zero(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[3, 3] = True
        z = np.random.default_rng(0).standard_normal((1, 6, 6))
        g = cp.masked_sobel(z, mask)
        assert np.abs(g[:, mask]).max() < 1e-12

    def test_never_reads_other_region(self):
        # changing values outside the mask must not change in-region gradients
        mask = vertical_split(8, 8, 4) == 0
        rng = np.random.default_rng(1)
        z1 = rng.standard_normal((1, 8, 8))
        z2 = z1.copy()
        z2[:, :, 4:] += 100.0
        g1 = cp.masked_sobel(z1, mask)
        g2 = cp.masked_sobel(z2, mask)
        assert np.array_equal(g1[:, mask], g2[:, mask])

    def test_adjoint_identity(self):
        rng = np.random.default_rng(2)
        mask = rng.random((7, 9)) < 0.6
        mask[3, 4] = True  # keep non-empty
        sx, sy = masked_sobel_operators(mask)
        for op in (sx, sy):
            x = rng.standard_normal(op.shape[1])
            y = rng.standard_normal(op.shape[0])
            assert abs((op @ x) @ y - x @ (op.T @ y)) < 1e-10


class TestBoundaryGradients:
    def test_vertical_split_k1_matches_horizontal_neighbors(self, split_8x8):
        rng = np.random.default_rng(3)
        latents = {0: rng.standard_normal((1, 8, 8)), 1: rng.standard_normal((1, 8, 8))}
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1), k=1)
        assert np.array_equal(pair.pixels_i[:, 0], pair.pixels_j[:, 0])
        assert (pair.pixels_j[:, 1] - pair.pixels_i[:, 1] == 1).all()

    def test_identical_sides_give_equal_gradients(self, split_8x8):
        # content varying only along the boundary direction is identical on
        # both sides, so matched gradients agree entrywise
        ys = np.sin(np.arange(8, dtype=np.float64))[:, None]
        z = np.tile(ys, (1, 8))[None]
        latents = {0: z.copy(), 1: z.copy()}
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1), k=2)
        assert np.allclose(pair.g, pair.g_prime)

    def test_matching_equals_brute_force(self):
        rng = np.random.default_rng(4)
        labels = (rng.random((8, 8)) < 0.5).astype(np.int32)
        # ensure both regions exist
        labels[0, 0], labels[7, 7] = 0, 1
        rs = cp.load_region_mask(labels)
        k = 2
        pi = _strip_pixels(rs, 0, 1, k)
        pj = _strip_pixels(rs, 1, 0, k)
        got = _match_nearest(pi, pj)
        for row_idx, p in enumerate(pi):
            d2 = (pj[:, 0] - p[0]) ** 2 + (pj[:, 1] - p[1]) ** 2
            best = d2.min()
            candidates = np.nonzero(d2 == best)[0]
            # ties resolve to the smallest (row, col), which is the first
            # candidate because pj is sorted row-major
            assert got[row_idx] == candidates[0]


class TestConsistencyLoss:
    def test_aligned_gives_zero(self, split_8x8):
        ys = np.cos(np.arange(8, dtype=np.float64) / 2.0)[:, None]
        z = np.tile(ys, (1, 8))[None]
        latents = {0: z, 1: z}
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1))
        assert cp.gradient_consistency_loss([pair]) == pytest.approx(0.0, abs=1e-12)

    def test_anti_aligned_gives_zero(self, split_8x8):
        ys = np.cos(np.arange(8, dtype=np.float64) / 2.0)[:, None]
        z = np.tile(ys, (1, 8))[None]
        latents = {0: z, 1: -z}  # gradients flip sign, cosine^2 is sign-blind
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1))
        assert cp.gradient_consistency_loss([pair]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_gives_count_of_boundaries(self, split_8x8):
        # gradients along y on one side, along x on the other
        ys = np.arange(8, dtype=np.float64)[:, None] * np.ones((1, 8))
        xs = np.ones((8, 1)) * np.arange(8, dtype=np.float64)[None, :]
        latents = {0: ys[None], 1: xs[None]}
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1))
        assert cp.gradient_consistency_loss([pair]) == pytest.approx(1.0, abs=1e-9)

    def test_zero_gradient_convention(self, split_8x8):
        rng = np.random.default_rng(5)
        latents = {0: np.zeros((1, 8, 8)), 1: rng.standard_normal((1, 8, 8))}
        pair = cp.boundary_gradients(latents, split_8x8, (0, 1))
        assert cp.gradient_consistency_loss([pair]) == pytest.approx(1.0)

    def test_loss_bounds_and_plan_consistency(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 3, size=(10, 10)).astype(np.int32)
        rs = cp.load_region_mask(labels)
        latents = {rid: rng.standard_normal((2, 10, 10)) for rid in rs.region_ids}
        plan = ConsistencyPlan(rs)
        loss = plan.loss(latents)
        assert 0.0 <= loss <= len(rs.boundaries)
        pairs = [cp.boundary_gradients(latents, rs, b) for b in rs.boundaries]
        assert cp.gradient_consistency_loss(pairs) == pytest.approx(loss, abs=1e-12)


class TestLossGradient:
    def test_matches_finite_differences_12x12(self):
        rng = np.random.default_rng(42)
        labels = vertical_split(12, 12, 6)
        rs = cp.load_region_mask(labels)
        plan = ConsistencyPlan(rs, k=2)
        latents = {0: rng.standard_normal((3, 12, 12)), 1: rng.standard_normal((3, 12, 12))}
        _, grads = plan.loss_and_grad(latents)
        fd = fd_loss_gradient(plan, latents)
        for rid in rs.region_ids:
            scale = max(np.abs(fd[rid]).max(), 1e-12)
            assert np.abs(grads[rid] - fd[rid]).max() / scale < 1e-4

    def test_matches_finite_differences_random_partitions(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            h, w = int(rng.integers(6, 12)), int(rng.integers(6, 12))
            labels = (rng.random((h, w)) < 0.5).astype(np.int32)
            labels[0, 0], labels[-1, -1] = 0, 1
            rs = cp.load_region_mask(labels)
            plan = ConsistencyPlan(rs, k=2)
            latents = {rid: rng.standard_normal((2, h, w)) for rid in rs.region_ids}
            _, grads = plan.loss_and_grad(latents)
            fd = fd_loss_gradient(plan, latents)
            for rid in rs.region_ids:
                scale = max(np.abs(fd[rid]).max(), 1e-12)
                assert np.abs(grads[rid] - fd[rid]).max() / scale < 1e-4

    def test_aligned_is_stationary(self, split_8x8):
        ys = np.cos(np.arange(8, dtype=np.float64) / 2.0)[:, None]
        z = np.tile(ys, (1, 8))[None]
        grads = cp.loss_gradient({0: z, 1: z.copy()}, split_8x8)
        for g in grads.values():
            assert np.abs(g).max() < 1e-10

    def test_single_region_zero(self):
        rs = cp.load_region_mask(np.zeros((6, 6), dtype=np.int32))
        grads = cp.loss_gradient({0: np.random.default_rng(1).standard_normal((1, 6, 6))}, rs)
        assert np.abs(grads[0]).max() == 0.0

    def test_translation_invariance(self, split_8x8):
        rng = np.random.default_rng(9)
        latents = {0: rng.standard_normal((2, 8, 8)), 1: rng.standard_normal((2, 8, 8))}
        plan = ConsistencyPlan(split_8x8)
        l0, g0 = plan.loss_and_grad(latents)
        shifted = {rid: z + 11.5 for rid, z in latents.items()}
        l1, g1 = plan.loss_and_grad(shifted)
        assert l1 == pytest.approx(l0, rel=1e-9)
        for rid in latents:
            assert np.allclose(g0[rid], g1[rid], atol=1e-9)


class TestApplyGuidance:
    def test_eta_zero_identity(self):
        z = np.random.default_rng(0).standard_normal((1, 4, 4))
        g = np.random.default_rng(1).standard_normal((1, 4, 4))
        assert np.array_equal(cp.apply_guidance(z, g, 0.0), z)

    def test_zero_gradient_identity(self):
        z = np.random.default_rng(0).standard_normal((1, 4, 4))
        assert np.array_equal(cp.apply_guidance(z, np.zeros_like(z), 0.1), z)

    def test_unit_max_gradient(self):
        g = np.zeros((1, 2, 2))
        g[0, 0, 0] = 2.0
        g[0, 1, 1] = -1.0
        out = cp.apply_guidance(np.zeros_like(g), g, 0.1)
        assert out[0, 0, 0] == pytest.approx(-0.1)
        assert out[0, 1, 1] == pytest.approx(0.05)

    def test_rejects_bad_inputs(self):
        z = np.zeros((1, 2, 2))
        with pytest.raises(ValueError):
            cp.apply_guidance(z, np.zeros((1, 3, 3)), 0.1)
        with pytest.raises(ValueError):
            cp.apply_guidance(z, np.full_like(z, np.nan), 0.1)
        with pytest.raises(ValueError):
            cp.apply_guidance(z, z, -0.5)
