"""Shared fixtures and independent oracle helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


def brute_force_boundary_pairs(labels: np.ndarray, connectivity: int = 4):
    """Exhaustive scan of all straddling pixel pairs; the geometry oracle."""
    h, w = labels.shape
    offsets = [(0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    pairs = {}
    for y in range(h):
        for x in range(w):
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if not (0 <= ny < h and 0 <= nx < w):
                    continue
                a, b = int(labels[y, x]), int(labels[ny, nx])
                if a == b:
                    continue
                if a < b:
                    key, row = (a, b), (y, x, ny, nx)
                else:
                    key, row = (b, a), (ny, nx, y, x)
                pairs.setdefault(key, set()).add(row)
    return pairs


def brute_force_distance(labels: np.ndarray, side_pixels: np.ndarray) -> np.ndarray:
    """Exhaustive nearest-seed Euclidean distance for every canvas pixel."""
    h, w = labels.shape
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            d2 = (side_pixels[:, 0] - y) ** 2 + (side_pixels[:, 1] - x) ** 2
            out[y, x] = np.sqrt(d2.min())
    return out


def vertical_split(h: int, w: int, col: int) -> np.ndarray:
    labels = np.zeros((h, w), dtype=np.int32)
    labels[:, col:] = 1
    return labels


@pytest.fixture
def split_8x8():
    import contrastposter as cp

    return cp.load_region_mask(vertical_split(8, 8, 4))
