"""Latent visualization and PNG helpers for toy-mode runs.

Without a learned decoder, latents map to pixels through a per-channel affine
stretch (recorded so pixel-level oracles stay stable) and a nearest-neighbor
upscale to the mask resolution.
"""

from __future__ import annotations

import numpy as np


def latent_to_image(z: np.ndarray) -> tuple[np.ndarray, dict]:
    """Affine map of latent channels to a (H, W, 3) uint8 image.

    Per displayed channel: [min, max] stretches to [0, 255]; constant channels
    render mid-gray.  One channel replicates to RGB, two use their average as
    the third plane, three or more take the first three.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be (C, H, W), got {z.shape}")
    c = z.shape[0]
    if c == 1:
        planes = np.concatenate([z, z, z], axis=0)
    elif c == 2:
        planes = np.concatenate([z, (z[0:1] + z[1:2]) / 2.0], axis=0)
    else:
        planes = z[:3]
    scales, offsets = [], []
    out = np.empty(planes.shape, dtype=np.uint8)
    for k in range(3):
        lo, hi = float(planes[k].min()), float(planes[k].max())
        if hi - lo < 1e-12:
            out[k] = 127
            scales.append(0.0)
            offsets.append(127.0)
        else:
            scale = 255.0 / (hi - lo)
            out[k] = np.clip(np.rint((planes[k] - lo) * scale), 0, 255).astype(np.uint8)
            scales.append(scale)
            offsets.append(-lo * scale)
    return np.moveaxis(out, 0, 2), {"scale": scales, "offset": offsets}


def upscale_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize to (height, width); exact for integer factors."""
    h, w = img.shape[:2]
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return img[rows][:, cols]


def save_image_png(path: str, arr: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")


def load_image_png(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("RGB", "L"):
            return np.asarray(im)
        return np.asarray(im.convert("RGB"))


def luminance(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
