"""Semantic-aware random cropping and per-patch perspective augmentation.

Randomness comes from a ``numpy.random.Generator`` owned by the caller, so a
seed fixes every crop position and every warp.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .config import Patch, PatchLabel, SamplerConfig
from .segmentation import label_patch

RETRY_FACTOR = 50


class SamplerExhaustedError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_patches(height: int, width: int, mask, cfg: SamplerConfig,
                   rng: np.random.Generator) -> list[Patch]:
    """Draw ``cfg.n_patches`` crops, at most ``cfg.quota`` of them Portrait.

    A Portrait draw made after the quota is full is discarded and redrawn
    uniformly. Raises ``SamplerExhaustedError`` after ``50 * n_patches`` draws.
    """
    size = cfg.patch_size
    if size > min(height, width):
        raise ValueError(f"patch size {size} exceeds image {height}x{width}")
    m = mask.numpy() if isinstance(mask, torch.Tensor) else np.asarray(mask)
    if m.shape[-2:] != (height, width):
        raise ValueError(f"mask {m.shape[-2:]} does not match image {height}x{width}")

    quota = cfg.quota
    patches: list[Patch] = []
    n_portrait = 0
    for _ in range(RETRY_FACTOR * cfg.n_patches):
        if len(patches) == cfg.n_patches:
            break
        x = int(rng.integers(0, width - size + 1))
        y = int(rng.integers(0, height - size + 1))
        label, frac = label_patch(x, y, size, m, cfg)
        if label is PatchLabel.PORTRAIT:
            if n_portrait >= quota:
                continue
            n_portrait += 1
        patches.append(Patch(x, y, size, label, frac))
    if len(patches) < cfg.n_patches:
        raise SamplerExhaustedError(
            f"only {len(patches)} of {cfg.n_patches} patches found in "
            f"{RETRY_FACTOR * cfg.n_patches} draws (portrait quota {quota})")
    return patches


def crop_patches(image: torch.Tensor, patches: list[Patch]) -> torch.Tensor:
    """Stack crops of a ``(1, 3, H, W)`` image into ``(N, 3, s, s)``."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return torch.cat([image[..., p.y:p.y + p.size, p.x:p.x + p.size] for p in patches], dim=0)


# ---------------------------------------------------------------- perspective


def perspective_corners(size: int, distortion: float, rng: np.random.Generator) -> np.ndarray:
    """Displaced corners (TL, TR, BR, BL) as ``(x, y)`` rows.

    Each coordinate moves inward by ``U(0, distortion * size / 2)``; eight
    draws in the order TLx, TLy, TRx, TRy, BRx, BRy, BLx, BLy.
    """
    u = rng.uniform(0.0, distortion * size / 2, size=8)
    e = size - 1
    return np.array([
        [u[0], u[1]],
        [e - u[2], u[3]],
        [e - u[4], e - u[5]],
        [u[6], e - u[7]],
    ])


def homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping the four ``src`` points onto ``dst`` (h33 = 1)."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def _warp_grid(size: int, corners: np.ndarray) -> np.ndarray:
    e = size - 1
    square = np.array([[0, 0], [e, 0], [e, e], [0, e]], dtype=float)
    # output pixel -> input location, i.e. displaced corners back onto the square
    h = homography(corners, square)
    ys, xs = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    sx, sy, sw = h @ pts
    sx, sy = sx / sw, sy / sw
    grid = np.stack([2 * sx / e - 1, 2 * sy / e - 1], axis=-1)
    return grid.reshape(size, size, 2)


def augment_patches(patches: torch.Tensor, distortion: float, rng: np.random.Generator) -> torch.Tensor:
    """Random perspective warp of every patch in an ``(N, 3, s, s)`` batch.

    Bilinear resampling; reads outside the patch clamp to the nearest edge.
    """
    if not 0.0 <= distortion <= 1.0:
        raise ValueError(f"distortion must lie in [0, 1], got {distortion}")
    n, _, h, w = patches.shape
    if h != w:
        raise ValueError(f"patches must be square, got {h}x{w}")
    if distortion == 0 or h < 2:
        return patches
    grids = np.stack([_warp_grid(h, perspective_corners(h, distortion, rng)) for _ in range(n)])
    grid = torch.from_numpy(grids).to(device=patches.device, dtype=patches.dtype)
    return F.grid_sample(patches, grid, mode="bilinear", padding_mode="border", align_corners=True)


def augment_patch(pixels: torch.Tensor, distortion: float, rng: np.random.Generator) -> torch.Tensor:
    if pixels.dim() == 3:
        return augment_patches(pixels.unsqueeze(0), distortion, rng)[0]
    return augment_patches(pixels, distortion, rng)
