"""RGB SSM: four cross-scanned VSS stages fused into a per-pixel feature grid."""
from __future__ import annotations

import numpy as np
from PIL import Image

from ..errors import OutOfBounds, ShapeMismatch
from .layers import gated_ssm_block
from .scan import selective_scan
from .weights import WeightBundle

IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def cross_scan(grid: np.ndarray) -> list:
    """Row-major, reversed row-major, column-major and reversed column-major sequences."""
    H, W = grid.shape[:2]
    rows = grid.reshape(H * W, *grid.shape[2:])
    cols = np.swapaxes(grid, 0, 1).reshape(H * W, *grid.shape[2:])
    return [rows, rows[::-1], cols, cols[::-1]]


def cross_merge(seqs, H: int, W: int) -> np.ndarray:
    rows = seqs[0] + seqs[1][::-1]
    cols = seqs[2] + seqs[3][::-1]
    cols = np.swapaxes(cols.reshape(W, H, *cols.shape[1:]), 0, 1).reshape(rows.shape)
    return ((rows + cols) / 4).reshape(H, W, *rows.shape[1:])


def bilinear_sample(grid: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Sample an (H, W, C) grid at continuous (x, y) positions in grid-cell units.

    Cell centres sit at integer coordinates; samples outside are clamped to the border.
    """
    H, W = grid.shape[:2]
    x = np.clip(xy[:, 0], 0, W - 1)
    y = np.clip(xy[:, 1], 0, H - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0).astype(grid.dtype)[:, None]
    fy = (y - y0).astype(grid.dtype)[:, None]
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def upsample(grid: np.ndarray, H: int, W: int) -> np.ndarray:
    h, w = grid.shape[:2]
    ys = (np.arange(H) + 0.5) * h / H - 0.5
    xs = (np.arange(W) + 0.5) * w / W - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(grid, np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(H, W, -1)


def _patchify(grid: np.ndarray, p: int) -> np.ndarray:
    H, W, C = grid.shape
    g = grid.reshape(H // p, p, W // p, p, C).transpose(0, 2, 1, 3, 4)
    return g.reshape(H // p, W // p, p * p * C)


def _vss_block(x: np.ndarray, w: WeightBundle, prefix: str) -> np.ndarray:
    H, W, C = x.shape
    dirs = [w.selective(f"{prefix}.dir{k}") for k in range(4)]

    def mix(u):
        seqs = cross_scan(u.reshape(H, W, -1))
        return cross_merge([selective_scan(sp, s) for sp, s in zip(dirs, seqs)], H, W).reshape(H * W, -1)

    return gated_ssm_block(x.reshape(H * W, C), w, prefix, mix).reshape(H, W, C)


def rgb_feature_grid(image: np.ndarray, w: WeightBundle) -> np.ndarray:
    """Fused multi-scale feature grid at the first-stage resolution."""
    cfg = w.config
    x = _patchify(np.asarray(image, dtype=np.float32), cfg.patch_size)
    x = x @ w["rgb.patch.weight"] + w["rgb.patch.bias"]
    stages = []
    for s in range(len(cfg.stage_dims)):
        if s > 0:
            x = _patchify(x, 2) @ w[f"rgb.stage{s}.merge.weight"] + w[f"rgb.stage{s}.merge.bias"]
        for b in range(cfg.vss_depth):
            x = _vss_block(x, w, f"rgb.stage{s}.block{b}")
        stages.append(x)
    H, W = stages[0].shape[:2]
    fused = np.concatenate([stages[0]] + [upsample(g, H, W) for g in stages[1:]], axis=2)
    return fused @ w["rgb.fuse.weight"] + w["rgb.fuse.bias"]


def rgb_ssm_forward(image: np.ndarray, mask: np.ndarray, pixel_coords: np.ndarray, w: WeightBundle) -> np.ndarray:
    """Per-point image features (N, C), bilinearly read at each point's pixel."""
    size = w.config.image_size
    image = np.asarray(image)
    if image.shape != (size, size, 3):
        raise ShapeMismatch(f"image must be {size}x{size}x3, got {image.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (size, size):
        raise ShapeMismatch(f"mask must be {size}x{size}, got {mask.shape}")
    px = np.asarray(pixel_coords, dtype=np.float64).reshape(-1, 2)
    if (px < 0).any() or (px[:, 0] > size - 1).any() or (px[:, 1] > size - 1).any():
        raise OutOfBounds("pixel coordinate outside the resized image")
    grid = rgb_feature_grid(image * mask[:, :, None], w)
    p = w.config.patch_size
    return bilinear_sample(grid, (px + 0.5) / p - 0.5)


def prepare_view(image: np.ndarray, mask: np.ndarray, pixel_coords: np.ndarray, size: int = 224, margin: float = 0.1):
    """Crop the masked object's box, resize to ``size`` and normalize.

    Returns the normalized image, the resized mask and the point pixel
    coordinates mapped into the resized frame (as floats).
    """
    mask = np.asarray(mask, dtype=bool)
    v, u = np.nonzero(mask)
    if len(u) == 0:
        raise OutOfBounds("empty mask")
    h, w = mask.shape
    side = max(u.max() - u.min() + 1, v.max() - v.min() + 1) * (1 + 2 * margin)
    cu, cv = (u.max() + u.min()) / 2.0, (v.max() + v.min()) / 2.0
    box = (cu - side / 2 + 0.5, cv - side / 2 + 0.5, cu + side / 2 + 0.5, cv + side / 2 + 0.5)
    img = Image.fromarray(np.asarray(image, dtype=np.uint8))
    crop = np.asarray(img.transform((size, size), Image.EXTENT, box, resample=Image.BILINEAR), dtype=np.float32) / 255.0
    mimg = Image.fromarray(mask.astype(np.uint8) * 255)
    crop_mask = np.asarray(mimg.transform((size, size), Image.EXTENT, box, resample=Image.NEAREST)) > 0
    scale = size / side
    px = (np.asarray(pixel_coords, dtype=np.float64) + 0.5 - np.array(box[:2])) * scale - 0.5
    px = np.clip(px, 0, size - 1)
    return (crop - IMAGE_MEAN) / IMAGE_STD, crop_mask, px
