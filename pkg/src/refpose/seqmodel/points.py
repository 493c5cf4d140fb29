"""Points SSM: Morton-ordered KNN tokens scanned by gated selective-SSM blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import BadDimension, InsufficientPoints, ShapeMismatch
from .layers import gated_ssm_block
from .scan import selective_scan
from .weights import WeightBundle

MORTON_BITS = 10  # 1024 cells per axis


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x3FF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x030000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x0300F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x030C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x09249249)
    return v


def morton_codes(points: np.ndarray) -> np.ndarray:
    """Z-order codes of points quantized to a 1024^3 grid over their bounding box."""
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0] = 1.0
    cells = (1 << MORTON_BITS) - 1
    q = np.clip(np.floor((points - lo) / span * cells + 0.5), 0, cells).astype(np.uint64)
    return _spread_bits(q[:, 0]) | (_spread_bits(q[:, 1]) << np.uint64(1)) | (_spread_bits(q[:, 2]) << np.uint64(2))


def scan_order(points: np.ndarray) -> np.ndarray:
    """Indices of ``points`` in canonical scan order.

    Equal Morton codes are ordered by exact coordinates so the order does not
    depend on how the input rows happen to be arranged.
    """
    codes = morton_codes(points)
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0], codes))


@dataclass(frozen=True)
class PointTokens:
    tokens: np.ndarray     # (N, 3k + 3) in scan order
    order: np.ndarray      # order[s] = input index of the point at scan position s
    neighbors: np.ndarray  # (N, k) input indices, nearest first, in scan order


def knn_tokenize(points: np.ndarray, k: int) -> PointTokens:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1 or n < k:
        raise InsufficientPoints(f"need at least k={k} points, got {n}")
    order = scan_order(points)
    _, nbr = cKDTree(points).query(points[order], k=k)
    nbr = np.asarray(nbr).reshape(n, k)
    centers = points[order]
    offsets = points[nbr] - centers[:, None, :]
    tokens = np.concatenate([offsets.reshape(n, 3 * k), centers], axis=1)
    return PointTokens(tokens, order, nbr)


def embedding_frequencies(n_freq: int) -> np.ndarray:
    # geometric ladder from 100 rad/m down to ~0.1 rad/m; the lowest stays
    # below pi so each axis is injective over [-1, 1] m
    return 100.0 * np.power(1000.0, -np.arange(n_freq) / n_freq)


def position_embed(coords: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sinusoidal embedding: per axis, ``dim/6`` sine and ``dim/6`` cosine channels."""
    if dim <= 0 or dim % 6:
        raise BadDimension(f"embedding dimension {dim} is not a positive multiple of 6")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    freqs = embedding_frequencies(dim // 6)
    ang = coords[:, :, None] * freqs                           # (N, 3, F)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=2).reshape(len(coords), dim)


def points_ssm_forward(points: np.ndarray, w: WeightBundle) -> np.ndarray:
    """Per-point features (N, C) of an object-space cloud; row i belongs to input point i."""
    cfg = w.config
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) points, got {points.shape}")
    tok = knn_tokenize(points, cfg.knn_k)
    x = tok.tokens.astype(np.float32) @ w["points.embed.weight"] + w["points.embed.bias"]
    pe = position_embed(points[tok.order], cfg.pos_dim).astype(np.float32)
    x[:, : cfg.pos_dim] += pe
    for b in range(cfg.pss_blocks):
        p = f"points.block{b}"
        sp = w.selective(f"{p}.ssm")
        x = gated_ssm_block(x, w, p, lambda u, sp=sp: selective_scan(sp, u))
    feats = x @ w["points.head.weight"] + w["points.head.bias"]
    out = np.empty_like(feats)
    out[tok.order] = feats
    return out
