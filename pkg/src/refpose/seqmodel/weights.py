"""Model configuration and the named-tensor weight bundle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .scan import DT_BIAS_INIT, SelectiveParams


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 2048
    feat_dim: int = 256
    knn_k: int = 16
    state_dim: int = 16
    token_dim: int = 64
    pss_blocks: int = 4
    pss_expand: int = 2
    image_size: int = 224
    patch_size: int = 4
    stage_dims: tuple = (32, 64, 128, 256)
    vss_depth: int = 2
    aligner_blocks: int = 3
    aligner_heads: int = 4
    geo_buckets: int = 16

    @property
    def pos_dim(self) -> int:
        # sinusoidal embedding needs a multiple of 6; the rest of the token is zero-padded
        return self.token_dim - self.token_dim % 6


@dataclass(frozen=True)
class AlignerConfig:
    dim: int = 256
    blocks: int = 3
    heads: int = 4
    buckets: int = 16


def _selective_manifest(prefix: str, E: int, M: int) -> dict:
    return {
        f"{prefix}.A": (E, M), f"{prefix}.W_B": (E, M), f"{prefix}.b_B": (M,),
        f"{prefix}.W_C": (E, M), f"{prefix}.b_C": (M,), f"{prefix}.W_dt": (E, E),
        f"{prefix}.b_dt": (E,), f"{prefix}.D": (E,),
    }


def extractor_manifest(cfg: ModelConfig) -> dict:
    """Tensor name -> shape for both feature extractors, in file order."""
    E, M, C = cfg.token_dim, cfg.state_dim, cfg.feat_dim
    inner = E * cfg.pss_expand
    man = {
        "points.embed.weight": (3 * cfg.knn_k + 3, E),
        "points.embed.bias": (E,),
    }
    for b in range(cfg.pss_blocks):
        p = f"points.block{b}"
        man[f"{p}.norm"] = (E,)
        man[f"{p}.in_proj"] = (E, 2 * inner)
        man.update(_selective_manifest(f"{p}.ssm", inner, M))
        man[f"{p}.out_proj"] = (inner, E)
    man["points.head.weight"] = (E, C)
    man["points.head.bias"] = (C,)

    dims = cfg.stage_dims
    man["rgb.patch.weight"] = (3 * cfg.patch_size ** 2, dims[0])
    man["rgb.patch.bias"] = (dims[0],)
    for s, d in enumerate(dims):
        if s > 0:
            man[f"rgb.stage{s}.merge.weight"] = (4 * dims[s - 1], d)
            man[f"rgb.stage{s}.merge.bias"] = (d,)
        for b in range(cfg.vss_depth):
            p = f"rgb.stage{s}.block{b}"
            man[f"{p}.norm"] = (d,)
            man[f"{p}.in_proj"] = (d, 2 * d)
            for k in range(4):
                man.update(_selective_manifest(f"{p}.dir{k}", d, M))
            man[f"{p}.out_proj"] = (d, d)
    man["rgb.fuse.weight"] = (sum(dims), C)
    man["rgb.fuse.bias"] = (C,)
    return man


def aligner_manifest(prefix: str, acfg: AlignerConfig) -> dict:
    C = acfg.dim
    man = {}
    for b in range(acfg.blocks):
        for kind in ("self", "cross"):
            p = f"{prefix}.block{b}.{kind}"
            man[f"{p}.norm"] = (C,)
            for m in ("wq", "wk", "wv", "wo"):
                man[f"{p}.{m}"] = (C, C)
            if kind == "self":
                man[f"{p}.geo"] = (acfg.heads, acfg.buckets)
    return man


def _init_tensor(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "A":
        E, M = shape
        return -np.tile(np.arange(1, M + 1, dtype=np.float32), (E, 1))
    if leaf == "b_dt":
        return np.full(shape, DT_BIAS_INIT, dtype=np.float32)
    if leaf in ("D", "norm"):
        return np.ones(shape, dtype=np.float32)
    # matrices are stored (fan_in, fan_out); 1-D tensors use their own length
    bound = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass
class WeightBundle:
    """Named float32 tensors. Treated as immutable once built or loaded."""
    tensors: dict
    config: ModelConfig = field(default_factory=ModelConfig)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def selective(self, prefix: str) -> SelectiveParams:
        return SelectiveParams(**{k: self.tensors[f"{prefix}.{k}"] for k in
                                  ("A", "W_B", "b_B", "W_C", "b_C", "W_dt", "b_dt", "D")})

    def validate(self, manifest: dict | None = None):
        manifest = extractor_manifest(self.config) if manifest is None else manifest
        for name, shape in manifest.items():
            if name not in self.tensors:
                raise ShapeMismatch(f"missing tensor {name}")
            t = self.tensors[name]
            if t.shape != tuple(shape):
                raise ShapeMismatch(f"{name} has shape {t.shape}, expected {tuple(shape)}")
            if not np.isfinite(t).all():
                raise ValueError(f"{name} contains non-finite values")
            if name.endswith(".A") and (t >= 0).any():
                raise ValueError(f"{name} must be strictly negative")


def init_from_manifest(manifest: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {name: _init_tensor(name, shape, rng) for name, shape in manifest.items()}


def init_weights(cfg: ModelConfig | None = None, seed: int = 0) -> WeightBundle:
    cfg = cfg or ModelConfig()
    return WeightBundle(init_from_manifest(extractor_manifest(cfg), seed), cfg)
