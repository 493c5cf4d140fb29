"""Small dense-layer helpers shared by the extractors."""
import numpy as np


def rms_norm(x, scale, eps=1e-6):
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps) * scale


def silu(x):
    return x / (1.0 + np.exp(-x))


def gated_ssm_block(x, w, prefix, scan_fn):
    """Pre-norm gated residual block around a sequence mixer.

    ``scan_fn(u)`` maps the activated inner sequence (L, inner) to (L, inner).
    """
    h = rms_norm(x, w[f"{prefix}.norm"])
    uz = h @ w[f"{prefix}.in_proj"]
    u, z = np.split(uz, 2, axis=-1)
    y = scan_fn(silu(u)) * silu(z)
    return x + y @ w[f"{prefix}.out_proj"]
