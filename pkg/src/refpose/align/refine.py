"""Geometry-biased self/cross attention refinement with an explicit backward pass.

Each block updates both clouds with pre-norm residual attention:

    r <- r + SelfAttn(norm(r), bias_r)         q <- q + SelfAttn(norm(q), bias_q)
    r <- r + CrossAttn(norm(r), norm(q))       q <- q + CrossAttn(norm(q), norm(r))

The two cross updates read the same pre-update features. ``bias_x`` is a
learned per-head scalar looked up by log-distance bucket of each point pair,
so it depends only on intra-cloud distances.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from ..seqmodel.weights import AlignerConfig, aligner_manifest, init_from_manifest

EPS = 1e-6
BUCKET_MIN_LOG10 = -3.0   # 1 mm
BUCKET_MAX_LOG10 = 0.0    # 1 m


def distance_buckets(points: np.ndarray, n_buckets: int) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    logd = np.log10(np.maximum(d, 1e-12))
    b = np.floor((logd - BUCKET_MIN_LOG10) / (BUCKET_MAX_LOG10 - BUCKET_MIN_LOG10) * n_buckets)
    return np.clip(b, 0, n_buckets - 1).astype(np.int64)


def init_aligner(acfg: AlignerConfig, seed: int, prefix: str = "aligner") -> dict:
    """A fresh parameter set keyed by its local names (``block0.self.wq`` ...)."""
    man = aligner_manifest(prefix, acfg)
    full = init_from_manifest(man, seed)
    return {k[len(prefix) + 1:]: v for k, v in full.items()}


def _rms_fwd(x, g):
    r = np.sqrt((x * x).mean(axis=-1, keepdims=True) + EPS)
    xh = x / r
    return xh * g, (xh, r, g)


def _rms_bwd(dy, cache):
    xh, r, g = cache
    dg = (dy * xh).sum(axis=0)
    dxh = dy * g
    dx = (dxh - xh * (dxh * xh).mean(axis=-1, keepdims=True)) / r
    return dx, dg


def _heads(x, h):
    n, c = x.shape
    return x.reshape(n, h, c // h).transpose(1, 0, 2)


def _merge(x):
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def _attn_fwd(xq, xkv, p, kind, heads, buckets=None):
    Q, K, V = xq @ p[f"{kind}.wq"], xkv @ p[f"{kind}.wk"], xkv @ p[f"{kind}.wv"]
    Qh, Kh, Vh = _heads(Q, heads), _heads(K, heads), _heads(V, heads)
    scale = 1.0 / math.sqrt(Qh.shape[-1])
    logits = Qh @ Kh.transpose(0, 2, 1) * scale
    if buckets is not None:
        logits = logits + p[f"{kind}.geo"][:, buckets]
    logits = logits - logits.max(axis=-1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=-1, keepdims=True)
    O = _merge(P @ Vh)
    out = O @ p[f"{kind}.wo"]
    return out, (xq, xkv, Qh, Kh, Vh, P, O, scale, buckets)


def _attn_bwd(dout, cache, p, kind, heads, grads):
    xq, xkv, Qh, Kh, Vh, P, O, scale, buckets = cache
    grads[f"{kind}.wo"] += O.T @ dout
    dOh = _heads(dout @ p[f"{kind}.wo"].T, heads)
    dP = dOh @ Vh.transpose(0, 2, 1)
    dVh = P.transpose(0, 2, 1) @ dOh
    dL = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
    if buckets is not None:
        nb = p[f"{kind}.geo"].shape[1]
        flat = buckets.ravel()
        for h in range(dL.shape[0]):
            grads[f"{kind}.geo"][h] += np.bincount(flat, weights=dL[h].ravel(), minlength=nb)
    dQh = dL @ Kh * scale
    dKh = dL.transpose(0, 2, 1) @ Qh * scale
    dQ, dK, dV = _merge(dQh), _merge(dKh), _merge(dVh)
    grads[f"{kind}.wq"] += xq.T @ dQ
    grads[f"{kind}.wk"] += xkv.T @ dK
    grads[f"{kind}.wv"] += xkv.T @ dV
    dxq = dQ @ p[f"{kind}.wq"].T
    dxkv = dK @ p[f"{kind}.wk"].T + dV @ p[f"{kind}.wv"].T
    return dxq, dxkv


def n_blocks(params: dict) -> int:
    return len({k.split(".")[0] for k in params})


def refine_forward(fr, fq, pr_obj, pq_obj, params: dict, heads: int = 4, keep_cache: bool = False):
    """Refined (F_r, F_q); with ``keep_cache`` also returns the tape for ``refine_backward``."""
    fr = np.asarray(fr)
    fq = np.asarray(fq)
    if fr.ndim != 2 or fq.ndim != 2 or fr.shape[1] != fq.shape[1]:
        raise ShapeMismatch(f"feature maps {fr.shape} and {fq.shape} are incompatible")
    pr = pr_obj.points if hasattr(pr_obj, "points") else np.asarray(pr_obj)
    pq = pq_obj.points if hasattr(pq_obj, "points") else np.asarray(pq_obj)
    if len(pr) != len(fr) or len(pq) != len(fq):
        raise ShapeMismatch("clouds are not row-aligned with their feature maps")
    C = fr.shape[1]
    if C % heads:
        raise ShapeMismatch(f"{C} channels do not split into {heads} heads")
    nb = params["block0.self.geo"].shape[1]
    br, bq = distance_buckets(pr, nb), distance_buckets(pq, nb)
    tape = []
    r, q = fr, fq
    for b in range(n_blocks(params)):
        p = {k[len(f"block{b}."):]: v for k, v in params.items() if k.startswith(f"block{b}.")}
        nr, cnr = _rms_fwd(r, p["self.norm"])
        nq, cnq = _rms_fwd(q, p["self.norm"])
        sr, csr = _attn_fwd(nr, nr, p, "self", heads, br)
        sq, csq = _attn_fwd(nq, nq, p, "self", heads, bq)
        r, q = r + sr, q + sq
        mr, cmr = _rms_fwd(r, p["cross.norm"])
        mq, cmq = _rms_fwd(q, p["cross.norm"])
        xr, cxr = _attn_fwd(mr, mq, p, "cross", heads)
        xq, cxq = _attn_fwd(mq, mr, p, "cross", heads)
        r, q = r + xr, q + xq
        if keep_cache:
            tape.append((b, p, cnr, cnq, csr, csq, cmr, cmq, cxr, cxq))
    if keep_cache:
        return r, q, (tape, heads)
    return r, q


def refine_backward(dr, dq, cache, params: dict) -> tuple:
    """Gradients w.r.t. the inputs (fr, fq) and every parameter."""
    tape, heads = cache
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for b, p, cnr, cnq, csr, csq, cmr, cmq, cxr, cxq in reversed(tape):
        g = {k: np.zeros_like(v) for k, v in p.items()}
        dmr_q, dmq_kv = _attn_bwd(dr, cxr, p, "cross", heads, g)
        dmq_q, dmr_kv = _attn_bwd(dq, cxq, p, "cross", heads, g)
        dx, dgr = _rms_bwd(dmr_q + dmr_kv, cmr)
        dr = dr + dx
        dx, dgq = _rms_bwd(dmq_q + dmq_kv, cmq)
        dq = dq + dx
        g["cross.norm"] += dgr + dgq
        da, db = _attn_bwd(dr, csr, p, "self", heads, g)
        dx, dgr = _rms_bwd(da + db, cnr)
        dr_new = dr + dx
        da, db = _attn_bwd(dq, csq, p, "self", heads, g)
        dx, dgq = _rms_bwd(da + db, cnq)
        dq = dq + dx
        dr = dr_new
        g["self.norm"] += dgr + dgq
        for k, v in g.items():
            grads[f"block{b}.{k}"] += v
    return dr, dq, grads


def refine_features(fr, fq, pr_obj, pq_obj, params: dict, heads: int = 4):
    return refine_forward(fr, fq, pr_obj, pq_obj, params, heads)
