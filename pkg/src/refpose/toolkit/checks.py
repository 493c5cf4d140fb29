"""Self-check suites: selective scan against a naive recurrence, gradients against finite differences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..align.matching import alignment_loss, loss_gradient
from ..geom import DISCARD, CorrespondenceLabels
from ..seqmodel.scan import SelectiveParams, selective_scan, softplus


def naive_selective_scan(sp: SelectiveParams, tokens: np.ndarray) -> np.ndarray:
    """Per-step rediscretization in double precision, one time step at a time."""
    sp = sp.astype(np.float64)
    x = np.asarray(tokens, dtype=np.float64)
    E, M = sp.A.shape
    h = np.zeros((E, M))
    out = np.empty_like(x)
    for t in range(len(x)):
        delta = softplus(x[t] @ sp.W_dt + sp.b_dt)
        B = x[t] @ sp.W_B + sp.b_B
        C = x[t] @ sp.W_C + sp.b_C
        dA = delta[:, None] * sp.A
        # exact ZOH input matrix for a diagonal system: A^-1 (exp(dA) - I) B
        B_bar = (np.exp(dA) - 1.0) / sp.A * B[None, :]
        h = np.exp(dA) * h + B_bar * x[t][:, None]
        out[t] = h @ C + sp.D * x[t]
    return out


@dataclass(frozen=True)
class ScanCheckConfig:
    instances: int = 100
    max_len: int = 2048
    max_state: int = 32
    channels: int = 4
    seed: int = 0


def random_scan_instance(rng: np.random.Generator, max_len: int, max_state: int, channels: int, dtype):
    L = int(rng.integers(1, max_len + 1))
    M = int(rng.integers(1, max_state + 1))
    sp = SelectiveParams.init(rng, channels, M, dtype=np.float64)
    # spread the step sizes and decay rates beyond their initial values
    sp = SelectiveParams(A=sp.A * rng.uniform(0.5, 2.0, size=sp.A.shape), W_B=sp.W_B, b_B=sp.b_B, W_C=sp.W_C,
                         b_C=sp.b_C, W_dt=sp.W_dt, b_dt=sp.b_dt + rng.uniform(0, 2, size=channels), D=sp.D)
    return sp.astype(dtype), rng.normal(size=(L, channels)).astype(dtype)


def scan_check(cfg: ScanCheckConfig = ScanCheckConfig(), dtype=np.float32) -> float:
    """Max absolute error of selective_scan against the naive oracle over the suite."""
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(cfg.instances):
        sp, x = random_scan_instance(rng, cfg.max_len, cfg.max_state, cfg.channels, dtype)
        err = np.abs(selective_scan(sp, x).astype(np.float64) - naive_selective_scan(sp, x)).max()
        worst = max(worst, float(err))
    return worst


@dataclass(frozen=True)
class GradCheckConfig:
    instances: int = 20
    entries: int = 10
    n_query: int = 32
    n_ref: int = 32
    h: float = 1e-4
    seed: int = 0


def random_labels(rng: np.random.Generator, nq: int, nr: int, discard: float = 0.25) -> CorrespondenceLabels:
    q2r = rng.integers(0, nr, size=nq)
    r2q = rng.integers(0, nq, size=nr)
    q2r[rng.uniform(size=nq) < discard] = DISCARD
    r2q[rng.uniform(size=nr) < discard] = DISCARD
    q2r[0], r2q[0] = 0, 0
    return CorrespondenceLabels(q2r, r2q)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(cfg: GradCheckConfig = GradCheckConfig()) -> float:
    """Max relative error between the analytic loss gradient and central differences.

    Entries are drawn from labeled rows and columns, where the gradient is
    non-trivial; elsewhere both sides are exactly zero.
    """
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(cfg.instances):
        a = rng.normal(size=(cfg.n_query, cfg.n_ref))
        labels = random_labels(rng, cfg.n_query, cfg.n_ref)
        g = loss_gradient(a, labels)
        cand = np.argwhere((labels.query_to_ref != DISCARD)[:, None] | (labels.ref_to_query != DISCARD)[None, :])
        for i, j in cand[rng.choice(len(cand), size=cfg.entries, replace=False)]:
            ap, am = a.copy(), a.copy()
            ap[i, j] += cfg.h
            am[i, j] -= cfg.h
            fd = (alignment_loss(ap, labels) - alignment_loss(am, labels)) / (2 * cfg.h)
            worst = max(worst, relative_error(g[i, j], fd))
    return worst
