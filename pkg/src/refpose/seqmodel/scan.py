"""Diagonal state-space recurrences: ZOH discretization and selective scans."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch

# below this |delta*A| the closed-form ZOH input factor is replaced by its series
SERIES_CUTOFF = 1e-4

# initial step size ~0.01 after softplus
DT_BIAS_INIT = math.log(math.expm1(0.01))


@dataclass(frozen=True)
class StateSpaceParams:
    A: np.ndarray      # (M,) diagonal, strictly negative
    B: np.ndarray      # (M,)
    C: np.ndarray      # (M,)
    D: float
    delta: float

    def __post_init__(self):
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if (self.A >= 0).any():
            raise ValueError("diagonal of A must be strictly negative")
        if not (len(self.A) == len(self.B) == len(self.C)):
            raise ShapeMismatch("A, B and C must share the state dimension")

    @property
    def M(self) -> int:
        return len(self.A)


@dataclass(frozen=True)
class DiscretizedParams:
    A_bar: np.ndarray
    B_bar: np.ndarray


def zoh_series(z):
    """Taylor series of ``expm1(z)/z`` about 0, accurate to ~1e-16 for |z| < 1e-2."""
    z = np.asarray(z, dtype=np.float64)
    return 1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0 * (1.0 + z / 5.0 * (1.0 + z / 6.0))))


def zoh_closed(z):
    z = np.asarray(z)
    return np.expm1(z) / z


def zoh_factor(z):
    """``(exp(z) - 1) / z`` with the removable singularity at 0 handled."""
    z = np.asarray(z)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, np.ones_like(z), z)
    closed = np.expm1(safe) / safe
    return np.where(small, zoh_series(z).astype(closed.dtype), closed)


def discretize_zoh(p: StateSpaceParams) -> DiscretizedParams:
    z = p.delta * p.A
    return DiscretizedParams(A_bar=np.exp(z), B_bar=zoh_factor(z) * p.delta * p.B)


def scan_reference(d: DiscretizedParams, C, D: float, x) -> np.ndarray:
    """Literal sequential evaluation of the discrete recurrence from a zero state."""
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    h = np.zeros(len(d.A_bar))
    y = []
    for xt in np.asarray(x, dtype=np.float64):
        h = d.A_bar * h + d.B_bar * xt
        y.append(float(C @ h) + D * xt)
    return np.array(y)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class SelectiveParams:
    """Input-dependent SSM parameters for ``E`` channels with ``M`` states each.

    Per token ``x_t`` (length E)::

        delta_t = softplus(x_t @ W_dt + b_dt)     (E,)
        B_t     = x_t @ W_B + b_B                 (M,)
        C_t     = x_t @ W_C + b_C                 (M,)
    """
    A: np.ndarray      # (E, M), strictly negative
    W_B: np.ndarray    # (E, M)
    b_B: np.ndarray    # (M,)
    W_C: np.ndarray    # (E, M)
    b_C: np.ndarray    # (M,)
    W_dt: np.ndarray   # (E, E)
    b_dt: np.ndarray   # (E,)
    D: np.ndarray      # (E,)

    @property
    def E(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.A.shape[1]

    def check(self):
        E, M = self.A.shape
        expected = {
            "W_B": (E, M), "b_B": (M,), "W_C": (E, M), "b_C": (M,),
            "W_dt": (E, E), "b_dt": (E,), "D": (E,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def astype(self, dtype) -> "SelectiveParams":
        return SelectiveParams(**{k: np.asarray(v, dtype=dtype) for k, v in self.__dict__.items()})

    @classmethod
    def init(cls, rng: np.random.Generator, E: int, M: int, dtype=np.float32) -> "SelectiveParams":
        bound = 1.0 / math.sqrt(E)
        u = lambda *shape: rng.uniform(-bound, bound, size=shape)
        return cls(
            A=-np.tile(np.arange(1, M + 1, dtype=np.float64), (E, 1)).astype(dtype),
            W_B=u(E, M).astype(dtype), b_B=u(M).astype(dtype),
            W_C=u(E, M).astype(dtype), b_C=u(M).astype(dtype),
            W_dt=u(E, E).astype(dtype), b_dt=np.full(E, DT_BIAS_INIT, dtype=dtype),
            D=np.ones(E, dtype=dtype),
        )


def selective_projections(sp: SelectiveParams, x: np.ndarray):
    """Per-step (delta, B, C) for a token sequence ``x`` of shape (L, E)."""
    delta = softplus(x @ sp.W_dt + sp.b_dt)
    return delta, x @ sp.W_B + sp.b_B, x @ sp.W_C + sp.b_C


def selective_scan(sp: SelectiveParams, tokens: np.ndarray) -> np.ndarray:
    """Run the time-varying diagonal recurrence over ``tokens`` (L, E).

    Discretization is vectorised over the whole sequence up front; only the
    state update itself is sequential. Computes in the dtype of ``tokens``.
    """
    x = np.asarray(tokens)
    if x.ndim != 2 or x.shape[1] != sp.A.shape[0]:
        raise ShapeMismatch(f"tokens {x.shape} do not match {sp.A.shape[0]} channels")
    sp.check()
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    x = x.astype(dtype, copy=False)
    sp = sp.astype(dtype)
    delta, B, C = selective_projections(sp, x)
    z = delta[:, :, None] * sp.A[None]                       # (L, E, M)
    A_bar = np.exp(z)
    Bx = zoh_factor(z) * (delta * x)[:, :, None] * B[:, None, :]
    L, E, M = z.shape
    H = np.empty((L, E, M), dtype=dtype)
    h = np.zeros((E, M), dtype=dtype)
    for t in range(L):
        h = A_bar[t] * h + Bx[t]
        H[t] = h
    return np.einsum("tem,tm->te", H, C) + sp.D * x
