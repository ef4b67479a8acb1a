"""Dense linear algebra primitives for trace-norm Frank-Wolfe.

Matrices are plain 2-D ``float64`` numpy arrays. Rank-one atoms are kept as
``(u, v, scale)`` triples so that iterates can be updated in ``O(dm)`` and the
atom history can be audited afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

#: Absolute threshold under which a vector is treated as an analytic zero.
ZERO_EPS = 1e-300

_MASK64 = (1 << 64) - 1


class ZeroVectorError(ArithmeticError):
    """Raised when normalizing a vector whose norm is (numerically) zero."""


@dataclass(frozen=True)
class Rank1Atom:
    """The rank-one matrix ``scale * u v^T`` with unit ``u`` and ``v``."""

    u: np.ndarray
    v: np.ndarray
    scale: float

    def __post_init__(self):
        for name in ("u", "v"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.ndim != 1:
                raise ValueError(f"{name} must be a vector, got shape {vec.shape}")
            if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
                raise ValueError(f"{name} must have unit norm")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def shape(self):
        return (self.u.size, self.v.size)

    def to_dense(self):
        return self.scale * np.outer(self.u, self.v)

    def inner(self, G):
        """Frobenius inner product ``<scale u v^T, G>``."""
        return self.scale * float(self.u @ G @ self.v)


@dataclass(frozen=True)
class PowerState:
    u: np.ndarray
    v: np.ndarray
    iterations_done: int
    # norm of A v before the last u-normalization, the singular value estimate
    sigma: float


def as_matrix(A, name="matrix"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def unit_sphere_sample(dim: int, seed: int) -> np.ndarray:
    """Draw a point uniformly on the unit sphere of ``R^dim``.

    The draw is a pure function of ``(dim, seed)``: a Philox counter-based
    generator is keyed by both, so every node holding the same seed gets the
    same vector without exchanging anything.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    key = (int(seed) & _MASK64) | (int(dim) << 64)
    rng = np.random.Generator(np.random.Philox(key=key))
    while True:
        x = rng.standard_normal(dim)
        nrm = np.linalg.norm(x)
        if nrm > ZERO_EPS:
            return x / nrm


def normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    nrm = np.linalg.norm(x)
    if ZERO_EPS < nrm < np.inf:
        return x / nrm
    # sum of squares under/overflows for extreme entries: rescale by the peak
    peak = np.max(np.abs(x)) if x.size else 0.0
    if 0.0 < peak < np.inf:
        y = x / peak
        ny = np.linalg.norm(y)
        if peak * ny > ZERO_EPS:
            return y / ny
    raise ZeroVectorError(f"cannot normalize vector of norm {nrm!r}")


def rank1_update(W, gamma: float, atom: Rank1Atom) -> np.ndarray:
    """Return ``(1 - gamma) W + gamma * scale * u v^T``."""
    W = np.asarray(W, dtype=np.float64)
    if W.shape != atom.shape:
        raise ValueError(f"atom shape {atom.shape} does not match W {W.shape}")
    return (1.0 - gamma) * W + (gamma * atom.scale) * np.outer(atom.u, atom.v)


def power_method(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_At: Callable[[np.ndarray], np.ndarray],
    v0,
    K: int,
) -> PowerState:
    """Run exactly ``K`` alternations ``u <- A v / |A v|``, ``v <- A^T u / |A^T u|``.

    Raises ZeroVectorError if an intermediate product vanishes.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    v = np.asarray(v0, dtype=np.float64)
    sigma = 0.0
    for _ in range(K):
        a = apply_A(v)
        sigma = float(np.linalg.norm(a))
        u = normalize(a)
        v = normalize(apply_At(u))
    return PowerState(u=u, v=v, iterations_done=K, sigma=sigma)


def power_method_until(apply_A, apply_At, v0, tol: float, max_iters: int) -> PowerState:
    """Power method stopped when ``|A v|`` stagnates to relative ``tol``.

    Same alternation as :func:`power_method`; the iteration that first sees
    ``| |A v_k| - |A v_{k-1}| | <= tol * |A v_k|`` is the last one.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    v = np.asarray(v0, dtype=np.float64)
    prev = None
    for k in range(1, max_iters + 1):
        a = apply_A(v)
        sigma = float(np.linalg.norm(a))
        u = normalize(a)
        v = normalize(apply_At(u))
        if stagnated(prev, sigma, tol):
            break
        prev = sigma
    return PowerState(u=u, v=v, iterations_done=k, sigma=sigma)


def stagnated(prev, current, tol):
    return prev is not None and abs(current - prev) <= tol * current


def matrix_power_method(G, v0, K: int) -> PowerState:
    G = np.asarray(G, dtype=np.float64)
    return power_method(G.dot, G.T.dot, v0, K)


def svd_oracle(A):
    """Full SVD ``A = U diag(s) V^T`` with singular values in descending order.

    Diagnostic use only (tests, trace norms, spectrum reports).
    """
    A = as_matrix(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return s, U, Vt.T


def trace_norm(W) -> float:
    s, _, _ = svd_oracle(W)
    return float(np.sum(s))


def numerical_rank(W, rtol: float = 1e-8) -> int:
    s, _, _ = svd_oracle(W)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))
