"""Rules for the number of power iterations ``K(t)`` spent at epoch ``t``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class KSchedule:
    """One of ``constant``, ``log``, ``theorem-linear``, ``theorem-log`` or ``exact``.

    ``exact`` is not a count: the power method runs until the singular value
    estimate stagnates (``tol``) or ``max_iters`` is reached, which turns the
    distributed solver into an exact-LMO one.
    """

    kind: str
    K: int = 1
    coeff: float = 1.0
    mu: Optional[float] = None
    L_est: Optional[float] = None
    delta: float = 1.0
    CF_est: Optional[float] = None
    beta: Optional[float] = None
    K_floor: int = 1
    tol: float = 1e-12
    max_iters: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("constant", "log", "theorem-linear", "theorem-log", "exact"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.K < 1:
            raise ValueError("constant schedule needs K >= 1")
        if self.kind == "log" and not self.coeff >= 0:
            raise ValueError("log schedule needs coeff >= 0")
        if self.kind.startswith("theorem"):
            if not self.delta > 0:
                raise ValueError("delta must be positive")
            for name in ("mu", "L_est", "CF_est"):
                value = getattr(self, name)
                if value is not None and not value > 0:
                    raise ValueError(f"{name} must be positive")
        if self.kind == "theorem-log":
            if self.beta is None or not 0 < self.beta < 1:
                raise ValueError("theorem-log schedule needs beta in (0, 1)")
            if self.K_floor < 1:
                raise ValueError("K_floor must be >= 1")
        if self.kind == "exact" and not 0 < self.tol < 1:
            raise ValueError("exact schedule needs tol in (0, 1)")

    @classmethod
    def constant(cls, K):
        return cls("constant", K=K)

    @classmethod
    def log(cls, coeff=1.0):
        return cls("log", coeff=coeff)

    @classmethod
    def exact(cls, tol=1e-12, max_iters=None):
        return cls("exact", tol=tol, max_iters=max_iters)

    @property
    def is_exact(self):
        return self.kind == "exact"

    @property
    def resolved(self):
        return not self.kind.startswith("theorem") or (
            self.mu is not None and self.L_est is not None and self.CF_est is not None
        )


def k_of_t(schedule: KSchedule, t: int, m: Optional[int] = None) -> int:
    """Number of power iterations at epoch ``t`` (``m`` is the column count)."""
    if t < 0:
        raise ValueError("epoch index must be >= 0")
    s = schedule
    if s.kind == "constant":
        return s.K
    if s.kind == "log":
        # base-10 log; log(0) is undefined so epoch 0 uses one iteration
        return max(1, math.floor(1 + s.coeff * math.log10(max(t, 1))))
    if s.kind == "exact":
        raise ValueError("the exact schedule has no fixed K(t)")
    if not s.resolved:
        raise ValueError("theorem schedules need mu, L_est and CF_est")
    if m is None:
        raise ValueError("theorem schedules need the column count m")
    if s.kind == "theorem-linear":
        return 1 + math.ceil(s.mu * s.L_est * (t + 2) * math.log(m) / (s.delta * s.CF_est))
    k = math.ceil((math.log(s.delta * s.CF_est) - math.log(m * s.mu * s.L_est * (t + 2))) / (2 * math.log(s.beta))) + 1
    return max(k, s.K_floor)
