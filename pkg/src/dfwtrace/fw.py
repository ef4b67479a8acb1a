"""Centralized Frank-Wolfe over the trace-norm ball.

This is the single-machine reference that the distributed solvers are
checked against: exact linear minimization oracle, default or line-search
steps, and the duality gap at every epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .linalg import (
    Rank1Atom,
    ZeroVectorError,
    power_method_until,
    rank1_update,
    svd_oracle,
    unit_sphere_sample,
)
from .tasks import DegenerateDirectionError, Problem, clamp_step, direction_sq_norm, get_task

STEP_RULES = ("default", "linesearch")


class ZeroGradientError(ZeroVectorError):
    """The gradient vanished: the current iterate is a global minimizer."""


@dataclass
class FwConfig:
    mu: float
    T: int
    step_rule: str = "default"
    lmo_tolerance: float = 1e-12
    lmo_max_iters: Optional[int] = None
    seed: int = 0
    record_spectrum: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if not 0 < self.lmo_tolerance < 1:
            raise ValueError("lmo_tolerance must lie in (0, 1)")

    def max_iters(self, d, m):
        return self.lmo_max_iters if self.lmo_max_iters is not None else 10 * (d + m)


@dataclass
class EpochRecord:
    """Metrics of iterate ``W^t`` plus what epoch ``t`` did to leave it.

    The last record of a run describes the final iterate only, so its step
    fields stay ``None``.
    """

    t: int
    objective: float
    estimation_error: Optional[float] = None
    top5_error: Optional[float] = None
    duality_gap: Optional[float] = None
    gamma: Optional[float] = None
    K_used: Optional[int] = None
    payload_entries: Optional[int] = None
    elapsed_ms: float = 0.0
    sigma_ratio: Optional[float] = None


@dataclass
class Trajectory:
    records: List[EpochRecord]
    W: np.ndarray
    atoms: List[Rank1Atom] = field(default_factory=list)
    gammas: List[float] = field(default_factory=list)
    stopped_early: bool = False
    iterates: Optional[List[np.ndarray]] = None
    comm: Optional[object] = None

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    def final(self) -> EpochRecord:
        return self.records[-1]


def default_step(t: int) -> float:
    if t < 0:
        raise ValueError("epoch index must be >= 0")
    return 2.0 / (t + 2.0)


def orient(u, v, G):
    """Flip ``u`` if needed so that ``u^T G v >= 0`` (the minimizing sign for ``-mu u v^T``)."""
    if float(u @ G @ v) < 0.0:
        return -u, v
    return u, v


def exact_trace_lmo(grad, mu: float, v0=None, tol: float = 1e-12, max_iters: Optional[int] = None, seed: int = 0):
    """Solve ``min <S, grad>`` over ``||S||_* <= mu``; returns ``(atom, iterations)``.

    The top singular pair comes from the power method run until the
    singular value estimate stagnates at relative level ``tol``.
    """
    G = np.asarray(grad, dtype=np.float64)
    d, m = G.shape
    if not np.any(G):
        raise ZeroGradientError("gradient is identically zero")
    if v0 is None:
        v0 = unit_sphere_sample(m, seed)
    if max_iters is None:
        max_iters = 10 * (d + m)
    try:
        state = power_method_until(G.dot, G.T.dot, v0, tol, max_iters)
    except ZeroVectorError as exc:
        raise ZeroGradientError(str(exc)) from exc
    u, v = orient(state.u, state.v, G)
    return Rank1Atom(u, v, -mu), state.iterations_done


def duality_gap(W, grad, atom: Rank1Atom) -> float:
    """``<W - S, grad>`` for the LMO solution ``S``; upper-bounds ``F(W) - F*``."""
    return float(np.sum(W * grad)) - atom.inner(grad)


def spectrum_ratio(G) -> Optional[float]:
    s, _, _ = svd_oracle(G)
    if s.size < 2 or s[0] == 0.0:
        return None
    return float(s[1] / s[0])


def linesearch_or_default(t, num, den, W, atom):
    try:
        return float(clamp_step(num, den, direction_sq_norm(W, atom)))
    except DegenerateDirectionError:
        return default_step(t)


def evaluate(problem: Problem, t, W, start) -> EpochRecord:
    return EpochRecord(
        t=t,
        objective=problem.objective(W),
        estimation_error=problem.estimation_error(W),
        top5_error=problem.top5_error(W),
        elapsed_ms=(time.monotonic() - start) * 1e3,
    )


def fw_run(problem: Problem, config: FwConfig) -> Trajectory:
    """Run ``config.T`` epochs of Frank-Wolfe from ``W = 0``."""
    task = get_task(problem.task)
    if config.step_rule == "linesearch" and task.linesearch_terms is None:
        raise ValueError(f"task {task.name!r} has no closed-form line search")
    d, m = problem.shape
    max_iters = config.max_iters(d, m)
    start = time.monotonic()

    info = task.init(problem.data)
    W = np.zeros((d, m))
    traj = Trajectory(records=[], W=W, iterates=[W.copy()] if config.keep_iterates else None)
    for t in range(config.T):
        rec = evaluate(problem, t, W, start)
        traj.records.append(rec)
        G = info.grad
        if config.record_spectrum:
            rec.sigma_ratio = spectrum_ratio(G)
        try:
            atom, iters = exact_trace_lmo(
                G, config.mu, unit_sphere_sample(m, config.seed ^ t), config.lmo_tolerance, max_iters
            )
        except ZeroGradientError:
            traj.stopped_early = True
            break
        rec.duality_gap = duality_gap(W, G, atom)
        if config.step_rule == "linesearch":
            num, den = task.linesearch_terms(info, atom)
            gamma = linesearch_or_default(t, num, den, W, atom)
        else:
            gamma = default_step(t)
        info = task.apply_atom(info, gamma, atom)
        W = rank1_update(W, gamma, atom)
        rec.gamma, rec.K_used = gamma, iters
        traj.atoms.append(atom)
        traj.gammas.append(gamma)
        if traj.iterates is not None:
            traj.iterates.append(W.copy())
    else:
        traj.records.append(evaluate(problem, config.T, W, start))
    traj.W = W
    return traj
