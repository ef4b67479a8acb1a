"""Distributed Frank-Wolfe solvers on top of the BSP runtime.

Every algorithm has a master half and a worker half that follow the same
round structure. Workers hold sufficient information for their rows; the
master owns the iterate used for metrics and all decisions (normalization,
step size, early stop).

* ``dfw-trace``: distributed power method, ``K(t)`` iterations per epoch.
* ``naive-dfw``: workers ship full gradients, the master solves the LMO.
* ``sva``: workers ship local top singular vectors, the master averages them.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .fw import (
    STEP_RULES,
    Trajectory,
    ZeroGradientError,
    default_step,
    duality_gap,
    evaluate,
    exact_trace_lmo,
    linesearch_or_default,
    spectrum_ratio,
)
from .linalg import (
    Rank1Atom,
    ZeroVectorError,
    normalize,
    power_method_until,
    rank1_update,
    stagnated,
    svd_oracle,
    unit_sphere_sample,
)
from .runtime import Kind, Master, StopRun, ThreadWorkers, WorkerEndpoint
from .schedules import KSchedule, k_of_t
from .tasks import LocalDataset, Problem, get_task

log = logging.getLogger(__name__)

ALGORITHMS = ("dfw-trace", "naive-dfw", "sva")


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    task: str
    mu: float
    T: int
    N: int = 1
    schedule: Optional[KSchedule] = None
    step_rule: str = "default"
    base_seed: int = 0
    warm_start: bool = False
    lmo_tolerance: float = 1e-12
    lmo_max_iters: Optional[int] = None
    record_spectrum: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        get_task(self.task)
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.T < 1 or self.N < 1:
            raise ValueError("T and N must be >= 1")
        if (self.schedule is not None) != (self.algorithm == "dfw-trace"):
            raise ValueError("a K(t) schedule is required for dfw-trace and only for dfw-trace")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.step_rule == "linesearch" and get_task(self.task).linesearch_terms is None:
            raise ValueError(f"task {self.task!r} has no closed-form line search")

    def max_iters(self, d, m):
        return self.lmo_max_iters if self.lmo_max_iters is not None else 10 * (d + m)

    def epoch_seed(self, t):
        return self.base_seed ^ t


def resolve_schedule(config: RunConfig, problem: Problem) -> RunConfig:
    """Fill in missing constants of a theorem schedule from the data at ``W = 0``.

    ``L_est`` is the top singular value of the initial gradient; ``CF_est``
    is the curvature measured along the first exact Frank-Wolfe step.
    """
    s = config.schedule
    if s is None or s.resolved:
        return config
    d, m = problem.shape
    W0 = np.zeros((d, m))
    G0 = problem.gradient(W0)
    sig, U, V = svd_oracle(G0)
    L_est = s.L_est if s.L_est is not None else float(sig[0])
    CF_est = s.CF_est
    if CF_est is None:
        S = -config.mu * np.outer(U[:, 0], V[:, 0])
        CF_est = 2.0 * (problem.objective(S) - problem.objective(W0) - float(np.sum(S * G0)))
        if not CF_est > 0:
            raise ValueError("curvature probe is not positive; pass CF_est explicitly")
    mu = s.mu if s.mu is not None else config.mu
    return replace(config, schedule=replace(s, mu=mu, L_est=L_est, CF_est=float(CF_est)))


def sign_fix(x):
    """Make the largest-magnitude entry positive."""
    return -x if x[np.argmax(np.abs(x))] < 0 else x


# -- worker side --------------------------------------------------------------


def _worker_step(ep, config, task, info, t, atom):
    if config.step_rule == "linesearch":
        ep.send(Kind.SCALAR_PAIR, task.linesearch_terms(info, atom))
        gamma = float(ep.recv(Kind.SCALAR_PAIR)[0])
    else:
        gamma = default_step(t)
    return task.apply_atom(info, gamma, atom)


def _start_vector(config, m, t, v_prev):
    if config.warm_start and v_prev is not None:
        return v_prev
    return unit_sphere_sample(m, config.epoch_seed(t))


def power_rounds_worker(ep, G, v, K=None):
    """Worker half of the distributed power method on ``sum_j G_j``.

    With ``K=None`` the master decides when to stop and says so after every
    iteration with a continue flag.
    """
    k = 0
    while True:
        ep.send(Kind.U_VECTOR, G @ v)
        u = ep.recv(Kind.U_VECTOR)
        ep.send(Kind.V_VECTOR, G.T @ u)
        v = ep.recv(Kind.V_VECTOR)
        k += 1
        if K is None:
            if ep.recv(Kind.SCALAR_PAIR)[0] == 0.0:
                return u, v
        elif k == K:
            return u, v


def _dfw_trace_epoch_worker(ep, config, G, v, t, d, m):
    schedule = config.schedule
    K = None if schedule.is_exact else k_of_t(schedule, t, m)
    u, v = power_rounds_worker(ep, G, v, K)
    return Rank1Atom(u, v, -config.mu)


def _naive_epoch_worker(ep, config, G, v, t, d, m):
    ep.send(Kind.GRADIENT_BLOCK, G.ravel())
    p = ep.recv(Kind.ATOM_BROADCAST)
    return Rank1Atom(p[1 : 1 + d], p[1 + d :], p[0])


def _sva_epoch_worker(ep, config, G, v, t, d, m):
    try:
        st = power_method_until(G.dot, G.T.dot, v, config.lmo_tolerance, config.max_iters(d, m))
        u_loc, v_loc = sign_fix(st.u), sign_fix(st.v)
    except ZeroVectorError:
        # a vanishing local gradient contributes nothing to the average
        u_loc, v_loc = np.zeros(d), np.zeros(m)
    ep.send(Kind.U_VECTOR, u_loc)
    ep.send(Kind.V_VECTOR, v_loc)
    p = ep.recv(Kind.ATOM_BROADCAST)
    u_hat, v_hat = p[1 : 1 + d], p[1 + d :]
    ep.send(Kind.SCALAR_PAIR, [float(u_hat @ G @ v_hat), 0.0])
    sign = ep.recv(Kind.SCALAR_PAIR)[0]
    return Rank1Atom(sign * u_hat, v_hat, p[0])


_WORKER_EPOCH = {
    "dfw-trace": _dfw_trace_epoch_worker,
    "naive-dfw": _naive_epoch_worker,
    "sva": _sva_epoch_worker,
}


def worker_main(channel, worker_id: int, config: RunConfig, ds: LocalDataset):
    """Serve one worker until the master ends the run."""
    task = get_task(config.task)
    d, m = ds.d, ds.m
    ep = WorkerEndpoint(channel, worker_id, d, m)
    epoch_fn = _WORKER_EPOCH[config.algorithm]
    info = task.init(ds)
    v_prev = None
    try:
        for t in range(config.T):
            ep.begin_epoch(t)
            atom = epoch_fn(ep, config, info.grad, _start_vector(config, m, t, v_prev), t, d, m)
            info = _worker_step(ep, config, task, info, t, atom)
            v_prev = atom.v
        ep.wait_stop()
    except StopRun:
        log.debug("worker %d stopped by master", worker_id)
    return info


# -- master side --------------------------------------------------------------


def distributed_linesearch(master: Master, t, W, atom) -> float:
    """Sum the workers' line-search scalars, clamp, and broadcast the step."""
    num, den = master.aggregate_sum(Kind.SCALAR_PAIR, aux=True)
    gamma = linesearch_or_default(t, num, den, W, atom)
    master.broadcast(Kind.SCALAR_PAIR, [gamma, 0.0], aux=True)
    return gamma


def power_rounds_master(master: Master, K=None, tol=1e-12, max_iters=None):
    """Master half of the distributed power method; returns ``(u, v, iterations)``.

    Each iteration is two rounds: the workers' ``G_j v`` are summed and
    normalized into ``u``, then their ``G_j^T u`` into ``v``. With ``K=None``
    the loop runs until the singular value estimate stagnates or
    ``max_iters`` is hit.
    """
    if K is None and max_iters is None:
        raise ValueError("an open-ended power method needs max_iters")
    k, prev = 0, None
    while True:
        s = master.aggregate_sum(Kind.U_VECTOR)
        sigma = float(np.linalg.norm(s))
        u = normalize(s)
        master.broadcast(Kind.U_VECTOR, u)
        r = master.aggregate_sum(Kind.V_VECTOR)
        v = normalize(r)
        master.broadcast(Kind.V_VECTOR, v)
        k += 1
        if K is None:
            done = stagnated(prev, sigma, tol) or k >= max_iters
            prev = sigma
            master.broadcast(Kind.SCALAR_PAIR, [0.0 if done else 1.0, sigma], aux=True)
            if done:
                break
        elif k == K:
            break
    return u, v, k


def _dfw_trace_epoch_master(master, config, state, t, rec):
    schedule = config.schedule
    d, m = master.d, master.m
    K = None if schedule.is_exact else k_of_t(schedule, t, m)
    max_iters = schedule.max_iters if schedule.max_iters is not None else config.max_iters(d, m)
    u, v, rec.K_used = power_rounds_master(master, K, schedule.tol, max_iters)
    # v is A^T u / |A^T u|, so u^T A v = |A^T u| >= 0: the sign is already the minimizing one
    return Rank1Atom(u, v, -config.mu)


def _naive_epoch_master(master, config, state, t, rec):
    d, m = master.d, master.m
    G = master.aggregate_sum(Kind.GRADIENT_BLOCK).reshape(d, m)
    try:
        atom, iters = exact_trace_lmo(
            G, config.mu, unit_sphere_sample(m, config.epoch_seed(t)), config.lmo_tolerance, config.max_iters(d, m)
        )
    except ZeroGradientError as exc:
        raise ZeroVectorError(str(exc)) from exc
    rec.duality_gap = duality_gap(state["W"], G, atom)
    rec.K_used = iters
    master.broadcast(Kind.ATOM_BROADCAST, np.concatenate([[atom.scale], atom.u, atom.v]), aux=True)
    return atom


def _sva_epoch_master(master, config, state, t, rec):
    us = master.gather(Kind.U_VECTOR)
    vs = master.gather(Kind.V_VECTOR)
    weights = state["weights"]
    u_sum = np.zeros(master.d)
    v_sum = np.zeros(master.m)
    for w, u_j, v_j in zip(weights, us, vs):
        u_sum += w * u_j
        v_sum += w * v_j
    u_hat, v_hat = normalize(u_sum), normalize(v_sum)
    master.broadcast(Kind.ATOM_BROADCAST, np.concatenate([[-config.mu], u_hat, v_hat]), aux=True)
    (s, _) = master.aggregate_sum(Kind.SCALAR_PAIR, aux=True)
    # <-mu u v^T, grad> <= 0 requires u^T grad v >= 0
    sign = 1.0 if s >= 0.0 else -1.0
    master.broadcast(Kind.SCALAR_PAIR, [sign, s], aux=True)
    return Rank1Atom(sign * u_hat, v_hat, -config.mu)


_MASTER_EPOCH = {
    "dfw-trace": _dfw_trace_epoch_master,
    "naive-dfw": _naive_epoch_master,
    "sva": _sva_epoch_master,
}


def master_main(channels, config: RunConfig, problem: Problem, part_sizes: Sequence[int]) -> Trajectory:
    """Drive ``config.T`` epochs from the master; returns the trajectory and traffic."""
    d, m = problem.shape
    master = Master(channels, d, m)
    if master.N != config.N or len(part_sizes) != config.N:
        raise ValueError(f"expected {config.N} workers, got {master.N} channels and {len(part_sizes)} parts")
    epoch_fn = _MASTER_EPOCH[config.algorithm]
    n_total = float(sum(part_sizes))
    state = {"W": np.zeros((d, m)), "weights": [n_j / n_total for n_j in part_sizes]}
    start = time.monotonic()
    traj = Trajectory(records=[], W=state["W"], comm=master.stats)
    if config.keep_iterates:
        traj.iterates = [state["W"].copy()]

    try:
        _master_loop(master, config, problem, epoch_fn, state, traj, start)
    except BaseException:
        try:
            master.stop()
        except Exception:  # peers may already be gone
            pass
        raise
    traj.W = state["W"]
    return traj


def _master_loop(master, config, problem, epoch_fn, state, traj, start):
    for t in range(config.T):
        W = state["W"]
        rec = evaluate(problem, t, W, start)
        traj.records.append(rec)
        if config.record_spectrum:
            rec.sigma_ratio = spectrum_ratio(problem.gradient(W))
        master.begin_epoch(t)
        try:
            atom = epoch_fn(master, config, state, t, rec)
        except ZeroVectorError:
            log.info("gradient vanished at epoch %d; stopping", t)
            master.stop()
            traj.stopped_early = True
            break
        if config.step_rule == "linesearch":
            gamma = distributed_linesearch(master, t, W, atom)
        else:
            gamma = default_step(t)
        state["W"] = rank1_update(W, gamma, atom)
        rec.gamma = gamma
        rec.payload_entries = master.stats.for_epoch(t).payload_entries
        traj.atoms.append(atom)
        traj.gammas.append(gamma)
        if traj.iterates is not None:
            traj.iterates.append(state["W"].copy())
    else:
        traj.records.append(evaluate(problem, config.T, state["W"], start))
        master.stop()


def run_inprocess(config: RunConfig, problem: Problem, parts: Sequence[LocalDataset], timeout=600.0) -> Trajectory:
    """Run master and ``len(parts)`` worker threads connected by in-memory queues."""
    if len(parts) != config.N:
        raise ValueError(f"config asks for {config.N} workers but {len(parts)} parts were given")
    workers = ThreadWorkers(config.N, lambda ch, j: worker_main(ch, j, config, parts[j]), timeout)
    channels = workers.start()
    try:
        return master_main(channels, config, problem, [p.n for p in parts])
    finally:
        workers.join(timeout=5.0)


def dfw_trace_run(config, problem, parts, **kw):
    if config.algorithm != "dfw-trace":
        config = replace(config, algorithm="dfw-trace")
    return run_inprocess(config, problem, parts, **kw)


def naive_dfw_run(config, problem, parts, **kw):
    return run_inprocess(replace(config, algorithm="naive-dfw", schedule=None), problem, parts, **kw)


def sva_run(config, problem, parts, **kw):
    return run_inprocess(replace(config, algorithm="sva", schedule=None), problem, parts, **kw)
