from dataclasses import replace

import numpy as np
import pytest

from dfwtrace.algorithms import (
    RunConfig,
    dfw_trace_run,
    master_main,
    naive_dfw_run,
    power_rounds_master,
    power_rounds_worker,
    resolve_schedule,
    run_inprocess,
    sva_run,
    worker_main,
)
from dfwtrace.datasets import PartitionSpec, split
from dfwtrace.fw import FwConfig, fw_run
from dfwtrace.linalg import unit_sphere_sample
from dfwtrace.runtime import Master, ProtocolError, ThreadWorkers, WorkerEndpoint, WorkerLostError
from dfwtrace.schedules import KSchedule
from dfwtrace.tasks import LocalDataset, Problem
import oracles


def cfg(algorithm="dfw-trace", task="mtls", mu=1.0, T=20, N=4, **kw):
    if algorithm == "dfw-trace":
        kw.setdefault("schedule", KSchedule.constant(2))
    return RunConfig(algorithm, task, mu, T, N, **kw)


@pytest.fixture(scope="module")
def small_parts(small_mtls):
    return split(small_mtls.data, PartitionSpec("uniform-random", 4, 0))


def distributed_power(blocks, v0, K=None, tol=1e-12, max_iters=None):
    d, m = blocks[0].shape

    def worker(ch, j):
        ep = WorkerEndpoint(ch, j, d, m)
        ep.begin_epoch(0)
        power_rounds_worker(ep, blocks[j], v0, K)

    workers = ThreadWorkers(len(blocks), worker, timeout=30)
    master = Master(workers.start(), d, m)
    master.begin_epoch(0)
    out = power_rounds_master(master, K, tol, max_iters)
    workers.join(5)
    return out, master.stats


def test_distributed_power_open_ended(rng):
    blocks = [rng.standard_normal((8, 6)) for _ in range(3)]
    G = sum(blocks)
    (u, v, k), stats = distributed_power(blocks, unit_sphere_sample(6, 1), None, 1e-13, 500)
    s, u1, v1 = oracles.top_singular(G)
    assert float(u @ G @ v) == pytest.approx(s[0], rel=1e-10)
    assert stats.for_epoch(0).payload_entries == 2 * 3 * k * (8 + 6)
    assert stats.for_epoch(0).aux_entries == 2 * 3 * k


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig("dfw-trace", "mtls", 1.0, 5)
    with pytest.raises(ValueError):
        RunConfig("sva", "mtls", 1.0, 5, schedule=KSchedule.constant(1))
    with pytest.raises(ValueError):
        cfg(task="mlr", step_rule="linesearch")
    with pytest.raises(ValueError):
        cfg(algorithm="admm")


def test_exact_schedule_reproduces_fw_atoms(small_mtls, small_parts):
    ref = fw_run(small_mtls, FwConfig(mu=1.0, T=30))
    run = dfw_trace_run(cfg(T=30, schedule=KSchedule.exact()), small_mtls, small_parts)
    for a, b in zip(run.atoms, ref.atoms):
        np.testing.assert_allclose(a.to_dense(), b.to_dense(), atol=1e-10)
    assert [r.K_used for r in run.records] == [r.K_used for r in ref.records]
    np.testing.assert_allclose(run.objectives, ref.objectives, rtol=1e-10)


def test_sva_matches_naive_on_replicated_data(small_mtls):
    parts = split(small_mtls.data, PartitionSpec("replicated", 3))
    a = sva_run(cfg("sva", N=3), small_mtls, parts)
    b = naive_dfw_run(cfg("naive-dfw", N=3), small_mtls, parts)
    np.testing.assert_allclose(a.objectives, b.objectives, rtol=1e-9)


def test_naive_records_duality_gap(small_mtls, small_parts):
    traj = naive_dfw_run(cfg("naive-dfw"), small_mtls, small_parts)
    ref = fw_run(small_mtls, FwConfig(mu=1.0, T=20))
    gaps = [r.duality_gap for r in traj.records[:-1]]
    np.testing.assert_allclose(gaps, [r.duality_gap for r in ref.records[:-1]], rtol=1e-8)


def test_more_power_iterations_never_hurt(desk_mtls):
    parts = split(desk_mtls.data, PartitionSpec("uniform-random", 4, 0))
    finals = [
        dfw_trace_run(cfg(T=100, schedule=KSchedule.constant(K), step_rule="linesearch"), desk_mtls, parts)
        .final()
        .objective
        for K in (1, 2, 3, 4)
    ]
    assert all(b <= a + 1e-6 for a, b in zip(finals, finals[1:]))


def test_linesearch_traffic_is_auxiliary(small_mtls, small_parts):
    traj = dfw_trace_run(cfg(T=5, step_rule="linesearch"), small_mtls, small_parts)
    d, m = small_mtls.shape
    for ep in traj.comm.epochs:
        assert ep.payload_entries == 2 * 4 * 2 * (d + m)
        assert ep.rounds == 4
        assert ep.aux_entries == 4 * 2 + 4 * 2
        assert ep.aux_rounds == 1


def test_warm_start_runs_and_differs(small_mtls, small_parts):
    cold = dfw_trace_run(cfg(schedule=KSchedule.constant(1)), small_mtls, small_parts)
    warm = dfw_trace_run(cfg(schedule=KSchedule.constant(1), warm_start=True), small_mtls, small_parts)
    assert warm.objectives[0] == cold.objectives[0]
    assert not np.array_equal(warm.objectives, cold.objectives)
    assert warm.final().objective < warm.objectives[0]


def test_theorem_schedule_resolution(small_mtls, small_parts):
    c = cfg(T=5, schedule=KSchedule("theorem-log", delta=1.0, beta=0.7))
    r = resolve_schedule(c, small_mtls)
    G0 = small_mtls.gradient(np.zeros(small_mtls.shape))
    assert r.schedule.L_est == pytest.approx(np.linalg.svd(G0, compute_uv=False)[0])
    assert r.schedule.mu == 1.0 and r.schedule.CF_est > 0
    traj = dfw_trace_run(r, small_mtls, small_parts)
    assert all(rec.K_used >= 1 for rec in traj.records[:-1])


def test_zero_gradient_stops_all_algorithms():
    X = np.random.default_rng(0).standard_normal((8, 3))
    p = Problem("mtls", LocalDataset(X, Y=np.zeros((8, 2))))
    parts = split(p.data, PartitionSpec("contiguous", 2))
    for c in (cfg(N=2), cfg("naive-dfw", N=2), cfg("sva", N=2)):
        traj = run_inprocess(c, p, parts, timeout=20)
        assert traj.stopped_early
        assert traj.gammas == []


def test_worker_crash_is_reported(small_mtls, small_parts):
    c = cfg()

    def target(ch, j):
        if j == 2:
            raise MemoryError("worker 2 ran out of memory")
        worker_main(ch, j, c, small_parts[j])

    workers = ThreadWorkers(4, target, timeout=20)
    with pytest.raises(WorkerLostError, match="out of memory"):
        master_main(workers.start(), c, small_mtls, [p.n for p in small_parts])
    workers.join(5)
    assert not any(th.is_alive() for th in workers.threads)


def test_wrong_sized_worker_is_a_protocol_error(small_mtls, small_parts):
    bad = list(small_parts)
    bad[2] = LocalDataset(small_parts[2].X[:, :3], Y=small_parts[2].Y)
    with pytest.raises(ProtocolError):
        run_inprocess(cfg(), small_mtls, bad, timeout=20)


def test_mlr_dfw_trace(small_mlr):
    parts = split(small_mlr.data, PartitionSpec("uniform-random", 3, 1))
    traj = dfw_trace_run(cfg(task="mlr", mu=5.0, N=3, T=30), small_mlr, parts)
    assert traj.final().objective < 0.7 * traj.objectives[0]
    assert 0 <= traj.final().top5_error <= 1


def test_inprocess_runs_are_deterministic(small_mtls, small_parts):
    for c in (cfg(), cfg("naive-dfw"), cfg("sva")):
        a = run_inprocess(c, small_mtls, small_parts)
        b = run_inprocess(c, small_mtls, small_parts)
        assert a.objectives.tobytes() == b.objectives.tobytes()


def test_dfw_atoms_have_descent_sign(small_mtls, small_parts):
    traj = dfw_trace_run(cfg(keep_iterates=True), small_mtls, small_parts)
    for W, atom in zip(traj.iterates, traj.atoms):
        assert atom.inner(small_mtls.gradient(W)) <= 0


def test_worker_main_needs_matching_master(small_mtls, small_parts):
    # a worker whose config disagrees on the algorithm trips a protocol check
    c = cfg()
    other = replace(c, algorithm="naive-dfw", schedule=None)
    workers = ThreadWorkers(4, lambda ch, j: worker_main(ch, j, other, small_parts[j]), timeout=10)
    with pytest.raises(ProtocolError):
        master_main(workers.start(), c, small_mtls, [p.n for p in small_parts])
