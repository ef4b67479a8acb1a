"""Run orchestration: data loading, partitioning, transports, metrics files."""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .algorithms import master_main, resolve_schedule, run_inprocess, worker_main
from .config import RunFile, load_run_config
from .datasets import gen_synthetic, load_problem, split
from .fw import Trajectory, fw_run
from .runtime import TcpListener, connect_worker, parse_address

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "t",
    "objective",
    "duality_gap",
    "estimation_error",
    "top5_error",
    "gamma",
    "K_used",
    "payload_entries",
    "elapsed_ms",
)

SUMMARY_SCHEMA = {
    "type": "object",
    "required": [
        "algorithm",
        "task",
        "transport",
        "workers",
        "epochs_requested",
        "epochs_run",
        "stopped_early",
        "final_objective",
        "final_estimation_error",
        "final_top5_error",
        "total_payload_entries",
        "total_payload_bytes",
        "total_aux_entries",
        "overhead_bytes",
        "wall_time_s",
        "mean_sigma_ratio",
    ],
    "additionalProperties": False,
    "properties": {
        "algorithm": {"enum": ["dfw-trace", "naive-dfw", "sva", "fw"]},
        "task": {"enum": ["mtls", "mlr"]},
        "transport": {"enum": ["inprocess", "tcp", "none"]},
        "workers": {"type": "integer", "minimum": 1},
        "epochs_requested": {"type": "integer", "minimum": 1},
        "epochs_run": {"type": "integer", "minimum": 0},
        "stopped_early": {"type": "boolean"},
        "final_objective": {"type": "number"},
        "final_estimation_error": {"type": ["number", "null"]},
        "final_top5_error": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "total_payload_entries": {"type": "integer", "minimum": 0},
        "total_payload_bytes": {"type": "integer", "minimum": 0},
        "total_aux_entries": {"type": "integer", "minimum": 0},
        "overhead_bytes": {"type": "integer", "minimum": 0},
        "wall_time_s": {"type": "number", "minimum": 0},
        "mean_sigma_ratio": {"type": ["number", "null"]},
    },
}


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(int(value))


def metrics_csv(traj: Trajectory, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for r in traj.records:
        writer.writerow(
            [
                r.t,
                _cell(r.objective),
                _cell(r.duality_gap),
                _cell(r.estimation_error),
                _cell(r.top5_error),
                _cell(r.gamma),
                _cell(r.K_used),
                _cell(r.payload_entries),
                f"{r.elapsed_ms:.3f}" if timing else "",
            ]
        )
    return buf.getvalue()


def read_metrics(path):
    """Parse a metrics CSV back into a list of dicts (empty cells become None)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for row in reader:
            parsed = {}
            for key, value in row.items():
                if value == "":
                    parsed[key] = None
                elif key in ("t", "K_used", "payload_entries"):
                    parsed[key] = int(value)
                else:
                    parsed[key] = float(value)
            rows.append(parsed)
    return rows


def summarize(cfg: RunFile, traj: Trajectory, wall_time: float, transport: str) -> dict:
    final = traj.final()
    comm = traj.comm
    ratios = [r.sigma_ratio for r in traj.records if r.sigma_ratio is not None]
    return {
        "algorithm": cfg.algorithm,
        "task": cfg.task,
        "transport": transport,
        "workers": cfg.workers,
        "epochs_requested": cfg.epochs,
        "epochs_run": len(traj.gammas),
        "stopped_early": traj.stopped_early,
        "final_objective": final.objective,
        "final_estimation_error": final.estimation_error,
        "final_top5_error": final.top5_error,
        "total_payload_entries": comm.payload_entries if comm else 0,
        "total_payload_bytes": comm.payload_bytes if comm else 0,
        "total_aux_entries": comm.aux_entries if comm else 0,
        "overhead_bytes": comm.overhead_bytes if comm else 0,
        "wall_time_s": wall_time,
        "mean_sigma_ratio": float(np.mean(ratios)) if ratios else None,
    }


def prepare(cfg: RunFile):
    """Load (or generate) the data, split it, and resolve the run parameters.

    Deterministic in ``cfg``: the master and every TCP worker call it
    independently and agree on partitions and schedules.
    """
    data_dir = Path(cfg.data)
    if not (data_dir / "dataset.json").exists():
        spec = cfg.synthetic_spec()
        if spec is None:
            raise FileNotFoundError(f"no dataset at {data_dir} and no 'synthetic' block to generate one")
        gen_synthetic(spec, data_dir)
    problem = load_problem(data_dir)
    if problem.task != cfg.task:
        raise ValueError(f"config task {cfg.task!r} does not match dataset task {problem.task!r}")
    if cfg.algorithm == "fw":
        return problem, None, None
    parts = split(problem.data, cfg.partition_spec())
    return problem, parts, resolve_schedule(cfg.run_config(), problem)


def _spawn_workers(config_path, address, n_workers):
    cmd = [sys.executable, "-m", "dfwtrace", "serve-worker", "--config", str(config_path), "--connect", address]
    return [subprocess.Popen(cmd + ["--worker-id", str(j)]) for j in range(n_workers)]


def run_tcp_master(cfg: RunFile, problem, parts, run_config, config_path=None, spawn_workers=False, listen=None):
    listener = TcpListener(*parse_address(listen or cfg.listen))
    procs = []
    channels = []
    try:
        log.info("master listening on %s", listener.address)
        if spawn_workers:
            if config_path is None:
                raise ValueError("spawning workers needs the config on disk")
            procs = _spawn_workers(config_path, listener.address, cfg.workers)
        else:
            print(f"listening on {listener.address}", file=sys.stderr, flush=True)
        channels = listener.accept_workers(cfg.workers)
        return master_main(channels, run_config, problem, [p.n for p in parts])
    finally:
        for ch in channels:
            ch.close()
        listener.close()
        for p in procs:
            try:
                p.wait(timeout=30)
            except subprocess.TimeoutExpired:
                p.kill()


def run_experiment(
    config,
    out_dir=None,
    transport: Optional[str] = None,
    spawn_workers: bool = False,
    listen: Optional[str] = None,
    timing: bool = True,
):
    """Execute a run config; writes ``metrics.csv`` and ``summary.json`` to ``out_dir``.

    ``config`` is a path or an already-parsed :class:`RunFile`. Returns
    ``(trajectory, summary)``.
    """
    config_path = None
    if isinstance(config, RunFile):
        cfg = config
    else:
        config_path = Path(config)
        cfg = load_run_config(config_path)
    transport = transport or cfg.transport
    if transport == "tcp" and spawn_workers and config_path is None:
        if out_dir is None:
            raise ValueError("out_dir is required to hand an in-memory config to spawned workers")
        config_path = Path(out_dir) / "run.json"
        config_path.parent.mkdir(parents=True, exist_ok=True)
        config_path.write_text(cfg.model_dump_json(indent=2))

    problem, parts, run_config = prepare(cfg)
    start = time.monotonic()
    if cfg.algorithm == "fw":
        traj = fw_run(problem, cfg.fw_config())
        transport = "none"
    elif transport == "inprocess":
        traj = run_inprocess(run_config, problem, parts)
    else:
        traj = run_tcp_master(cfg, problem, parts, run_config, config_path, spawn_workers, listen)
    wall = time.monotonic() - start

    summary = summarize(cfg, traj, wall, transport)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(traj, timing))
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return traj, summary


def serve_worker(config_path, address, worker_id):
    """TCP worker process: rebuild this worker's slice locally and serve the run."""
    cfg = load_run_config(config_path)
    if cfg.algorithm == "fw":
        raise ValueError("the centralized 'fw' algorithm has no workers")
    if not 0 <= worker_id < cfg.workers:
        raise ValueError(f"worker id {worker_id} outside [0, {cfg.workers})")
    _, parts, run_config = prepare(cfg)
    channel, n_workers = connect_worker(address, worker_id)
    try:
        if n_workers != cfg.workers:
            raise ValueError(f"master runs {n_workers} workers, config says {cfg.workers}")
        worker_main(channel, worker_id, run_config, parts[worker_id])
    finally:
        channel.close()


def report(paths):
    """Summary statistics for one or more metrics CSVs, one dict per file."""
    out = []
    for path in paths:
        rows = read_metrics(path)
        objectives = [r["objective"] for r in rows]
        steps = [r for r in rows if r["gamma"] is not None]
        last = rows[-1]
        ks = [r["K_used"] for r in steps if r["K_used"] is not None]
        out.append(
            {
                "file": str(path),
                "epochs": len(steps),
                "initial_objective": objectives[0],
                "final_objective": objectives[-1],
                "min_objective": min(objectives),
                "final_estimation_error": last["estimation_error"],
                "final_top5_error": last["top5_error"],
                "total_payload_entries": sum(r["payload_entries"] or 0 for r in steps),
                "mean_K": float(np.mean(ks)) if ks else None,
            }
        )
    return out
