"""Command line entry point: ``dfwtrace {gen,run,serve-worker,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError
from .datasets import SyntheticSpec, gen_synthetic


def _cmd_gen(args):
    spec = SyntheticSpec(
        task=args.task,
        n=args.n,
        d=args.d,
        m=args.m,
        rank=args.rank,
        trace_norm=args.trace_norm,
        seed=args.seed,
        n_test=args.n_test,
    )
    out = gen_synthetic(spec, args.out)
    print(f"wrote {args.task} dataset ({args.n}x{args.d}, m={args.m}) to {out}")
    return 0


def _cmd_run(args):
    from .experiment import run_experiment

    _, summary = run_experiment(
        args.config,
        out_dir=args.out,
        transport=args.transport,
        spawn_workers=args.spawn_workers,
        listen=args.listen,
        timing=not args.no_timing,
    )
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_serve_worker(args):
    from .experiment import serve_worker

    serve_worker(args.config, args.connect, args.worker_id)
    return 0


def _cmd_report(args):
    from .experiment import report

    for stats in report(args.metrics):
        print(stats["file"])
        for key, value in stats.items():
            if key != "file":
                print(f"  {key:24s} {'' if value is None else value}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dfwtrace", description="Distributed Frank-Wolfe for trace-norm constrained learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--task", choices=["mtls", "mlr"], required=True)
    gen.add_argument("--n", type=int, required=True, help="training rows")
    gen.add_argument("--d", type=int, required=True, help="features")
    gen.add_argument("--m", type=int, required=True, help="tasks or classes")
    gen.add_argument("--rank", type=int, default=10)
    gen.add_argument("--trace-norm", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-test", type=int, default=None, help="MLR test rows (default n/10)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="execute a run config")
    run.add_argument("config", help="JSON run config")
    run.add_argument("--out", required=True, help="directory for metrics.csv and summary.json")
    run.add_argument("--transport", choices=["inprocess", "tcp"], default=None, help="override the config's transport")
    run.add_argument("--listen", default=None, help="host:port for the TCP master")
    run.add_argument("--spawn-workers", action="store_true", help="launch TCP workers as local subprocesses")
    run.add_argument("--no-timing", action="store_true", help="leave elapsed_ms empty so reruns are byte-identical")
    run.set_defaults(func=_cmd_run)

    worker = sub.add_parser("serve-worker", help="run one TCP worker")
    worker.add_argument("--config", required=True)
    worker.add_argument("--connect", required=True, help="master host:port")
    worker.add_argument("--worker-id", type=int, required=True)
    worker.set_defaults(func=_cmd_serve_worker)

    rep = sub.add_parser("report", help="summary statistics of metrics CSVs")
    rep.add_argument("metrics", nargs="+")
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
