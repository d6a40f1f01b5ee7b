"""Operator entry point.

Subcommands: trace (export a workload CSV), run (evaluation grid to JSONL),
report (derived CSV tables), calibrate (target-utilization sweep), serve
(host the wire protocol). Exit codes: 0 success, 1 runtime failure,
2 usage/validation error. Outputs carry no timestamps, so identical inputs
and seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import evalharness, protocol
from .evalharness import (DEFAULT_SEEDS, EvalProtocol, PolicySpec, build_report,
                          run_grid, write_report_csvs, write_results_jsonl,
                          read_results_jsonl)
from .policies import HpaConfig, PolicyKind, QTable, QTableConfig, qlearn_train
from .simenv import EnvConfig, default_env_config, load_env_config
from .workload import (WORKLOAD_NAMES, default_spec, generate_trace,
                       write_trace_csv)

CONFIG_ENV_VAR = "SCALEBENCH_CONFIG"


class CliError(Exception):
    """Validation problem; maps to exit code 2."""


def _load_config(path: str | None) -> EnvConfig:
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return default_env_config()
    try:
        return load_env_config(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load config {path}: {exc}") from exc


def _parse_workloads(text: str) -> list[str]:
    if text == "all":
        return list(WORKLOAD_NAMES)
    names = [w.strip() for w in text.split(",") if w.strip()]
    for name in names:
        if name not in WORKLOAD_NAMES:
            raise CliError(f"unknown workload {name!r}; valid names: "
                           + ", ".join(WORKLOAD_NAMES))
    if not names:
        raise CliError("no workloads given")
    return names


def _parse_seeds(text: str) -> list[int]:
    if text == "default":
        return list(DEFAULT_SEEDS)
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CliError(f"seeds must be integers: {exc}") from exc
    if not seeds:
        raise CliError("no seeds given")
    return seeds


def _parse_targets(text: str) -> list[float]:
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 5.0
            targets = []
            value = start
            while value <= stop + 1e-9:
                targets.append(round(value, 6))
                value += step
        else:
            targets = [float(x) for x in text.split(",") if x.strip()]
    except (ValueError, IndexError) as exc:
        raise CliError(f"bad target sweep {text!r}: {exc}") from exc
    if not targets:
        raise CliError("empty target sweep")
    for t in targets:
        if not 0.0 < t <= 100.0:
            raise CliError(f"target_cpu must be in (0, 100], got {t}")
    return targets


def _parse_policies(text: str, args) -> list[PolicySpec]:
    specs: list[PolicySpec] = []
    for name in (p.strip() for p in text.split(",")):
        if not name:
            continue
        if name == "hpa":
            specs.append(PolicySpec("hpa", PolicyKind.HPA,
                                    hpa=HpaConfig(target_cpu=args.hpa_target)))
        elif name == "random":
            specs.append(PolicySpec("random", PolicyKind.RANDOM))
        elif name == "qlearning":
            if args.qtable:
                table = QTable.load(args.qtable)
            else:
                cfg = _load_config(args.config)
                table = qlearn_train(cfg, QTableConfig(), seed=args.train_seed)
            specs.append(PolicySpec("qlearning", PolicyKind.QLEARNING,
                                    qtable=table))
        elif name.startswith("external:"):
            endpoint = name[len("external:"):]
            specs.append(PolicySpec(name, PolicyKind.EXTERNAL, endpoint=endpoint))
        else:
            raise CliError(
                f"unknown policy {name!r}; valid: hpa, random, qlearning, "
                f"external:HOST:PORT")
    if not specs:
        raise CliError("no policies given")
    return specs


def cmd_trace(args) -> int:
    if args.workload not in WORKLOAD_NAMES:
        raise CliError(f"unknown workload {args.workload!r}; valid names: "
                       + ", ".join(WORKLOAD_NAMES))
    if args.steps < 1:
        raise CliError("--steps must be >= 1")
    trace = generate_trace(default_spec(args.workload), args.seed, args.steps)
    if args.out == "-":
        write_trace_csv(trace, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8") as fp:
            write_trace_csv(trace, fp)
    return 0


def cmd_run(args) -> int:
    policies = _parse_policies(args.policies, args)
    workloads = _parse_workloads(args.workloads)
    seeds = _parse_seeds(args.seeds)
    env_cfg = _load_config(args.config)
    episode_steps = args.episode_steps or env_cfg.episode_steps
    grid = EvalProtocol(policies=tuple(policies), workloads=tuple(workloads),
                        seeds=tuple(seeds), episode_steps=episode_steps)
    records = run_grid(grid, env_cfg, parallel=args.parallel,
                       agent_timeout=args.agent_timeout)
    os.makedirs(args.out, exist_ok=True)
    results_path = os.path.join(args.out, "results.jsonl")
    write_results_jsonl(records, results_path)
    failed = sum(1 for r in records if r.failed)
    print(f"{len(records)} episodes "
          f"({len(policies)} policies x {len(workloads)} workloads x "
          f"{len(seeds)} seeds), {failed} failed -> {results_path}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    try:
        records = read_results_jsonl(args.results)
    except OSError as exc:
        raise CliError(f"cannot read results: {exc}") from exc
    if not records:
        raise CliError(f"no records in {args.results}")
    try:
        report = build_report(records, viable_threshold=args.viable_threshold,
                              train_workload=args.train_workload)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    paths = write_report_csvs(report, args.out)
    for path in paths:
        print(path)
    if report.failed_count:
        print(f"note: {report.failed_count} failed episodes excluded from "
              f"aggregation")
    if report.missing:
        print("note: cells with no successful episodes: "
              + ", ".join(f"{p}/{w}" for p, w in report.missing))
    if report.composite_undefined:
        print("note: composite undefined (single policy) on: "
              + ", ".join(report.composite_undefined))
    return 0


def cmd_calibrate(args) -> int:
    targets = _parse_targets(args.targets)
    workloads = _parse_workloads(args.workloads)
    seeds = _parse_seeds(args.seeds)
    env_cfg = _load_config(args.config)
    rows = []
    for target in targets:
        spec = PolicySpec("hpa", PolicyKind.HPA,
                          hpa=HpaConfig(target_cpu=target))
        grid = EvalProtocol(policies=(spec,), workloads=tuple(workloads),
                            seeds=tuple(seeds))
        records = run_grid(grid, env_cfg, parallel=args.parallel)
        cells = evalharness.aggregate(records)
        for workload in workloads:
            cell = cells[("hpa", workload)]
            rows.append((target, workload,
                         cell["total_cost_usd"].mean,
                         cell["total_violations"].mean,
                         cell["mean_replicas"].mean))
    with open(args.out, "w", encoding="utf-8") as fp:
        fp.write("target_cpu,workload,mean_cost_usd,mean_violations,"
                 "mean_replicas\n")
        for target, workload, cost, violations, replicas in rows:
            fp.write(f"{target:g},{workload},{cost!r},{violations!r},"
                     f"{replicas!r}\n")
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    cfg = _load_config(args.config)
    if args.stdio:
        protocol.serve_stdio(cfg)
        return 0
    server = protocol.serve_tcp(cfg, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"serving on {host}:{port} (config hash "
          f"{protocol.config_hash(cfg)})", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalebench",
        description="Autoscaling benchmark: traces, evaluation grids, reports, "
                    "calibration sweeps, and the agent wire protocol.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="export one workload trace as CSV")
    p.add_argument("--workload", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--steps", type=int, default=240)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("run", help="run the evaluation grid, write results JSONL")
    p.add_argument("--policies", default="hpa,random",
                   help="comma list: hpa, random, qlearning, external:HOST:PORT")
    p.add_argument("--workloads", default="all")
    p.add_argument("--seeds", default="default")
    p.add_argument("--out", default="results")
    p.add_argument("--config", default=None)
    p.add_argument("--parallel", type=int, default=None)
    p.add_argument("--episode-steps", type=int, default=None,
                   help="override the config file's episode length")
    p.add_argument("--hpa-target", type=float, default=70.0)
    p.add_argument("--qtable", default=None, help="trained Q-table file")
    p.add_argument("--train-seed", type=int, default=42)
    p.add_argument("--agent-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="derive CSV tables from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default="report")
    p.add_argument("--viable-threshold", type=float, default=100.0)
    p.add_argument("--train-workload", default="variable")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="sweep HPA CPU targets, write frontier CSV")
    p.add_argument("--targets", default="50:90:5",
                   help="comma list or START:STOP[:STEP]")
    p.add_argument("--workloads", default="all")
    p.add_argument("--seeds", default="default")
    p.add_argument("--out", default="calibration.csv")
    p.add_argument("--config", default=None)
    p.add_argument("--parallel", type=int, default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="host episodes for external agents")
    p.add_argument("--port", type=int, default=protocol.DEFAULT_PORT)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--stdio", action="store_true",
                   help="single session over stdin/stdout instead of TCP")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
