"""Command-line interface: run simulations, exercise individual components,
and materialize trace fixtures.

Exit codes: 0 success, 2 input error, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

OUT_DIR_ENV = "EVOSCHED_OUT"


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_scenario(args):
    from .simenv import load_scenario
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if getattr(args, "policy", None):
        from .simenv import Policy
        scenario = replace(scenario, policy=Policy(args.policy))
    return scenario


def cmd_simulate(args) -> int:
    from .simenv import run, write_metrics_csv, write_summary_json
    out = _out_dir(args)
    scenario = _load_scenario(args)
    metrics = run(scenario)
    csv_path = os.path.join(out, "metrics.csv")
    json_path = os.path.join(out, "summary.json")
    write_metrics_csv(csv_path, metrics)
    write_summary_json(json_path, metrics, scenario)
    if args.verbose:
        print(f"wrote {csv_path} and {json_path} "
              f"({metrics.n_tasks} finished tasks)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .simenv import load_scenario, run, write_metrics_csv, write_summary_json
    out = _out_dir(args)
    with open(args.sweep) as fh:
        paths = [line.strip() for line in fh if line.strip()]
    for path in paths:
        scenario = load_scenario(path)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
        metrics = run(scenario)
        stem = os.path.splitext(os.path.basename(path))[0]
        write_metrics_csv(os.path.join(out, f"{stem}_metrics.csv"), metrics)
        write_summary_json(os.path.join(out, f"{stem}_summary.json"), metrics, scenario)
        if args.verbose:
            print(f"{stem}: {metrics.n_tasks} tasks")
    return EXIT_OK


def cmd_drift_detect(args) -> int:
    from .drift import DetectorConfig, DriftDetector, read_trace_csv
    frames = read_trace_csv(args.trace)
    detector = DriftDetector(DetectorConfig())
    for frame in frames:
        event = detector.update(frame)
        if event is not None:
            print(json.dumps({
                "t1": event.t1, "t2": event.t2, "t3": event.t3,
                "type": event.drift_type.value, "d": event.d, "d0": event.d0,
            }, sort_keys=True))
    return EXIT_OK


def cmd_profile_memory(args) -> int:
    from .profiler import memory_demand, read_arch_json
    arch = read_arch_json(args.arch)
    breakdown = memory_demand(arch)
    print(json.dumps({
        "m_p": breakdown.m_p, "m_f": breakdown.m_f, "m_g": breakdown.m_g,
        "m_opt": breakdown.m_opt, "m_ws": breakdown.m_ws,
        "total": breakdown.total,
    }, sort_keys=True))
    return EXIT_OK


def cmd_schedule(args) -> int:
    from .scheduler import EvolutionTask, select_tasks
    if args.capacity <= 0:
        raise ValueError("capacity must be positive MB")
    with open(args.tasks) as fh:
        doc = json.load(fh)
    tasks = [
        EvolutionTask(
            id=rec["id"], end_id=rec.get("end_id", rec["id"]),
            arrival_t=rec.get("arrival_t", 0.0),
            urgency=rec.get("urgency", 50.0),
            mem_demand=rec["mem_demand"],
            predicted_t_r=rec["predicted_t_r"],
        )
        for rec in doc
    ]
    result = select_tasks(tasks, args.capacity)
    print(json.dumps({
        "selected": list(result.selected),
        "total_value": result.total_value,
        "capacity_used": result.capacity_used,
    }, sort_keys=True))
    return EXIT_OK


def cmd_gen_traces(args) -> int:
    from .simenv import write_traces
    out = _out_dir(args)
    scenario = _load_scenario(args)
    for path in write_traces(out, scenario):
        if args.verbose:
            print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evosched",
        description="Model-evolution scheduling simulator and component tools",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one scenario end to end")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--policy")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="run every scenario listed in a file")
    p.add_argument("--sweep", required=True, help="file with one scenario path per line")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("drift-detect", parents=[common], help="emit drift events for a trace CSV")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_drift_detect)

    p = sub.add_parser("profile-memory", parents=[common], help="memory breakdown for an architecture")
    p.add_argument("--arch", required=True)
    p.set_defaults(func=cmd_profile_memory)

    p = sub.add_parser("schedule", parents=[common], help="knapsack selection over a task list")
    p.add_argument("--tasks", required=True, help="JSON list of task records")
    p.add_argument("--capacity", type=float, required=True, help="memory capacity, MB")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gen-traces", parents=[common], help="write per-end trace CSVs for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_traces)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
