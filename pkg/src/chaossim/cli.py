"""Command-line entry point: batch runs whose outputs are reports and plot data."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .chaos import Scenario, canonical_experiment, experiment_from_document
from .config import ConfigError, load_config
from .harness import analyze, run_cycle, run_load_round, run_suite
from .kernel import RngStreams
from .chaos import build_pool


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="run seed (default 42)")
    parser.add_argument("--config", help="declarative config document (YAML or JSON)")
    parser.add_argument("--out", help="output directory (env CHAOSSIM_OUT as fallback)")
    parser.add_argument("--recovery", choices=["on", "off"], help="self-healing toggle")
    parser.add_argument("--scenario", choices=[s.value for s in Scenario],
                        help="scenario filter / canonical pick")


def _build_config(args: argparse.Namespace):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.recovery is not None:
        overrides["recovery"] = args.recovery == "on"
    if args.scenario is not None:
        overrides["scenario_filter"] = args.scenario
    out = args.out or os.environ.get("CHAOSSIM_OUT")
    if out:
        overrides["out_dir"] = out
    cfg = load_config(args.config, overrides)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chaossim",
        description="Chaos-experiment evaluation harness for a simulated "
                    "self-healing smart office",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cycle = sub.add_parser("run-cycle", help="run one chaos cycle and write its report")
    _add_common(p_cycle)
    p_cycle.add_argument("--experiment", help="experiment document (YAML)")

    p_suite = sub.add_parser("run-suite", help="run a budgeted suite with feedback")
    _add_common(p_suite)
    p_suite.add_argument("--budget", type=int, help="number of cycles to run")
    p_suite.add_argument("--parallel", type=int, help="parallel cycle slots")

    p_load = sub.add_parser("run-load", help="run the step-wise load ramp round")
    _add_common(p_load)

    p_analyze = sub.add_parser("analyze", help="recompute a report from trace + manifest")
    p_analyze.add_argument("--trace", required=True)
    p_analyze.add_argument("--manifest", required=True)
    p_analyze.add_argument("--out", required=True)

    p_pool = sub.add_parser("list-pool", help="print the generated experiment pool")
    _add_common(p_pool)

    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            report = analyze(args.trace, args.manifest, args.out)
            print(f"report recomputed: verdict={report['verdict']}")
            return 0
        cfg = _build_config(args)
        if args.command == "run-cycle":
            if args.experiment:
                text = Path(args.experiment).read_text()
                cfg = replace(cfg, experiment=experiment_from_document(text, cfg.kb))
            elif args.scenario:
                cfg = replace(cfg, experiment=canonical_experiment(
                    Scenario(args.scenario), cfg.kb))
            report = run_cycle(cfg)
            print(f"cycle complete: verdict={report['verdict']} -> {cfg.out_dir}")
            for phase, verdict in report["hypothesis_verdicts"].items():
                print(f"  hypothesis[{phase}]: {'pass' if verdict['passed'] else 'FAIL'}")
        elif args.command == "run-suite":
            if args.budget is not None:
                cfg = replace(cfg, budget=args.budget)
            if args.parallel is not None:
                cfg = replace(cfg, parallel=args.parallel)
            suite = run_suite(cfg)
            print(f"suite complete: {len(suite['cycles'])} cycles "
                  f"(pool {suite['pool_size']}) -> {cfg.out_dir}")
        elif args.command == "run-load":
            report, series = run_load_round(cfg)
            wl = report["workload"]
            print(f"load round complete: peak_replicas={wl['peak_replicas']} "
                  f"final_replicas={wl['final_replicas']} -> {cfg.out_dir}")
        elif args.command == "list-pool":
            streams = RngStreams(cfg.seed)
            warnings: list[str] = []
            pool = build_pool(cfg.failure_model, cfg.catalog, cfg.kb,
                              streams.stream("pool-build"), warnings)
            if cfg.scenario_filter:
                pool = [e for e in pool if e.scenario.value == cfg.scenario_filter]
            for exp in pool:
                print(f"{exp.id}  {exp.scenario.value:14s} targets={','.join(exp.targets)} "
                      f"duration={exp.duration_ms}ms level={exp.injection_level}")
            for warning in warnings:
                print(f"warning: {warning}", file=sys.stderr)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
