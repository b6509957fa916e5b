"""Run orchestration: single chaos cycles, suites, load rounds, trace re-analysis.

A run writes five artifacts, always: manifest, trace, chaos log, report, and
metric series. Reports are pure functions of (trace, manifest), so analysis-only
mode reproduces them byte-for-byte.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .catalog import clone_catalog
from .chaos import (
    ChaosInjector,
    ChaosLog,
    PoolExhausted,
    Scenario,
    apply_feedback,
    build_pool,
    default_hypothesis,
    select_next,
    uniform_weights,
)
from .config import RunConfig, config_from_manifest, config_to_manifest, read_json, write_json
from .evaluation import ATTRIBUTE_CHECKS, Evaluator
from .kernel import EventKind, RngStreams, Simulator, Trace
from .managing import SelfHealingController
from .smartoffice import ManagedSystem
from .workload import generate_requests, summarize, write_series_csv

ARTIFACT_MANIFEST = "manifest.json"
ARTIFACT_TRACE = "trace.ndjson"
ARTIFACT_CHAOS_LOG = "chaos_log.ndjson"
ARTIFACT_REPORT = "report.json"
ARTIFACT_METRICS = "metrics.csv"


def derive_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (2**63 - 1)


def total_duration_ms(cfg: RunConfig) -> int:
    if cfg.experiment is None:
        return cfg.clean_duration_ms
    return cfg.experiment.end_ms + cfg.after_settle_ms + cfg.after_window_ms


def snapshot_plan(cfg: RunConfig) -> list[tuple[int, str]]:
    """Deterministic phase-tagged snapshot instants for a run."""
    cadence = cfg.snapshot_cadence_ms
    total = total_duration_ms(cfg)
    if cfg.experiment is None:
        return [(at, "before") for at in range(cadence, total + 1, cadence)]
    t_inj, t_end = cfg.experiment.start_ms, cfg.experiment.end_ms
    plan = [(at, "before") for at in range(cadence, t_inj, cadence)]
    # The during phase stops short of t_end: the rollback restore fires exactly
    # there and would otherwise leak into the final during snapshot.
    plan += [(at, "during") for at in range(t_inj + cadence, t_end, cadence)]
    plan += [(at, "after") for at in range(t_end + cfg.after_settle_ms, total + 1, cadence)]
    return plan


def execute_simulation(cfg: RunConfig, with_workload: bool = False) -> tuple[Trace, ChaosLog]:
    """Build the office on a fresh simulator and run it to the configured horizon."""
    sim = Simulator(cfg.seed)
    office = ManagedSystem(sim, clone_catalog(cfg.catalog), cfg.prefs, cfg.kb)
    # The controller listens on the trace, so it must attach before bootstrap
    # records are written or it would misread the initial replica counts.
    controller = SelfHealingController(sim, office, cfg.kb, recovery_enabled=cfg.recovery)
    office.start()
    controller.start()
    log = ChaosLog()
    if cfg.experiment is not None:
        ChaosInjector(sim, office, log).inject(cfg.experiment)
    total = total_duration_ms(cfg)
    if with_workload:
        profile = cfg.workload
        schedule = generate_requests(profile, sim.rng.stream("workload-jitter"))
        for at, user in schedule:
            sim.schedule(at, EventKind.WORKLOAD_REQUEST, profile.target_service,
                         {"user": user},
                         lambda s, ev, u=user: office.handle_service_request(
                             profile.target_service, u))
        total = max(total, profile.end_ms + profile.post_ramp_observation_ms)
    sim.run_until(total)
    return sim.trace, log


def build_report(cfg: RunConfig, trace: Trace) -> dict:
    """Assemble the run report purely from the trace and the effective config."""
    evaluator = Evaluator(trace, cfg.catalog, cfg.prefs, cfg.kb,
                          impact_window_ms=cfg.impact_window_ms)
    exp = cfg.experiment
    total = total_duration_ms(cfg)
    snapshots = [evaluator.capture(at, phase) for at, phase in snapshot_plan(cfg)]
    hypothesis = exp.hypothesis if exp is not None else default_hypothesis(
        Scenario.SERVICE_DOWN, [], cfg.kb)
    if exp is not None:
        phase_windows = {
            "before": (0, exp.start_ms),
            "during": (exp.start_ms, exp.end_ms),
            "after": (exp.end_ms + cfg.after_settle_ms, total),
        }
    else:
        phase_windows = {"before": (0, total)}
    comparison = evaluator.compare(snapshots, hypothesis, phase_windows, exp)
    verdict = "ok"
    if exp is not None and not comparison["verdicts"]["before"]["passed"]:
        verdict = "pre-injection-failure"
    blast = evaluator.blast_radius(exp) if exp is not None else None
    cross = evaluator.cross_service_state_effects(exp, until=total) if exp is not None else None
    mttr = evaluator.mttr_report()
    injections = [rec for rec in trace if rec.kind == "injection"]
    action_counts: dict[str, int] = {}
    for rec in injections:
        action_counts[rec.data["action"]] = action_counts.get(rec.data["action"], 0) + 1
    report = {
        "verdict": verdict,
        "experiment": exp.to_dict() if exp is not None else None,
        "hypothesis_verdicts": comparison["verdicts"],
        "metrics": comparison["metrics"],
        "deltas": comparison["deltas"],
        "attribute_deviations": comparison["attribute_deviations"],
        "expected_attributes": comparison["expected_attributes"],
        "unexpected_deviations": comparison["unexpected_deviations"],
        "requirements": comparison["requirements"],
        "blast_radius": blast,
        "cross_service_state_effects": cross,
        "mttr": mttr,
        "mttr_bound_ms": (evaluator.mttr_bound_ms(_fault_kind_for(exp.scenario), exp.targets[0])
                          if exp is not None else None),
        "chaos_summary": {"injection_records": len(injections), "actions": action_counts},
        "snapshots": [
            {"at": s["at"], "phase": s["phase"]} for s in snapshots
        ],
        "trace_records": len(trace),
    }
    return report


def _fault_kind_for(scenario: Scenario) -> str:
    return {
        Scenario.SERVICE_DOWN: "crash",
        Scenario.SENSOR_FAULT: "erroneous-data",
        Scenario.SENSOR_DOWN: "battery-drain",
        Scenario.SERVICE_DELAY: "delay",
    }[scenario]


def write_metrics_csv(cfg: RunConfig, trace: Trace, path: Path) -> None:
    evaluator = Evaluator(trace, cfg.catalog, cfg.prefs, cfg.kb,
                          impact_window_ms=cfg.impact_window_ms)
    exp = cfg.experiment
    hypothesis = exp.hypothesis if exp is not None else default_hypothesis(
        Scenario.SERVICE_DOWN, [], cfg.kb)
    from .chaos import verify_hypothesis

    rows = []
    for at, phase in snapshot_plan(cfg):
        snap = evaluator.capture(at, phase)
        result = verify_hypothesis(hypothesis, snap)
        min_healthy = min(s["healthy_count"] for s in snap["services"].values())
        means = [s["response_mean_ms"] for s in snap["services"].values()
                 if s["response_mean_ms"] is not None]
        rows.append({
            "at_ms": at,
            "phase": phase,
            "hypothesis_passed": result["passed"],
            "min_healthy_replicas": min_healthy,
            "mean_response_ms": round(sum(means) / len(means), 3) if means else "",
            "accepted": snap["system"]["accepted"],
            "rejected": snap["system"]["rejected"],
            "accepted_false": snap["system"]["accepted_false"],
        })
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["at_ms", "phase", "hypothesis_passed"])
        writer.writeheader()
        writer.writerows(rows)


def write_blast_csv(blast: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["injected", "window"] + blast["columns"])
        for injected in sorted(blast["rows"]):
            for k, cell in enumerate(blast["rows"][injected]):
                writer.writerow([injected, k] + [cell[c] for c in blast["columns"]])


def write_report_txt(report: dict, path: Path) -> None:
    lines = [f"verdict: {report['verdict']}"]
    exp = report.get("experiment")
    if exp:
        lines.append(f"experiment: {exp['id']} ({exp['scenario']} on {','.join(exp['targets'])})")
    for phase, verdict in report["hypothesis_verdicts"].items():
        lines.append(f"hypothesis[{phase}]: "
                     f"{'pass' if verdict['passed'] else 'FAIL'} "
                     f"({verdict['failed_snapshots']}/{verdict['snapshots']} failing snapshots)")
    for phase, metrics in report["metrics"].items():
        perf = metrics["performance"]["mean"]
        lines.append(
            f"metrics[{phase}]: availability={metrics['availability']['aggregate']:.4f} "
            f"reliability={metrics['reliability']:.4f} integrity={metrics['integrity']:.4f} "
            f"mean_latency={'n/a' if perf is None else f'{perf:.1f}ms'}")
    lines.append(f"attribute deviations: {report['attribute_deviations']} "
                 f"(expected: {report['expected_attributes']})")
    if report["unexpected_deviations"]:
        lines.append(f"UNEXPECTED deviations: {report['unexpected_deviations']}")
    recovered = [m for m in report["mttr"] if m.get("recovered")]
    for m in recovered:
        lines.append(f"recovered fault {m['fault_id']}: mttr={m['mttr_ms']}ms "
                     f"(bound {report['mttr_bound_ms']}ms)")
    Path(path).write_text("\n".join(lines) + "\n")


def write_artifacts(cfg: RunConfig, trace: Trace, log: ChaosLog, report: dict,
                    out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(config_to_manifest(cfg), out / ARTIFACT_MANIFEST)
    trace.write(out / ARTIFACT_TRACE)
    log.write(out / ARTIFACT_CHAOS_LOG)
    write_json(report, out / ARTIFACT_REPORT)
    write_metrics_csv(cfg, trace, out / ARTIFACT_METRICS)
    if report.get("blast_radius"):
        write_blast_csv(report["blast_radius"], out / "blast_radius.csv")
    write_report_txt(report, out / "report.txt")
    return out


def run_cycle(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """One full chaos cycle: steady state, inject, observe, evaluate, export."""
    cfg.validate()
    trace, log = execute_simulation(cfg)
    report = build_report(cfg, trace)
    write_artifacts(cfg, trace, log, report, out_dir or cfg.out_dir)
    return report


def run_load_round(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[dict, list[dict]]:
    """Step-wise load ramp against the workload target; exports the series panels."""
    cfg = replace(cfg, experiment=None, recovery=False)
    cfg.validate()
    cfg.workload.validate()
    trace, log = execute_simulation(cfg, with_workload=True)
    report = build_report(cfg, trace)
    evaluator = Evaluator(trace, cfg.catalog, cfg.prefs, cfg.kb,
                          impact_window_ms=cfg.impact_window_ms)
    profile = cfg.workload
    horizon = profile.end_ms + profile.post_ramp_observation_ms
    series = summarize(evaluator.index, profile, (profile.start_ms, horizon))
    replica_series = [row["replicas"] for row in series]
    report["workload"] = {
        "profile": {"initial_users": profile.initial_users,
                    "add_interval_ms": profile.add_interval_ms,
                    "ramp_duration_ms": profile.ramp_duration_ms,
                    "target_service": profile.target_service},
        "peak_replicas": max(replica_series) if replica_series else 0,
        "final_replicas": replica_series[-1] if replica_series else 0,
        "responses_total": sum(row["responses"] for row in series),
    }
    out = write_artifacts(cfg, trace, log, report, out_dir or cfg.out_dir)
    write_series_csv(series, out / "latency_series.csv")
    return report, series


def run_suite(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Iterate select -> run -> feedback until the budget is exhausted."""
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = RngStreams(cfg.seed)
    warnings: list[str] = []
    pool = build_pool(cfg.failure_model, cfg.catalog, cfg.kb,
                      streams.stream("pool-build"), warnings)
    if cfg.scenario_filter:
        pool = [e for e in pool if e.scenario.value == cfg.scenario_filter]
    weights = uniform_weights(pool)
    select_rng = streams.stream("selection")
    cycles: list[dict] = []
    index = 0
    while index < cfg.budget:
        wave = []
        for _ in range(min(cfg.parallel, cfg.budget - index)):
            try:
                experiment = select_next(pool, weights, select_rng)
            except PoolExhausted:
                break
            wave.append((index, experiment))
            index += 1
        if not wave:
            break
        results: list[tuple[int, object, dict | None, str | None]] = []

        def _run(entry):
            i, experiment = entry
            sub = replace(cfg, seed=derive_seed(cfg.seed, i), experiment=experiment,
                          budget=0, parallel=1)
            try:
                report = run_cycle(sub, out / f"cycle-{i:03d}")
                return (i, experiment, report, None)
            except Exception as exc:  # per-cycle errors must not halt the suite
                return (i, experiment, None, f"{type(exc).__name__}: {exc}")

        if cfg.parallel > 1 and len(wave) > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallel) as pool_exec:
                results = list(pool_exec.map(_run, wave))
        else:
            results = [_run(entry) for entry in wave]
        for i, experiment, report, error in sorted(results, key=lambda r: r[0]):
            failed = None
            if report is not None:
                during = report["hypothesis_verdicts"]["during"]
                if during["snapshots"] and not during["passed"]:
                    failed = experiment.id
            weights = apply_feedback(weights, failed, cfg.feedback_boost)
            cycles.append({
                "index": i,
                "experiment_id": experiment.id,
                "scenario": experiment.scenario.value,
                "targets": experiment.targets,
                "error": error,
                "hypothesis_failed_during": failed is not None,
                "attribute_deviations": report["attribute_deviations"] if report else None,
                "unexpected_deviations": report["unexpected_deviations"] if report else None,
            })
    per_scenario: dict[str, dict] = {}
    for c in cycles:
        agg = per_scenario.setdefault(c["scenario"], {
            "runs": 0, "hypothesis_failures": 0, "errors": 0,
            "attribute_deviations": [], "unexpected_deviations": [],
            "expected_attributes": list(ATTRIBUTE_CHECKS[c["scenario"]]),
        })
        agg["runs"] += 1
        if c["error"]:
            agg["errors"] += 1
        if c["hypothesis_failed_during"]:
            agg["hypothesis_failures"] += 1
        for attr in c["attribute_deviations"] or []:
            if attr not in agg["attribute_deviations"]:
                agg["attribute_deviations"].append(attr)
        for attr in c["unexpected_deviations"] or []:
            if attr not in agg["unexpected_deviations"]:
                agg["unexpected_deviations"].append(attr)
    suite_report = {
        "budget": cfg.budget,
        "pool_size": len(pool),
        "pool_warnings": warnings,
        "cycles": cycles,
        "per_scenario": per_scenario,
        "selection_counts": _selection_counts(cycles),
    }
    write_json(suite_report, out / "suite_report.json")
    return suite_report


def _selection_counts(cycles: list[dict]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for c in cycles:
        counts[c["experiment_id"]] = counts.get(c["experiment_id"], 0) + 1
    return dict(sorted(counts.items()))


def analyze(trace_path: str | Path, manifest_path: str | Path,
            out_dir: str | Path) -> dict:
    """Recompute the report from an exported trace plus its manifest."""
    manifest = read_json(manifest_path)
    cfg = config_from_manifest(manifest)
    trace = Trace.load(trace_path)
    report = build_report(cfg, trace)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(manifest, out / ARTIFACT_MANIFEST)
    write_json(report, out / ARTIFACT_REPORT)
    write_metrics_csv(cfg, trace, out / ARTIFACT_METRICS)
    if report.get("blast_radius"):
        write_blast_csv(report["blast_radius"], out / "blast_radius.csv")
    write_report_txt(report, out / "report.txt")
    return report
