"""Chaos engine: experiment pool, weighted selection, injection, verification.

Four scenario families cover service kills, erroneous sensor payloads, battery
depletion, and periodic communication delays. Injection only perturbs managed
replicas; every perturbation lands in both the trace and the chaos log.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from .catalog import INJECTABLE_SERVICES, ServiceKind, ServiceSpec
from .kernel import EventKind, Simulator, canonical_json
from .knowledge import KnowledgeBase
from .smartoffice import (
    FAULT_MODE_MIXED,
    FAULT_MODE_REALISTIC,
    FAULT_MODE_UNREALISTIC,
    ManagedSystem,
)


class Scenario(str, Enum):
    SERVICE_DOWN = "service-down"
    SENSOR_FAULT = "sensor-fault"
    SENSOR_DOWN = "sensor-down"
    SERVICE_DELAY = "service-delay"


# Injection level required for each scenario family. Battery depletion may be
# staged at either level: forcing the charge empty is an infrastructure move,
# tampering the drain behavior is a functional one.
INJECTION_LEVELS: dict[Scenario, tuple[str, ...]] = {
    Scenario.SERVICE_DOWN: ("infrastructure",),
    Scenario.SENSOR_FAULT: ("both",),
    Scenario.SENSOR_DOWN: ("infrastructure", "functional"),
    Scenario.SERVICE_DELAY: ("infrastructure",),
}

# Monitoring sources able to observe each scenario family.
MONITORING_SOURCES: dict[Scenario, tuple[str, ...]] = {
    Scenario.SERVICE_DOWN: ("monitoring-tools", "chaos-logs"),
    Scenario.SENSOR_FAULT: ("system-self-monitoring",),
    Scenario.SENSOR_DOWN: ("monitoring-tools", "chaos-logs", "system-self-monitoring"),
    Scenario.SERVICE_DELAY: ("monitoring-tools", "chaos-logs"),
}


@dataclass
class FailureModelParams:
    """Sampling knobs for pool construction: spread, pacing, and outage length."""

    group_sizes: list[int] = field(default_factory=lambda: [1, 2, 3])
    inter_arrival_mean_ms: int = 120_000
    downtime_min_ms: int = 30_000
    downtime_max_ms: int = 180_000
    combos_per_group_size: int = 2
    interval_variants: int = 2

    def sample_downtime(self, rng: random.Random) -> int:
        return rng.randrange(self.downtime_min_ms, self.downtime_max_ms + 1)

    def sample_inter_arrival(self, rng: random.Random) -> int:
        return max(1000, round(rng.expovariate(1.0 / self.inter_arrival_mean_ms)))


@dataclass
class Predicate:
    metric: str
    comparator: str
    bound: float | str
    tolerance: float = 0.0

    def to_dict(self) -> dict:
        return {"metric": self.metric, "comparator": self.comparator,
                "bound": self.bound, "tolerance": self.tolerance}


@dataclass
class SteadyStateHypothesis:
    predicates: list[Predicate]
    window_ms: int = 60_000

    def to_dict(self) -> dict:
        return {"predicates": [p.to_dict() for p in self.predicates],
                "window_ms": self.window_ms}


@dataclass
class ChaosExperiment:
    id: str
    scenario: Scenario
    targets: list[str]
    parameters: dict
    hypothesis: SteadyStateHypothesis
    start_ms: int = 30_000
    duration_ms: int = 60_000
    injection_level: str = "infrastructure"
    monitoring_sources: tuple[str, ...] = ()
    title: str = ""

    def __post_init__(self) -> None:
        if not self.monitoring_sources:
            self.monitoring_sources = MONITORING_SOURCES[self.scenario]
        if not self.title:
            self.title = f"{self.scenario.value} on {','.join(self.targets)}"

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.duration_ms

    def effect_onset_ms(self, kb: "KnowledgeBase | None" = None) -> int:
        """Time by which the induced outage must be visible in snapshots.

        Delays surface only once delayed completions land and push the rolling
        response average over the threshold, so their onset includes both the
        delay itself and that crossing time.
        """
        if self.scenario == Scenario.SERVICE_DELAY:
            delay = self.parameters.get("delay_ms", 0)
            crossing = 0
            if kb is not None and delay > 0:
                crossing = -(-kb.delay_threshold_ms * kb.rolling_window_ms // (delay * 1000))
                crossing *= 1000
            return self.start_ms + delay + crossing + 2000
        if self.scenario == Scenario.SENSOR_DOWN and not self.parameters.get("instant", True):
            return self.start_ms + self.parameters.get("time_to_empty_ms", 0) + 5000
        return self.start_ms + 5000

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "id": self.id,
            "scenario": self.scenario.value,
            "targets": list(self.targets),
            "parameters": dict(self.parameters),
            "steady_state_hypothesis": self.hypothesis.to_dict(),
            "schedule": {"start_ms": self.start_ms, "duration_ms": self.duration_ms},
            "injection_level": self.injection_level,
            "monitoring_sources": list(self.monitoring_sources),
        }


class PoolExhausted(RuntimeError):
    """Selection was asked for an experiment but the pool is empty."""


def default_hypothesis(scenario: Scenario, targets: list[str],
                       kb: KnowledgeBase) -> SteadyStateHypothesis:
    if scenario == Scenario.SERVICE_DOWN:
        return SteadyStateHypothesis([
            Predicate("services.*.healthy_count", ">=", 1),
            Predicate("services.*.status", "!=", "not-functional"),
        ])
    if scenario == Scenario.SENSOR_FAULT:
        return SteadyStateHypothesis([Predicate("system.accepted_false", "==", 0)])
    if scenario == Scenario.SENSOR_DOWN:
        return SteadyStateHypothesis(
            [Predicate(f"services.{t}.status", "!=", "idle") for t in targets])
    return SteadyStateHypothesis(
        [Predicate(f"services.{t}.response_mean_ms", "<=", kb.delay_threshold_ms)
         for t in targets])


def eligible_targets(scenario: Scenario, catalog: dict[str, ServiceSpec]) -> list[str]:
    if scenario in (Scenario.SENSOR_FAULT, Scenario.SENSOR_DOWN):
        return [n for n in INJECTABLE_SERVICES
                if n in catalog and catalog[n].kind == ServiceKind.SENSOR]
    return [n for n in INJECTABLE_SERVICES if n in catalog]


def _scenario_parameters(scenario: Scenario, rng: random.Random,
                         params: FailureModelParams, variant: dict | None = None) -> dict:
    base: dict = dict(variant or {})
    if scenario == Scenario.SERVICE_DOWN:
        base.setdefault("kill_interval_ms", 5000)
    elif scenario == Scenario.SENSOR_FAULT:
        base.setdefault("mode", FAULT_MODE_MIXED)
    elif scenario == Scenario.SENSOR_DOWN:
        base.setdefault("instant", True)
        if not base["instant"]:
            base.setdefault("time_to_empty_ms", 20_000)
    elif scenario == Scenario.SERVICE_DELAY:
        base.setdefault("delay_ms", 20_000)
        base.setdefault("period_ms", 120_000)
    return base


def build_pool(params: FailureModelParams, catalog: dict[str, ServiceSpec],
               kb: KnowledgeBase, rng: random.Random,
               warnings: list[str] | None = None) -> list[ChaosExperiment]:
    """Enumerate the experiment pool: singles, k-combinations, interval repeats."""
    pool: list[ChaosExperiment] = []
    counter = itertools.count()

    def add(scenario: Scenario, targets: list[str], variant: dict | None = None) -> None:
        parameters = _scenario_parameters(scenario, rng, params, variant)
        duration = params.sample_downtime(rng)
        exp = ChaosExperiment(
            id=f"exp-{next(counter):03d}",
            scenario=scenario,
            targets=list(targets),
            parameters=parameters,
            hypothesis=default_hypothesis(scenario, targets, kb),
            duration_ms=duration,
            injection_level=_injection_level_for(scenario, parameters),
        )
        pool.append(exp)

    for scenario in Scenario:
        eligible = eligible_targets(scenario, catalog)
        fault_modes = [FAULT_MODE_REALISTIC, FAULT_MODE_UNREALISTIC, FAULT_MODE_MIXED]
        # (i) single-target experiments, one per eligible service
        for target in eligible:
            if scenario == Scenario.SENSOR_FAULT:
                for mode in fault_modes:
                    add(scenario, [target], {"mode": mode})
            else:
                add(scenario, [target])
        # (ii) k-combination experiments per sampled group size
        for k in params.group_sizes:
            if k <= 1:
                continue
            if k > len(eligible):
                if warnings is not None:
                    warnings.append(
                        f"{scenario.value}: group size {k} exceeds {len(eligible)} eligible targets")
                continue
            combos = list(itertools.combinations(eligible, k))
            for _ in range(min(params.combos_per_group_size, len(combos))):
                combo = combos[rng.randrange(len(combos))]
                add(scenario, list(combo))
        # (iii) interval-varied repeats of the single-target experiments
        for target in eligible:
            for _ in range(params.interval_variants):
                gap = params.sample_inter_arrival(rng)
                variant = {"repeat_gap_ms": gap}
                if scenario == Scenario.SERVICE_DOWN:
                    variant["kill_interval_ms"] = max(1000, gap // 10)
                elif scenario == Scenario.SERVICE_DELAY:
                    variant["period_ms"] = max(30_000, gap)
                add(scenario, [target], variant)
    return pool


def _injection_level_for(scenario: Scenario, parameters: dict) -> str:
    levels = INJECTION_LEVELS[scenario]
    if scenario == Scenario.SENSOR_DOWN:
        return "infrastructure" if parameters.get("instant", True) else "functional"
    return levels[0]


def uniform_weights(pool: list[ChaosExperiment]) -> dict[str, float]:
    if not pool:
        return {}
    w = 1.0 / len(pool)
    return {exp.id: w for exp in pool}


def select_next(pool: list[ChaosExperiment], weights: dict[str, float],
                rng: random.Random) -> ChaosExperiment:
    if not pool:
        raise PoolExhausted("chaos experiment pool is empty")
    total = sum(weights.get(exp.id, 1.0) for exp in pool)
    pick = rng.random() * total
    acc = 0.0
    for exp in pool:
        acc += weights.get(exp.id, 1.0)
        if pick < acc:
            return exp
    return pool[-1]


def apply_feedback(weights: dict[str, float], failed_experiment_id: str | None,
                   boost: float = 1.5) -> dict[str, float]:
    """Boost experiments that exposed hypothesis failures, then renormalize."""
    updated = dict(weights)
    if failed_experiment_id is not None and failed_experiment_id in updated:
        updated[failed_experiment_id] *= boost
    total = sum(updated.values())
    if total > 0:
        updated = {k: v / total for k, v in updated.items()}
    return updated


# -- injection ------------------------------------------------------------------


class ChaosLog:
    """One entry per injected perturbation, mirrored 1:1 by trace records."""

    def __init__(self) -> None:
        self.entries: list[dict] = []

    def append(self, entry: dict) -> None:
        self.entries.append(entry)

    def write(self, path: str | Path) -> None:
        lines = [canonical_json(e) for e in self.entries]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


class ChaosInjector:
    """Schedules an experiment's perturbations and its end-of-run rollback."""

    def __init__(self, sim: Simulator, office: ManagedSystem, log: ChaosLog) -> None:
        self.sim = sim
        self.office = office
        self.log = log

    def _record(self, experiment: ChaosExperiment, target: str, action: str, detail: dict) -> None:
        at = self.sim.clock.now
        entry = {"at": at, "experiment": experiment.id, "scenario": experiment.scenario.value,
                 "target": target, "action": action, "detail": detail}
        self.log.append(entry)
        self.sim.trace.append(at, "injection", experiment.id, target,
                              {"scenario": experiment.scenario.value, "action": action,
                               "detail": detail})

    def inject(self, experiment: ChaosExperiment) -> None:
        missing = [t for t in experiment.targets if t not in self.office.catalog]
        if missing:
            self.sim.trace.append(self.sim.clock.now, "injection-aborted", experiment.id,
                                  ",".join(missing), {"reason": "target-absent"})
            return
        for target in experiment.targets:
            if experiment.scenario == Scenario.SERVICE_DOWN:
                self._schedule_kills(experiment, target)
            elif experiment.scenario == Scenario.SENSOR_FAULT:
                self._schedule_fault_mode(experiment, target)
            elif experiment.scenario == Scenario.SENSOR_DOWN:
                self._schedule_battery(experiment, target)
            elif experiment.scenario == Scenario.SERVICE_DELAY:
                self._schedule_delay(experiment, target)
        self.sim.schedule(experiment.end_ms, EventKind.INJECTION, "chaos",
                          {"action": "rollback"},
                          lambda sim, ev, e=experiment: self._rollback(e))

    def _schedule_kills(self, experiment: ChaosExperiment, target: str) -> None:
        interval = experiment.parameters.get("kill_interval_ms", 5000)
        at = experiment.start_ms
        while at < experiment.end_ms:
            self.sim.schedule(at, EventKind.INJECTION, target, {"action": "kill-pods"},
                              lambda sim, ev, e=experiment, t=target: self._kill_pods(e, t))
            at += interval

    def _kill_pods(self, experiment: ChaosExperiment, target: str) -> None:
        killed = self.office.terminate_replicas(target, reason=f"chaos:{experiment.id}",
                                                abrupt=True)
        self._record(experiment, target, "pods-killed", {"count": killed})

    def _schedule_fault_mode(self, experiment: ChaosExperiment, target: str) -> None:
        mode = experiment.parameters.get("mode", FAULT_MODE_MIXED)
        self.sim.schedule(
            experiment.start_ms, EventKind.INJECTION, target, {"action": "set-fault-mode"},
            lambda sim, ev, e=experiment, t=target, m=mode: self._set_fault_mode(e, t, m))

    def _set_fault_mode(self, experiment: ChaosExperiment, target: str, mode: str) -> None:
        replicas = self.office.set_fault_mode(target, mode)
        self._record(experiment, target, "fault-mode-set", {"mode": mode, "replicas": replicas})

    def _schedule_battery(self, experiment: ChaosExperiment, target: str) -> None:
        self.sim.schedule(
            experiment.start_ms, EventKind.INJECTION, target, {"action": "drain-battery"},
            lambda sim, ev, e=experiment, t=target: self._drain_battery(e, t))

    def _drain_battery(self, experiment: ChaosExperiment, target: str) -> None:
        if experiment.parameters.get("instant", True):
            self.office.set_battery(target, 0.0)
            self._record(experiment, target, "battery-set", {"battery_pct": 0.0})
        else:
            window = max(1, experiment.parameters.get("time_to_empty_ms", 20_000))
            unit = self.office.services[target].sensor_unit
            current = unit.battery_pct if unit is not None else 100.0
            rate = current * 60_000.0 / window
            self.office.set_drain_rate(target, rate)
            self._record(experiment, target, "drain-rate-set",
                         {"pct_per_min": round(rate, 3), "time_to_empty_ms": window})

    def _schedule_delay(self, experiment: ChaosExperiment, target: str) -> None:
        self.sim.schedule(
            experiment.start_ms, EventKind.INJECTION, target, {"action": "set-delay"},
            lambda sim, ev, e=experiment, t=target: self._set_delay(e, t))

    def _set_delay(self, experiment: ChaosExperiment, target: str) -> None:
        delay = experiment.parameters.get("delay_ms", 20_000)
        period = experiment.parameters.get("period_ms", 120_000)
        replicas = self.office.set_injected_delay(target, delay, period)
        self._record(experiment, target, "delay-set",
                     {"delay_ms": delay, "period_ms": period, "replicas": replicas})

    def _rollback(self, experiment: ChaosExperiment) -> None:
        """Post-experiment restore, the platform-side rollback (not self-healing)."""
        for target in experiment.targets:
            runtime = self.office.services[target]
            self.office.clear_injections(target)
            if experiment.scenario == Scenario.SENSOR_DOWN:
                self.office.set_drain_rate(target, 0.0)
                self.office.set_battery(target, 100.0)
            restored = 0
            while len(runtime.live_replicas()) < runtime.spec.replica_policy.min_replicas:
                self.office.deploy_replica(target, reason=f"chaos-rollback:{experiment.id}")
                restored += 1
            self._record(experiment, target, "rollback-restore", {"replicas_deployed": restored})


# -- hypothesis verification -------------------------------------------------------


class HypothesisConfigError(ValueError):
    """A predicate references a metric the snapshot does not expose."""


def _resolve_metric(snapshot: dict, metric: str) -> list[tuple[str, object]]:
    parts = metric.split(".")
    if parts[0] == "system":
        if len(parts) != 2 or parts[1] not in snapshot["system"]:
            raise HypothesisConfigError(f"unknown system metric: {metric}")
        return [(metric, snapshot["system"][parts[1]])]
    if parts[0] == "services":
        if len(parts) != 3:
            raise HypothesisConfigError(f"malformed service metric: {metric}")
        _, service, fieldname = parts
        names = sorted(snapshot["services"]) if service == "*" else [service]
        out = []
        for name in names:
            svc = snapshot["services"].get(name)
            if svc is None or fieldname not in svc:
                raise HypothesisConfigError(f"unknown service metric: {metric} ({name})")
            out.append((f"services.{name}.{fieldname}", svc[fieldname]))
        return out
    raise HypothesisConfigError(f"unknown metric namespace: {metric}")


def _compare(observed: object, comparator: str, bound: object, tolerance: float) -> bool:
    if observed is None:
        return True  # metric has no samples in this window; vacuously healthy
    if comparator == "==":
        if isinstance(observed, (int, float)) and isinstance(bound, (int, float)):
            return abs(observed - bound) <= tolerance
        return observed == bound
    if comparator == "!=":
        return observed != bound
    if comparator == "<=":
        return observed <= bound + tolerance
    if comparator == ">=":
        return observed >= bound - tolerance
    if comparator == "<":
        return observed < bound
    if comparator == ">":
        return observed > bound
    raise HypothesisConfigError(f"unknown comparator: {comparator}")


def verify_hypothesis(hypothesis: SteadyStateHypothesis, snapshot: dict) -> dict:
    """Evaluate all predicates on one snapshot; failures list observed vs bound."""
    deviations = []
    for predicate in hypothesis.predicates:
        for qualified, observed in _resolve_metric(snapshot, predicate.metric):
            if not _compare(observed, predicate.comparator, predicate.bound, predicate.tolerance):
                deviations.append({
                    "metric": qualified,
                    "comparator": predicate.comparator,
                    "bound": predicate.bound,
                    "observed": observed,
                })
    return {"passed": not deviations, "deviations": deviations}


# -- experiment documents ------------------------------------------------------------


def experiment_to_document(experiment: ChaosExperiment) -> str:
    return yaml.safe_dump(experiment.to_dict(), sort_keys=True)


def experiment_from_document(text: str, kb: KnowledgeBase) -> ChaosExperiment:
    raw = yaml.safe_load(text)
    scenario = Scenario(raw["scenario"])
    hyp_raw = raw.get("steady_state_hypothesis")
    if hyp_raw:
        hypothesis = SteadyStateHypothesis(
            predicates=[Predicate(p["metric"], p["comparator"], p["bound"],
                                  p.get("tolerance", 0.0))
                        for p in hyp_raw["predicates"]],
            window_ms=hyp_raw.get("window_ms", 60_000),
        )
    else:
        hypothesis = default_hypothesis(scenario, raw["targets"], kb)
    schedule = raw.get("schedule", {})
    exp = ChaosExperiment(
        id=raw.get("id", "exp-doc"),
        scenario=scenario,
        targets=list(raw["targets"]),
        parameters=dict(raw.get("parameters", {})),
        hypothesis=hypothesis,
        start_ms=schedule.get("start_ms", 30_000),
        duration_ms=schedule.get("duration_ms", 60_000),
        injection_level=raw.get("injection_level",
                                _injection_level_for(scenario, raw.get("parameters", {}))),
        title=raw.get("title", ""),
    )
    return exp


def canonical_experiment(scenario: Scenario, kb: KnowledgeBase,
                         target: str | None = None, **overrides) -> ChaosExperiment:
    """The representative experiment used for single-cycle runs of each scenario."""
    if scenario == Scenario.SERVICE_DOWN:
        target = target or "heating-control"
        params = {"kill_interval_ms": 2000}
        duration = 60_000
    elif scenario == Scenario.SENSOR_FAULT:
        target = target or "temperature-sensor"
        params = {"mode": overrides.pop("mode", FAULT_MODE_MIXED)}
        duration = 60_000
    elif scenario == Scenario.SENSOR_DOWN:
        target = target or "temperature-sensor"
        params = {"instant": True}
        duration = 60_000
    else:
        target = target or "light-control"
        params = {"delay_ms": 20_000, "period_ms": 60_000}
        duration = 180_000
    params.update(overrides.pop("parameters", {}))
    exp = ChaosExperiment(
        id=f"canonical-{scenario.value}",
        scenario=scenario,
        targets=[target],
        parameters=params,
        hypothesis=default_hypothesis(scenario, [target], kb),
        duration_ms=overrides.pop("duration_ms", duration),
        start_ms=overrides.pop("start_ms", 30_000),
        injection_level=_injection_level_for(scenario, params),
    )
    return exp
