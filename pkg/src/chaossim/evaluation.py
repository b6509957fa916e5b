"""Post-hoc trace analysis: snapshots, quality metrics, blast radius, comparisons.

Everything here is a pure function of the exported trace plus configuration, so
reports can be recomputed offline from a trace file and must come out identical.
Ground-truth values recorded by the injector are used only on this side, never
by the managing system.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .catalog import (
    PUBLIC_SERVICES,
    ServiceKind,
    ServiceSpec,
    UserPreferences,
    reachable_from,
)
from .chaos import ChaosExperiment, Scenario, SteadyStateHypothesis, verify_hypothesis
from .kernel import Trace
from .knowledge import ACCEPTED, KnowledgeBase
from .smartoffice import (
    STATUS_DEGRADED,
    STATUS_FUNCTIONAL,
    STATUS_IDLE,
    STATUS_NOT_FUNCTIONAL,
    heating_command,
    light_command,
)

IMPACT_NONE = "none"
IMPACT_LOW = "low"
IMPACT_MEDIUM = "medium"
IMPACT_HIGH = "high"
IMPACT_PRIMARY = "primary"

ABNORMAL_UNAVAILABLE = "unavailable"
ABNORMAL_LESS_RESPONSIVE = "less-responsive"
ABNORMAL_DELAYED = "delayed"
ABNORMAL_FAULTY = "faulty"
ABNORMAL_IDLE = "idle"

# Quality attributes each scenario family is expected to disturb.
ATTRIBUTE_CHECKS: dict[str, tuple[str, ...]] = {
    Scenario.SERVICE_DOWN.value: ("availability", "reliability", "performance"),
    Scenario.SENSOR_FAULT.value: ("reliability", "integrity"),
    Scenario.SENSOR_DOWN.value: ("availability", "reliability", "integrity"),
    Scenario.SERVICE_DELAY.value: ("availability", "performance"),
}


@dataclass
class Reading:
    at: int
    service: str
    topic: str
    value: float | str
    true_value: float | str
    battery: float | None


@dataclass
class TraceIndex:
    """Trace records reorganized into per-service timelines and event lists."""

    status_timeline: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    display_timeline: dict[str, list[tuple[int, list[str]]]] = field(default_factory=dict)
    healthy_timeline: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    starting_timeline: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    replica_service: dict[str, str] = field(default_factory=dict)
    replica_deploy_reason: dict[str, str] = field(default_factory=dict)
    replica_healthy_at: dict[str, int] = field(default_factory=dict)
    outputs: dict[str, list[int]] = field(default_factory=dict)
    topic_publishes: dict[str, list[int]] = field(default_factory=dict)
    readings: dict[int, Reading] = field(default_factory=dict)
    readings_by_service: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    validations: list[tuple[int, str, str, str, int]] = field(default_factory=list)
    validations_by_sensor: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    commands: dict[str, list[tuple[int, dict]]] = field(default_factory=dict)
    responses: dict[str, list[tuple[int, int, int, bool, str]]] = field(default_factory=dict)
    request_failures: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    deliveries: dict[str, list[tuple[int, int, str]]] = field(default_factory=dict)
    injections: list[tuple[int, str, str, dict]] = field(default_factory=list)
    detections: list[dict] = field(default_factory=list)
    recoveries: list[dict] = field(default_factory=list)
    end_at: int = 0


def value_at(timeline: list[tuple[int, object]], at: int, default: object = None) -> object:
    """Last timeline value recorded at or before `at`."""
    lo, hi = 0, len(timeline)
    while lo < hi:
        mid = (lo + hi) // 2
        if timeline[mid][0] <= at:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return default
    return timeline[lo - 1][1]


def build_index(trace: Trace, catalog: dict[str, ServiceSpec]) -> TraceIndex:
    idx = TraceIndex()
    for name in catalog:
        idx.status_timeline[name] = []
        idx.display_timeline[name] = []
        idx.healthy_timeline[name] = []
        idx.starting_timeline[name] = []
        idx.outputs[name] = []
        idx.commands[name] = []
        idx.responses[name] = []
        idx.deliveries[name] = []
    idx.request_failures = {name: [] for name in catalog}
    healthy: dict[str, int] = {name: 0 for name in catalog}
    starting: dict[str, int] = {name: 0 for name in catalog}
    replica_state: dict[str, str] = {}
    sensor_topics = {t for s in catalog.values() if s.kind in (ServiceKind.SENSOR, ServiceKind.EXTERNAL)
                    for t in s.publishes}
    control_names = {n for n, s in catalog.items() if s.kind == ServiceKind.CONTROL}

    for rec in trace:
        idx.end_at = max(idx.end_at, rec.at)
        kind = rec.kind
        if kind == "state":
            scope = rec.data.get("scope")
            if scope == "replica":
                rid = rec.data["replica"]
                service = rec.source
                idx.replica_service[rid] = service
                prev = replica_state.get(rid)
                new = rec.data["state"]
                replica_state[rid] = new
                if prev == "healthy":
                    healthy[service] -= 1
                elif prev == "starting":
                    starting[service] -= 1
                if new == "healthy":
                    healthy[service] += 1
                    idx.replica_healthy_at.setdefault(rid, rec.at)
                elif new == "starting":
                    starting[service] += 1
                if new == "starting" or (new == "healthy" and prev is None):
                    idx.replica_deploy_reason[rid] = rec.data.get("reason", "")
                idx.healthy_timeline[service].append((rec.at, healthy[service]))
                idx.starting_timeline[service].append((rec.at, starting[service]))
            elif scope == "service":
                service = rec.data["service"]
                idx.status_timeline[service].append((rec.at, rec.data["status"]))
                if "display_missing" in rec.data:
                    idx.display_timeline[service].append((rec.at, rec.data["display_missing"]))
        elif kind == "publish":
            service = idx.replica_service.get(rec.source, rec.source)
            idx.outputs.setdefault(service, []).append(rec.at)
            topic = rec.data["topic"]
            idx.topic_publishes.setdefault(topic, []).append(rec.at)
            payload = rec.data.get("payload", {})
            if topic in sensor_topics:
                mid = rec.data["message_id"]
                idx.readings[mid] = Reading(
                    at=rec.at,
                    service=service,
                    topic=topic,
                    value=payload.get("value", payload.get("condition")),
                    true_value=rec.data.get("true_value",
                                            payload.get("value", payload.get("condition"))),
                    battery=payload.get("battery"),
                )
                idx.readings_by_service.setdefault(service, []).append((rec.at, mid))
            if service in control_names:
                idx.commands[service].append((rec.at, payload))
        elif kind == "validation":
            idx.validations.append((rec.at, rec.source, rec.target,
                                    rec.data["result"], rec.data["message_id"]))
            idx.validations_by_sensor.setdefault(rec.target, []).append(
                (rec.at, rec.data["result"]))
        elif kind == "response":
            service = rec.target
            idx.responses[service].append(
                (rec.at, rec.data["latency_ms"], rec.data["sent_at"],
                 bool(rec.data.get("probe")), rec.source))
        elif kind == "request-failed":
            service = rec.target
            idx.request_failures.setdefault(service, []).append(
                (rec.at, rec.data.get("reason", "")))
        elif kind == "delivery":
            service = idx.replica_service.get(rec.target)
            if service is not None:
                idx.deliveries[service].append(
                    (rec.at, rec.data["published_at"], rec.data["topic"]))
        elif kind == "injection":
            idx.injections.append((rec.at, rec.target, rec.data["action"], rec.data))
        elif kind == "detection":
            idx.detections.append({"at": rec.at, "service": rec.target,
                                   "fault_id": rec.data["fault_id"],
                                   "fault_kind": rec.data["fault_kind"],
                                   "evidence": rec.data["evidence"]})
        elif kind == "recovery":
            idx.recoveries.append({"at": rec.at, "target": rec.target,
                                   "action": rec.data["action"],
                                   "fault_id": rec.data["fault_id"],
                                   "detail": {k: v for k, v in rec.data.items()
                                              if k not in ("action", "fault_id")}})
    return idx


class Evaluator:
    """Snapshotting, metrics, impact classification, and comparisons over one trace."""

    def __init__(self, trace: Trace, catalog: dict[str, ServiceSpec],
                 prefs: UserPreferences, kb: KnowledgeBase,
                 impact_window_ms: int = 8000, base_deliver_delay: int = 10) -> None:
        self.trace = trace
        self.catalog = catalog
        self.prefs = prefs
        self.kb = kb
        self.impact_window_ms = impact_window_ms
        self.base_deliver_delay = base_deliver_delay
        self.index = build_index(trace, catalog)

    # -- snapshots -------------------------------------------------------------

    def capture(self, at: int, phase: str, window_ms: int | None = None) -> dict:
        """Phase-tagged state snapshot; a pure function of (trace, at, phase)."""
        if at < 0:
            raise ValueError("snapshot window precedes trace start")
        window = window_ms or self.kb.rolling_window_ms
        lo = max(0, at - window)
        idx = self.index
        services: dict[str, dict] = {}
        for name, spec in self.catalog.items():
            latencies = [l for (done, l, sent, probe, rid) in idx.responses[name]
                         if lo <= done <= at]
            stats = latency_stats(latencies)
            accepted = rejected = 0
            for (v_at, result) in idx.validations_by_sensor.get(name, []):
                if lo <= v_at <= at:
                    if result == ACCEPTED:
                        accepted += 1
                    else:
                        rejected += 1
            staleness = {}
            for ri in spec.required_inputs:
                pubs = idx.topic_publishes.get(ri.topic, [])
                pos = bisect.bisect_right(pubs, at)
                staleness[ri.topic] = at - pubs[pos - 1] if pos else at
            battery = None
            last_reading = None
            service_readings = idx.readings_by_service.get(name, [])
            pos = bisect.bisect_right(service_readings, (at, float("inf")))
            if pos:
                last = idx.readings[service_readings[pos - 1][1]]
                battery = last.battery
                last_reading = last.value
            failures = [t for (t, _r) in idx.request_failures.get(name, []) if lo <= t <= at]
            entry = {
                "healthy_count": value_at(idx.healthy_timeline[name], at, 0),
                "starting_count": value_at(idx.starting_timeline[name], at, 0),
                "status": value_at(idx.status_timeline[name], at, STATUS_FUNCTIONAL),
                "input_staleness": staleness,
                "response_mean_ms": stats["mean"],
                "response_s10_ms": stats["slowest10_mean"],
                "response_s1_ms": stats["slowest1_mean"],
                "response_count": stats["count"],
                "request_failures": len(failures),
                "validation_accepted": accepted,
                "validation_rejected": rejected,
                "battery_pct": battery,
                "last_reading": last_reading,
            }
            if spec.kind == ServiceKind.UI:
                entry["display_missing"] = list(
                    value_at(idx.display_timeline[name], at, []))
            services[name] = entry
        accepted_false, accepted_total, rejected_total = self._validation_truth(lo, at)
        broker_ok = value_at(idx.healthy_timeline["mqtt-broker"], at, 0) > 0
        return {
            "at": at,
            "phase": phase,
            "services": services,
            "system": {
                "broker_healthy": broker_ok,
                "accepted_false": accepted_false,
                "accepted": accepted_total,
                "rejected": rejected_total,
            },
        }

    def _validation_truth(self, lo: int, hi: int) -> tuple[int, int, int]:
        accepted_false = accepted = rejected = 0
        for (at, control, sensor, result, mid) in self.index.validations:
            if not (lo <= at <= hi):
                continue
            if result == ACCEPTED:
                accepted += 1
                reading = self.index.readings.get(mid)
                if reading is not None and _values_differ(reading.value, reading.true_value):
                    accepted_false += 1
            else:
                rejected += 1
        return accepted_false, accepted, rejected

    # -- quality metrics ----------------------------------------------------------

    def compute_metrics(self, window: tuple[int, int], aggregate: str = "min") -> dict:
        """Availability, reliability, integrity, performance over [a, b)."""
        a, b = window
        if b <= a:
            raise ValueError("metrics window must be non-empty")
        idx = self.index
        availability: dict[str, float] = {}
        for name in self.catalog:
            availability[name] = self._availability_fraction(name, a, b)
        agg = min(availability.values()) if aggregate == "min" else (
            sum(availability.values()) / len(availability))
        reliability = self._reliability(a, b)
        accepted_false, accepted, _ = self._validation_truth(a, b - 1)
        integrity = 1.0 if accepted == 0 else 1.0 - accepted_false / accepted
        latencies = []
        for name in self.catalog:
            latencies.extend(l for (done, l, sent, probe, rid) in idx.responses[name]
                             if a <= done < b)
        perf = latency_stats(latencies)
        return {
            "availability": {"aggregate": agg, "per_service": availability},
            "reliability": reliability,
            "integrity": integrity,
            "performance": perf,
        }

    def _availability_fraction(self, service: str, a: int, b: int) -> float:
        """Per-second availability: a healthy replica exists and probes answer in time."""
        idx = self.index
        threshold = self.kb.delay_threshold_ms
        total = max(1, (b - a) // 1000)
        bad = set()
        for sec in range(total):
            t = a + sec * 1000
            if value_at(idx.healthy_timeline[service], t, 0) <= 0:
                bad.add(sec)
        for (at, reason) in idx.request_failures.get(service, []):
            if a <= at < b:
                bad.add((at - a) // 1000)
        for (done, latency, sent, probe, rid) in idx.responses[service]:
            if latency > threshold and sent < b and done >= a:
                first = max(0, (sent - a) // 1000)
                last = min(total - 1, (done - a) // 1000)
                for sec in range(first, last + 1):
                    bad.add(sec)
        return (total - len(bad)) / total

    def _reliability(self, a: int, b: int) -> float:
        """Fraction of emitted control commands matching the rules on true inputs."""
        consistent = 0
        total = 0
        for name, spec in self.catalog.items():
            if spec.kind != ServiceKind.CONTROL:
                continue
            cmds = [(at, p) for (at, p) in self.index.commands[name] if a <= at < b]
            if not cmds:
                continue
            if name == "heating-control":
                expected_prev = None
                for at, payload in cmds:
                    basis = payload.get("basis", {})
                    reading = self.index.readings.get(basis.get("reading_id"))
                    if reading is None:
                        continue
                    total += 1
                    prev = expected_prev if expected_prev is not None else basis.get("previous", "off")
                    expected = heating_command(reading.true_value, self.prefs, prev)
                    if expected == payload.get("state"):
                        consistent += 1
                    expected_prev = expected
            else:
                motion_truth = sorted(
                    r.at for r in self.index.readings.values()
                    if r.topic.endswith("motion") and r.true_value == 1.0)
                for at, payload in cmds:
                    basis = payload.get("basis", {})
                    total += 1
                    true_age = None
                    pos = bisect.bisect_right(motion_truth, at - self.base_deliver_delay)
                    if pos:
                        true_age = at - motion_truth[pos - 1]
                    expected = light_command(
                        basis.get("band", "day"), self.prefs,
                        bool(basis.get("motion_fresh")),
                        true_age,
                        basis.get("condition") if basis.get("weather_fresh") else None)
                    if expected == payload.get("state"):
                        consistent += 1
        return 1.0 if total == 0 else consistent / total

    # -- impact classification ---------------------------------------------------

    def classify_impact(self, injected: str, observed: str,
                        window: tuple[int, int]) -> str:
        """Impact level of `observed` in one window, from its prevailing final state."""
        if injected not in self.catalog or observed not in self.catalog:
            raise ValueError("both services must be in the catalog")
        t_probe = window[1] - 1
        status = value_at(self.index.status_timeline[observed], t_probe, STATUS_FUNCTIONAL)
        if status in (STATUS_NOT_FUNCTIONAL, STATUS_IDLE):
            return IMPACT_HIGH
        if status == STATUS_DEGRADED:
            return IMPACT_MEDIUM
        if self.catalog[observed].kind == ServiceKind.UI:
            missing = value_at(self.index.display_timeline[observed], t_probe, [])
            if missing:
                return IMPACT_LOW
        return IMPACT_NONE

    def blast_radius(self, experiment: ChaosExperiment,
                     columns: list[str] | None = None) -> dict:
        """Per-window impact row(s) for the experiment's targets."""
        cols = columns or [c for c in PUBLIC_SERVICES if c in self.catalog]
        n_windows = max(1, experiment.duration_ms // self.impact_window_ms)
        rows = {}
        for target in experiment.targets:
            cells = []
            for k in range(n_windows):
                w = (experiment.start_ms + k * self.impact_window_ms,
                     experiment.start_ms + (k + 1) * self.impact_window_ms)
                cell = {}
                for observed in cols:
                    if observed == target:
                        cell[observed] = IMPACT_PRIMARY
                    else:
                        cell[observed] = self.classify_impact(target, observed, w)
                cells.append(cell)
            rows[target] = cells
        return {"columns": cols, "window_ms": self.impact_window_ms,
                "start_ms": experiment.start_ms, "rows": rows}

    # -- cycle comparison -----------------------------------------------------------

    def compare(self, snapshots: list[dict], hypothesis: SteadyStateHypothesis,
                phase_windows: dict[str, tuple[int, int]],
                experiment: ChaosExperiment | None) -> dict:
        """Before/during/after deltas, hypothesis verdicts, attribute deviations."""
        verdicts: dict[str, dict] = {}
        for phase in ("before", "during", "after"):
            phase_snaps = [s for s in snapshots if s["phase"] == phase]
            results = [verify_hypothesis(hypothesis, s) for s in phase_snaps]
            failures = [
                {"at": s["at"], "deviations": r["deviations"]}
                for s, r in zip(phase_snaps, results) if not r["passed"]
            ]
            verdicts[phase] = {
                "snapshots": len(phase_snaps),
                "passed": bool(phase_snaps) and not failures,
                "failed_snapshots": len(failures),
                "failures": failures[:5],
            }
        metrics = {}
        for phase, window in phase_windows.items():
            if window[1] > window[0]:
                metrics[phase] = self.compute_metrics(window)
        deltas = {}
        deviations = []
        if "before" in metrics:
            for phase in ("during", "after"):
                if phase not in metrics:
                    continue
                deltas[phase] = metric_deltas(metrics["before"], metrics[phase])
            if "during" in metrics:
                deviations = deviating_attributes(metrics["before"], metrics["during"])
        expected = list(ATTRIBUTE_CHECKS.get(experiment.scenario.value, ())) if experiment else []
        unexpected = [d for d in deviations if d not in expected]
        requirements = []
        after_snaps = [s for s in snapshots if s["phase"] == "after"]
        final = after_snaps[-1] if after_snaps else (snapshots[-1] if snapshots else None)
        if final is not None:
            for predicate in hypothesis.predicates:
                single = SteadyStateHypothesis([predicate], hypothesis.window_ms)
                result = verify_hypothesis(single, final)
                requirements.append({
                    "metric": predicate.metric,
                    "comparator": predicate.comparator,
                    "bound": predicate.bound,
                    "compliant": result["passed"],
                })
        return {
            "verdicts": verdicts,
            "metrics": metrics,
            "deltas": deltas,
            "attribute_deviations": deviations,
            "expected_attributes": expected,
            "unexpected_deviations": unexpected,
            "requirements": requirements,
        }

    # -- cross-service state effects ----------------------------------------------

    def cross_service_state_effects(self, experiment: ChaosExperiment,
                                    until: int | None = None) -> dict:
        """Abnormal states reached by every non-target service during/after injection."""
        a = experiment.start_ms
        b = until if until is not None else self.index.end_at
        idx = self.index
        report: dict[str, dict] = {}
        faulty_services = self._faulty_services(a, b)
        for name, spec in self.catalog.items():
            if name in experiment.targets:
                continue
            states: list[str] = []
            if any(count == 0 for (t, count) in idx.healthy_timeline[name] if a <= t <= b):
                states.append(ABNORMAL_UNAVAILABLE)
            base = spec.replica_policy.service_time_ms
            if any(l > 2 * base + 100 for (done, l, sent, probe, rid) in idx.responses[name]
                   if a <= done <= b):
                states.append(ABNORMAL_LESS_RESPONSIVE)
            grace = self.base_deliver_delay + 1000
            if any(at - published > grace for (at, published, topic) in idx.deliveries[name]
                   if a <= at <= b):
                states.append(ABNORMAL_DELAYED)
            if name in faulty_services:
                states.append(ABNORMAL_FAULTY)
            intervals = self.idle_intervals(name, a, b)
            if intervals:
                states.append(ABNORMAL_IDLE)
            report[name] = {
                "states": states,
                "idle_intervals": intervals,
                "idle_bounded": all(end is not None for (_s, end) in intervals),
            }
        return report

    def _faulty_services(self, a: int, b: int) -> set[str]:
        faulty = set()
        for name, spec in self.catalog.items():
            if spec.kind != ServiceKind.CONTROL:
                continue
            cmds = [(at, p) for (at, p) in self.index.commands[name] if a <= at <= b]
            if not cmds:
                continue
            if name == "heating-control":
                expected_prev = None
                for at, payload in cmds:
                    basis = payload.get("basis", {})
                    reading = self.index.readings.get(basis.get("reading_id"))
                    if reading is None:
                        continue
                    prev = expected_prev if expected_prev is not None else basis.get("previous", "off")
                    expected = heating_command(reading.true_value, self.prefs, prev)
                    if expected != payload.get("state"):
                        faulty.add(name)
                    expected_prev = expected
            else:
                motion_truth = sorted(
                    r.at for r in self.index.readings.values()
                    if r.topic.endswith("motion") and r.true_value == 1.0)
                for at, payload in cmds:
                    basis = payload.get("basis", {})
                    true_age = None
                    pos = bisect.bisect_right(motion_truth, at - self.base_deliver_delay)
                    if pos:
                        true_age = at - motion_truth[pos - 1]
                    expected = light_command(
                        basis.get("band", "day"), self.prefs,
                        bool(basis.get("motion_fresh")), true_age,
                        basis.get("condition") if basis.get("weather_fresh") else None)
                    if expected != payload.get("state"):
                        faulty.add(name)
        return faulty

    def idle_intervals(self, service: str, a: int, b: int) -> list[tuple[int, int | None]]:
        """Output silences longer than three nominal periods, while replicas run."""
        spec = self.catalog[service]
        if spec.kind in (ServiceKind.UI, ServiceKind.BROKER, ServiceKind.MANAGING,
                         ServiceKind.MONITORING):
            return []
        period = spec.period_ms if spec.period_ms > 0 else spec.tick_ms
        threshold = 3 * period
        outputs = self.index.outputs.get(service, [])
        intervals: list[tuple[int, int | None]] = []
        marks = [t for t in outputs if t >= a - threshold] + [None]
        prev = max((t for t in outputs if t < a - threshold), default=0)
        prev = max(prev, 0)
        last = prev
        for t in marks:
            gap_end = t if t is not None else b
            if gap_end - last > threshold:
                start = last + threshold
                if start < b and gap_end > a:
                    healthy = value_at(self.index.healthy_timeline[service],
                                       min(start, b - 1), 0)
                    if healthy > 0:
                        intervals.append((max(start, a),
                                          gap_end if t is not None else None))
            if t is not None:
                last = t
        # Explicit idle status intervals (battery-dead sensors).
        timeline = self.index.status_timeline[service]
        for i, (t, status) in enumerate(timeline):
            if status == STATUS_IDLE and t <= b:
                end = None
                for (t2, s2) in timeline[i + 1:]:
                    if s2 != STATUS_IDLE:
                        end = t2
                        break
                if end is None or end >= a:
                    intervals.append((max(t, a), end))
        return sorted(set(intervals))

    # -- recovery timing -----------------------------------------------------------

    def mttr_report(self) -> list[dict]:
        """Time from fault injection to restoration, per recovered fault."""
        idx = self.index
        out = []
        for det in idx.detections:
            actions = [r for r in idx.recoveries if r["fault_id"] == det["fault_id"]]
            entry = {
                "fault_id": det["fault_id"],
                "fault_kind": det["fault_kind"],
                "service": det["service"],
                "detected_at": det["at"],
                "recovered": False,
            }
            if actions:
                first_action = min(a["at"] for a in actions)
                entry["first_action_at"] = first_action
                restored = self._restoration_at(det, first_action)
                if restored is not None:
                    inj_times = [t for (t, target, action, data) in idx.injections
                                 if target == det["service"] and t <= restored
                                 and action != "rollback-restore"]
                    anchor = max(inj_times) if inj_times else det["at"]
                    entry.update(recovered=True, restored_at=restored,
                                 injection_anchor_at=anchor, mttr_ms=restored - anchor)
            out.append(entry)
        return out

    def _restoration_at(self, detection: dict, action_at: int) -> int | None:
        idx = self.index
        service = detection["service"]
        kind = detection["fault_kind"]
        fault_id = detection["fault_id"]
        recovery_replicas = {rid for rid, reason in idx.replica_deploy_reason.items()
                             if reason == f"recovery:{fault_id}"}
        if kind == "crash":
            times = [t for rid, t in idx.replica_healthy_at.items()
                     if rid in recovery_replicas and t >= action_at]
            return min(times) if times else None
        if kind == "battery-drain":
            candidates = [r.at for r in idx.readings.values()
                          if r.service == service and r.at >= action_at
                          and r.battery is not None and r.battery > self.kb.battery_alarm_pct]
            return min(candidates) if candidates else None
        if kind == "erroneous-data":
            for (at, control, sensor, result, mid) in idx.validations:
                if sensor == service and at >= action_at and result == ACCEPTED:
                    reading = idx.readings.get(mid)
                    if reading is not None and not _values_differ(reading.value, reading.true_value):
                        return at
            return None
        if kind == "delay":
            candidates = [done for (done, l, sent, probe, rid) in idx.responses[service]
                          if rid in recovery_replicas and done >= action_at
                          and l <= self.kb.delay_threshold_ms]
            return min(candidates) if candidates else None
        return None

    def mttr_bound_ms(self, fault_kind: str, service: str) -> int:
        spec = self.catalog[service]
        period = spec.period_ms if spec.period_ms > 0 else spec.tick_ms
        return (self.kb.detection_window_ms.get(fault_kind, 10_000)
                + spec.startup_latency_ms + period)


def _values_differ(a: object, b: object) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b) > 1e-6
    return a != b


def latency_stats(latencies: list[int]) -> dict:
    n = len(latencies)
    if n == 0:
        return {"mean": None, "slowest10_mean": None, "slowest1_mean": None,
                "count": 0, "absent": True}
    ordered = sorted(latencies, reverse=True)
    k10 = max(1, n // 10)
    k1 = max(1, n // 100)
    return {
        "mean": sum(latencies) / n,
        "slowest10_mean": sum(ordered[:k10]) / k10,
        "slowest1_mean": sum(ordered[:k1]) / k1,
        "count": n,
        "absent": False,
    }


def metric_deltas(base: dict, other: dict) -> dict:
    out = {
        "availability": other["availability"]["aggregate"] - base["availability"]["aggregate"],
        "reliability": other["reliability"] - base["reliability"],
        "integrity": other["integrity"] - base["integrity"],
    }
    if base["performance"]["mean"] is not None and other["performance"]["mean"] is not None:
        out["performance_mean"] = other["performance"]["mean"] - base["performance"]["mean"]
    else:
        out["performance_mean"] = None
    return out


def deviating_attributes(base: dict, other: dict,
                         fraction_tol: float = 0.01, latency_tol: float = 0.10) -> list[str]:
    """Attributes whose metrics moved beyond the clean-baseline tolerance."""
    out = []
    if abs(other["availability"]["aggregate"] - base["availability"]["aggregate"]) > fraction_tol:
        out.append("availability")
    if abs(other["reliability"] - base["reliability"]) > fraction_tol:
        out.append("reliability")
    if abs(other["integrity"] - base["integrity"]) > fraction_tol:
        out.append("integrity")
    perf_dev = False
    for key in ("mean", "slowest10_mean", "slowest1_mean"):
        b, o = base["performance"][key], other["performance"][key]
        if b is None or o is None:
            continue
        if b > 0 and abs(o - b) / b > latency_tol:
            perf_dev = True
    if perf_dev:
        out.append("performance")
    return out


def impact_reachability_check(blast: dict, injected: str,
                              graph: dict[str, list[str]]) -> list[str]:
    """Services impacted without any dependency path from the injected service."""
    reachable = reachable_from(graph, injected)
    violations = []
    for cells in [blast["rows"][injected]]:
        for k, cell in enumerate(cells):
            for observed, level in cell.items():
                if observed == injected or level in (IMPACT_NONE, IMPACT_PRIMARY):
                    continue
                if observed not in reachable:
                    violations.append(f"{observed}@w{k}={level}")
    return violations
