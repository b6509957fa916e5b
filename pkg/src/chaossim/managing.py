"""Self-healing controller: monitor, analyze (detect), plan (diagnose), execute.

Monitoring and managing run as catalog services, so killing their replicas
blinds or disarms the loop — an evaluable condition, not a harness error.
Every observation derives from trace-visible events; injected fault flags and
ground-truth values are never read.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .catalog import ServiceKind
from .kernel import EventKind, Simulator, TraceRecord
from .knowledge import ACCEPTED, KnowledgeBase
from .smartoffice import STATUS_IDLE, ManagedSystem

FAULT_CRASH = "crash"
FAULT_ERRONEOUS = "erroneous-data"
FAULT_BATTERY = "battery-drain"
FAULT_DELAY = "delay"

ACTION_DEPLOY = "deploy-service"
ACTION_DELETE = "delete-service"
ACTION_UPDATE_CONFIG = "update-config"
ACTION_BACKUP = "enable-backup-sensor"
ACTION_ALARM = "raise-alarm"
ACTION_REPLACE = "terminate-and-replace"
ACTION_UNSUBSCRIBE = "unsubscribe"


@dataclass
class ObservationRecord:
    service: str
    at: int
    last_message_at: int
    heartbeat_stale: bool
    healthy_replicas: int
    starting_replicas: int
    avg_response_ms: float | None
    response_count: int
    probe_failures: int
    battery_pct: float | None
    last_reading_value: float | None
    rejections: int
    broker_healthy: bool


@dataclass
class Fault:
    kind: str
    service: str
    detected_at: int
    evidence: dict
    id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            self.id = f"{self.service}:{self.kind}:{self.detected_at}"


@dataclass
class RecoveryAction:
    kind: str
    target: str
    issued_at: int = -1


@dataclass
class Diagnosis:
    fault: Fault
    root_cause: str
    plan: list[RecoveryAction] = field(default_factory=list)
    diagnosable: bool = True


def diagnose(fault: Fault, kb: KnowledgeBase, recurring_crash: bool = False) -> Diagnosis:
    """Rule-table planning; every known fault kind yields a non-empty plan."""
    if fault.kind == FAULT_CRASH:
        plan = [RecoveryAction(ACTION_DEPLOY, fault.service)]
        if recurring_crash:
            plan.append(RecoveryAction(ACTION_UPDATE_CONFIG, fault.service))
        return Diagnosis(fault, "replica-outage", plan)
    if fault.kind == FAULT_ERRONEOUS:
        plan = [
            RecoveryAction(ACTION_UNSUBSCRIBE, fault.service),
            RecoveryAction(ACTION_DELETE, fault.service),
            RecoveryAction(ACTION_DEPLOY, fault.service),
        ]
        return Diagnosis(fault, "faulty-sensor-data", plan)
    if fault.kind == FAULT_BATTERY:
        plan = [RecoveryAction(ACTION_ALARM, fault.service)]
        if fault.service in kb.backup_sensors:
            plan.append(RecoveryAction(ACTION_BACKUP, fault.service))
        return Diagnosis(fault, "battery-depletion", plan)
    if fault.kind == FAULT_DELAY:
        return Diagnosis(fault, "slow-responses", [RecoveryAction(ACTION_REPLACE, fault.service)])
    return Diagnosis(fault, "unknown-fault-kind", [], diagnosable=False)


class SelfHealingController:
    """Wires the managing-system loop onto a managed system."""

    def __init__(self, sim: Simulator, office: ManagedSystem, kb: KnowledgeBase,
                 recovery_enabled: bool = True) -> None:
        self.sim = sim
        self.office = office
        self.kb = kb
        self.recovery_enabled = recovery_enabled
        # Rolling aggregates, maintained from trace records as they appear.
        self._last_publish: dict[str, int] = {name: 0 for name in office.catalog}
        self._responses: dict[str, deque[tuple[int, int]]] = {n: deque() for n in office.catalog}
        self._probe_failures: dict[str, deque[int]] = {n: deque() for n in office.catalog}
        self._rejections: dict[str, deque[int]] = {n: deque() for n in office.catalog}
        self._battery: dict[str, float] = {}
        self._last_reading: dict[str, float] = {}
        self._healthy_count: dict[str, int] = {}
        self._starting_count: dict[str, int] = {}
        self._replica_states: dict[str, str] = {}
        self._open_faults: dict[tuple[str, str], Fault] = {}
        self._crash_history: dict[str, deque[int]] = {n: deque() for n in office.catalog}
        self._crash_seen: set[str] = set()
        self._handled_faults: set[str] = set()
        self._pending_until: dict[tuple[str, str], int] = {}
        self._fault_seq = 0
        sim.trace.add_listener(self._on_trace_record)
        office.register_managing_handler(self._on_fault_message)

    def start(self) -> None:
        self.sim.schedule(0, EventKind.TIMER, "system-monitoring", {"action": "monitor"},
                          lambda sim, ev: self._on_monitor_tick())

    # -- trace-fed aggregates -------------------------------------------------

    def _on_trace_record(self, rec: TraceRecord) -> None:
        if rec.kind == "publish":
            service = self.office.service_of_replica(rec.source)
            self._last_publish[service] = rec.at
            payload = rec.data.get("payload", {})
            if "battery" in payload:
                self._battery[service] = payload["battery"]
            if "value" in payload:
                self._last_reading[service] = payload["value"]
        elif rec.kind == "response":
            service = rec.target
            self._responses[service].append((rec.at, rec.data["latency_ms"]))
        elif rec.kind == "request-failed":
            if rec.data.get("probe"):
                self._probe_failures[rec.target].append(rec.at)
            elif rec.data.get("reason") == "no-healthy-replica":
                self._probe_failures[rec.target].append(rec.at)
        elif rec.kind == "validation":
            if rec.data.get("result") != ACCEPTED:
                self._rejections[rec.target].append(rec.at)
        elif rec.kind == "state" and rec.data.get("scope") == "replica":
            rid = rec.data["replica"]
            service = rec.source
            prev = self._replica_states.get(rid)
            new = rec.data["state"]
            self._replica_states[rid] = new
            healthy = self._healthy_count.setdefault(service, 0)
            starting = self._starting_count.setdefault(service, 0)
            if prev == "healthy":
                healthy -= 1
            elif prev == "starting":
                starting -= 1
            if new == "healthy":
                healthy += 1
            elif new == "starting":
                starting += 1
            self._healthy_count[service] = healthy
            self._starting_count[service] = starting

    def _prune(self, now: int) -> None:
        horizon = now - self.kb.rolling_window_ms
        for dq in self._responses.values():
            while dq and dq[0][0] < horizon:
                dq.popleft()
        for dq in self._probe_failures.values():
            while dq and dq[0] < horizon:
                dq.popleft()
        for dq in self._rejections.values():
            while dq and dq[0] < horizon:
                dq.popleft()

    # -- monitor tick -----------------------------------------------------------

    def monitoring_healthy(self) -> bool:
        return bool(self.office.services["system-monitoring"].healthy_replicas())

    def managing_healthy(self) -> bool:
        return bool(self.office.services["system-managing"].healthy_replicas())

    def _on_monitor_tick(self) -> None:
        now = self.sim.clock.now
        self.sim.schedule(now + self.kb.monitor_tick_ms, EventKind.TIMER, "system-monitoring",
                          {"action": "monitor"}, lambda sim, ev: self._on_monitor_tick())
        if not self.monitoring_healthy():
            return  # the managing system is blind while its monitor is down
        self._prune(now)
        for service in self.office.catalog:
            self.office.handle_service_request(service, "system-monitoring", probe=True)
        observations = self.observe(now)
        self.detect(observations)
        # Open faults are re-announced every tick; the executor dedups retries.
        for key in sorted(self._open_faults):
            self._publish_fault(self._open_faults[key], now)

    def observe(self, now: int) -> dict[str, ObservationRecord]:
        """One record per service, derived from the rolling trace window."""
        out: dict[str, ObservationRecord] = {}
        broker_ok = self._healthy_count.get("mqtt-broker", 0) > 0
        for service, spec in self.office.catalog.items():
            responses = self._responses[service]
            avg = None
            if responses:
                avg = sum(lat for _, lat in responses) / len(responses)
            period = spec.period_ms
            stale = False
            if period > 0:
                stale = (now - self._last_publish[service]) >= self.kb.staleness_periods * period
            out[service] = ObservationRecord(
                service=service,
                at=now,
                last_message_at=self._last_publish[service],
                heartbeat_stale=stale,
                healthy_replicas=self._healthy_count.get(service, 0),
                starting_replicas=self._starting_count.get(service, 0),
                avg_response_ms=avg,
                response_count=len(responses),
                probe_failures=len(self._probe_failures[service]),
                battery_pct=self._battery.get(service),
                last_reading_value=self._last_reading.get(service),
                rejections=len(self._rejections[service]),
                broker_healthy=broker_ok,
            )
        return out

    # -- detection ---------------------------------------------------------------

    def detect(self, observations: dict[str, ObservationRecord]) -> list[Fault]:
        """Evaluate detection rules; raises each open fault once per occurrence."""
        faults: list[Fault] = []
        for service, obs in observations.items():
            spec = self.office.catalog[service]
            conditions: dict[str, tuple[bool, dict]] = {}
            is_sensor = spec.kind == ServiceKind.SENSOR
            if is_sensor:
                battery_low = obs.battery_pct is not None and obs.battery_pct <= self.kb.battery_alarm_pct
                idle_after = self.kb.sensor_idle_periods * spec.period_ms
                sensor_idle = (obs.healthy_replicas > 0 and obs.broker_healthy
                               and obs.at - obs.last_message_at >= idle_after)
                conditions[FAULT_BATTERY] = (
                    battery_low or sensor_idle,
                    {"battery_pct": obs.battery_pct, "sensor_idle": sensor_idle,
                     "last_message_at": obs.last_message_at},
                )
            crash = obs.healthy_replicas == 0
            if spec.kind == ServiceKind.EXTERNAL:
                crash = crash or (obs.heartbeat_stale and obs.broker_healthy)
            conditions[FAULT_CRASH] = (
                crash,
                {"healthy_replicas": obs.healthy_replicas, "last_message_at": obs.last_message_at},
            )
            if is_sensor:
                conditions[FAULT_ERRONEOUS] = (
                    obs.rejections >= self.kb.rejection_count_threshold,
                    {"rejections": obs.rejections},
                )
            delay = (obs.avg_response_ms is not None
                     and obs.avg_response_ms > self.kb.delay_threshold_ms)
            conditions[FAULT_DELAY] = (
                delay,
                {"avg_response_ms": obs.avg_response_ms, "response_count": obs.response_count},
            )
            for kind, (active, evidence) in conditions.items():
                key = (service, kind)
                if active and key not in self._open_faults:
                    fault = Fault(kind=kind, service=service, detected_at=obs.at, evidence=evidence)
                    self._open_faults[key] = fault
                    faults.append(fault)
                    self.sim.trace.append(obs.at, "detection", "system-monitoring", service,
                                          {"fault_id": fault.id, "fault_kind": kind,
                                           "evidence": evidence})
                elif not active and key in self._open_faults:
                    del self._open_faults[key]
        return faults

    def _publish_fault(self, fault: Fault, now: int) -> None:
        lead = self.office.services["system-monitoring"].lead_replica()
        if lead is None:
            return
        self._fault_seq += 1
        self.sim.publish(
            "monitor/faults",
            {"fault_id": fault.id, "kind": fault.kind, "service": fault.service,
             "detected_at": fault.detected_at, "evidence": fault.evidence, "seq": self._fault_seq},
            lead.id,
        )
        if (self.recovery_enabled and not self.managing_healthy()
                and fault.id not in self._drop_logged):
            self._drop_logged.add(fault.id)
            self.sim.trace.append(now, "recovery-dropped", "system-monitoring", fault.service,
                                  {"fault_id": fault.id, "reason": "managing-service-down"})

    def open_fault_keys(self) -> list[tuple[str, str]]:
        return sorted(self._open_faults)

    # -- diagnosis + execution ------------------------------------------------------

    def _on_fault_message(self, msg, now: int) -> None:
        if not self.recovery_enabled:
            return
        fault = Fault(kind=msg.payload["kind"], service=msg.payload["service"],
                      detected_at=msg.payload["detected_at"], evidence=msg.payload["evidence"],
                      id=msg.payload["fault_id"])
        key = (fault.service, fault.kind)
        if now < self._pending_until.get(key, 0):
            return
        # Replacement plans run once per fault; only crash recovery retries while
        # the outage persists (repeated kills defeat a single redeploy).
        if fault.kind != FAULT_CRASH and fault.id in self._handled_faults:
            return
        self._handled_faults.add(fault.id)
        recurring = False
        if fault.kind == FAULT_CRASH:
            history = self._crash_history[fault.service]
            if fault.id not in self._crash_seen:
                self._crash_seen.add(fault.id)
                history.append(fault.detected_at)
            while history and history[0] < fault.detected_at - self.kb.crash_recurrence_window_ms:
                history.popleft()
            recurring = len(history) >= self.kb.crash_recurrence_count
        diagnosis = diagnose(fault, self.kb, recurring_crash=recurring)
        self.sim.trace.append(now, "diagnosis", "system-managing", fault.service,
                              {"fault_id": fault.id, "root_cause": diagnosis.root_cause,
                               "plan": [a.kind for a in diagnosis.plan],
                               "diagnosable": diagnosis.diagnosable})
        if diagnosis.diagnosable:
            self.execute_recovery(diagnosis, now)
            startup = self.office.catalog[fault.service].startup_latency_ms
            self._pending_until[key] = now + startup + self.kb.monitor_tick_ms

    def execute_recovery(self, diagnosis: Diagnosis, now: int) -> list[RecoveryAction]:
        """Turn the plan into scheduled events; dropped entirely if the executor is down."""
        if not self.managing_healthy():
            self.sim.trace.append(now, "recovery-dropped", "system-managing",
                                  diagnosis.fault.service,
                                  {"fault_id": diagnosis.fault.id,
                                   "reason": "managing-service-down"})
            return []
        scheduled: list[RecoveryAction] = []
        fault = diagnosis.fault
        startup = self.office.catalog[fault.service].startup_latency_ms
        replace_targets = [r.id for r in self.office.services[fault.service].healthy_replicas()]
        for action in diagnosis.plan:
            action.issued_at = now
            fire_at = now
            if action.kind in (ACTION_DELETE,):
                fire_at = now + startup + 20  # make-before-break: drop old after the replacement is up
            self.sim.schedule(
                fire_at, EventKind.RECOVERY_ACTION, action.target,
                {"action": action.kind, "fault_id": fault.id},
                lambda sim, ev, a=action, f=fault, olds=replace_targets:
                    self._run_action(a, f, olds),
            )
            scheduled.append(action)
        return scheduled

    def _run_action(self, action: RecoveryAction, fault: Fault, old_replicas: list[str]) -> None:
        now = self.sim.clock.now
        office = self.office
        detail: dict = {}
        if action.kind == ACTION_DEPLOY:
            replica = office.deploy_replica(action.target, reason=f"recovery:{fault.id}")
            detail["replica"] = replica.id
        elif action.kind == ACTION_DELETE:
            detail["terminated"] = office.terminate_replicas(
                action.target, f"recovery:{fault.id}", only=old_replicas)
        elif action.kind == ACTION_UNSUBSCRIBE:
            detail["blocked"] = office.block_replicas(action.target)
        elif action.kind == ACTION_ALARM:
            detail["alarm"] = "sensor-replacement-needed"
        elif action.kind == ACTION_BACKUP:
            unit = self.kb.backup_sensors.get(action.target, "")
            office.enable_backup_unit(action.target, unit)
            detail["unit"] = unit
        elif action.kind == ACTION_UPDATE_CONFIG:
            office.set_min_replicas(action.target, 2)
            detail["min_replicas"] = 2
        elif action.kind == ACTION_REPLACE:
            replica = office.deploy_replica(action.target, reason=f"recovery:{fault.id}")
            detail["replica"] = replica.id
            startup = office.catalog[action.target].startup_latency_ms
            self.sim.schedule(
                now + startup + 20, EventKind.RECOVERY_ACTION, action.target,
                {"action": "terminate-old", "fault_id": fault.id},
                lambda sim, ev, t=action.target, f=fault, olds=old_replicas:
                    self._finish_replace(t, f, olds),
            )
        self.sim.trace.append(now, "recovery", "system-managing", action.target,
                              dict(detail, action=action.kind, fault_id=fault.id))

    def _finish_replace(self, target: str, fault: Fault, old_replicas: list[str]) -> None:
        now = self.sim.clock.now
        count = self.office.terminate_replicas(target, f"recovery:{fault.id}", only=old_replicas)
        self.sim.trace.append(now, "recovery", "system-managing", target,
                              {"action": "terminate-old", "fault_id": fault.id,
                               "terminated": count})
