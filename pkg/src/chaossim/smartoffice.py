"""Smart-office managed system: live replicas, sensing, control, actuation.

All state is mutated from the simulator event loop. Services publish through
the kernel's broker layer; requests are served by a per-replica FIFO queue so
latency grows with load. Chaos setters perturb replicas only, never the
evaluation state or the knowledge base.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .catalog import (
    Criticality,
    SensorModel,
    ServiceKind,
    ServiceSpec,
    UserPreferences,
    time_band,
    topic_period,
)
from .kernel import (
    REPLICA_HEALTHY,
    REPLICA_STARTING,
    REPLICA_TERMINATED,
    EventKind,
    Event,
    Message,
    Simulator,
)
from .knowledge import ACCEPTED, KnowledgeBase, validate_reading

STATUS_FUNCTIONAL = "functional"
STATUS_DEGRADED = "degraded"
STATUS_NOT_FUNCTIONAL = "not-functional"
STATUS_IDLE = "idle"

FAULT_MODE_NONE = "none"
FAULT_MODE_REALISTIC = "erroneous-realistic"
FAULT_MODE_UNREALISTIC = "erroneous-unrealistic"
FAULT_MODE_MIXED = "erroneous-mixed"

DEFAULT_WEATHER_CONDITION = "cloudy"


@dataclass
class ReplicaInstance:
    """One running instance of a service (the unit chaos terminates)."""

    id: str
    service: str
    ordinal: int
    state: str
    started_at: int
    injected_delay: tuple[int, int, int] | None = None  # (delay_ms, period_ms, anchor_ms)
    fault_mode: str = FAULT_MODE_NONE
    next_free_ms: int = 0
    terminated_abruptly: bool = False

    def delay_active(self, at: int) -> int:
        if self.injected_delay is None:
            return 0
        delay, period, anchor = self.injected_delay
        if at < anchor:
            return 0
        if period <= 0:
            return delay
        return delay if (at - anchor) % period < delay else 0


@dataclass
class ActuatorState:
    value: str  # heating: on/off; light: off/low/medium/high
    last_command_at: int = 0


@dataclass
class InputTracker:
    """Recency bookkeeping for one consumed topic."""

    last_any_at: int = 0
    last_clean_at: int = 0
    last_accepted_at: int | None = None
    last_value: float | str | None = None
    last_message_id: int | None = None


def heating_command(temp: float, prefs: UserPreferences, previous: str) -> str:
    """Bang-bang with hold: below min forces on, above max forces off."""
    if temp < prefs.temp_min:
        return "on"
    if temp > prefs.temp_max:
        return "off"
    return previous


def light_command(
    band: str,
    prefs: UserPreferences,
    motion_fresh: bool,
    motion_true_age_ms: int | None,
    weather_condition: str | None,
) -> str:
    """Rule-table lookup from whatever inputs are currently available.

    With fresh motion and no event inside the timeout the lights go off;
    with motion unavailable, occupancy is assumed and the rule table decides.
    """
    condition = weather_condition if weather_condition is not None else DEFAULT_WEATHER_CONDITION
    if motion_fresh and (motion_true_age_ms is None or motion_true_age_ms >= prefs.light_timeout_ms):
        return "off"
    return prefs.illumination_rules[(band, condition)]


class ServiceRuntime:
    """Live state of one catalog service."""

    def __init__(self, office: "ManagedSystem", spec: ServiceSpec) -> None:
        self.office = office
        self.spec = spec
        self.replicas: list[ReplicaInstance] = []
        self._replica_counter = 0
        self.status = STATUS_FUNCTIONAL
        self.status_reasons: list[str] = []
        self.inputs: dict[str, InputTracker] = {}
        self.sensor_unit: SensorModel | None = None
        self.sensor_seq = 0
        self.battery_updated_at = 0
        self.arrivals: deque[int] = deque()
        # autoscaler bookkeeping
        self.low_since: int | None = None
        self.down_wait_ms = spec.replica_policy.scale_down_cooldown_ms
        # control/actuator state
        self.previous_command = "off"
        self.last_motion_true_at: int | None = None
        self.command_seq = 0
        self.display_missing: list[str] = []
        if spec.sensor is not None:
            self.sensor_unit = SensorModel(**vars(spec.sensor))
        for topic in self._tracked_topics():
            self.inputs[topic] = InputTracker()

    def _tracked_topics(self) -> list[str]:
        if self.spec.kind == ServiceKind.UI:
            return list(self.office.public_topics)
        return [ri.topic for ri in self.spec.required_inputs]

    # -- replica helpers ----------------------------------------------------

    def next_replica_id(self) -> tuple[str, int]:
        ordinal = self._replica_counter
        self._replica_counter += 1
        return f"{self.spec.name}-{ordinal}", ordinal

    def healthy_replicas(self) -> list[ReplicaInstance]:
        return [r for r in self.replicas if r.state == REPLICA_HEALTHY]

    def live_replicas(self) -> list[ReplicaInstance]:
        return [r for r in self.replicas if r.state in (REPLICA_HEALTHY, REPLICA_STARTING)]

    def lead_replica(self) -> ReplicaInstance | None:
        healthy = self.healthy_replicas()
        return min(healthy, key=lambda r: r.ordinal) if healthy else None

    def battery_pct(self, now: int) -> float:
        unit = self.sensor_unit
        if unit is None:
            return 100.0
        elapsed = now - self.battery_updated_at
        if elapsed > 0 and unit.drain_pct_per_min > 0:
            unit.battery_pct = max(0.0, unit.battery_pct - unit.drain_pct_per_min * elapsed / 60_000.0)
        self.battery_updated_at = now
        return unit.battery_pct


class ManagedSystem:
    """Builds the smart office on a simulator and runs its behavior."""

    def __init__(
        self,
        sim: Simulator,
        catalog: dict[str, ServiceSpec],
        prefs: UserPreferences,
        kb: KnowledgeBase,
    ) -> None:
        self.sim = sim
        self.catalog = catalog
        self.prefs = prefs
        self.kb = kb
        self.public_topics = [
            t for t in sorted({topic for s in catalog.values() for topic in s.publishes})
            if not t.startswith("monitor/")
        ]
        self.services: dict[str, ServiceRuntime] = {
            name: ServiceRuntime(self, spec) for name, spec in catalog.items()
        }
        self.replicas: dict[str, ReplicaInstance] = {}
        self.actuators: dict[str, ActuatorState] = {}
        self._request_counter = 0
        self._weather_condition: str | None = None
        self._rate_window_ms = 10_000
        self._delivery_handlers: dict[str, callable] = {}
        self._message_index: dict[int, dict] = {}

    # -- wiring -------------------------------------------------------------

    def start(self) -> None:
        sim = self.sim
        sim.replica_state = lambda rid: self.replicas[rid].state if rid in self.replicas else None
        sim.broker_healthy = self.broker_healthy
        sim.extra_delivery_delay = self._extra_delivery_delay
        sim.deliver = self._on_delivery
        for name in self.catalog:
            runtime = self.services[name]
            for _ in range(runtime.spec.replica_policy.min_replicas):
                self.deploy_replica(name, reason="bootstrap", instant=True)
            self._record_status(runtime, runtime.status, runtime.status_reasons, force=True)
        for name, spec in self.catalog.items():
            if spec.period_ms > 0:
                self._schedule_period_tick(name, at=0)
            self._schedule_status_tick(name, at=0)
            self._schedule_autoscale_tick(name, at=0)

    def broker_healthy(self) -> bool:
        return bool(self.services["mqtt-broker"].healthy_replicas())

    def _extra_delivery_delay(self, publisher: str, subscriber: str, at: int) -> int:
        extra = 0
        for rid in (publisher, subscriber):
            replica = self.replicas.get(rid)
            if replica is not None:
                extra += replica.delay_active(at)
        return extra

    def service_of_replica(self, rid: str) -> str:
        return self.replicas[rid].service

    # -- platform operations --------------------------------------------------

    def deploy_replica(self, service: str, reason: str, instant: bool = False) -> ReplicaInstance:
        runtime = self.services[service]
        rid, ordinal = runtime.next_replica_id()
        now = self.sim.clock.now
        state = REPLICA_HEALTHY if instant else REPLICA_STARTING
        replica = ReplicaInstance(id=rid, service=service, ordinal=ordinal, state=state, started_at=now)
        runtime.replicas.append(replica)
        self.replicas[rid] = replica
        self.sim.trace.append(now, "state", service, rid,
                              {"scope": "replica", "replica": rid, "state": state, "reason": reason})
        if instant:
            self._register_subscriptions(replica)
        else:
            self.sim.schedule(
                now + runtime.spec.startup_latency_ms, EventKind.TIMER, rid,
                {"action": "replica-healthy"},
                lambda sim, ev, r=replica: self._on_replica_healthy(r),
            )
        return replica

    def _on_replica_healthy(self, replica: ReplicaInstance) -> None:
        if replica.state != REPLICA_STARTING:
            return
        replica.state = REPLICA_HEALTHY
        now = self.sim.clock.now
        self.sim.trace.append(now, "state", replica.service, replica.id,
                              {"scope": "replica", "replica": replica.id,
                               "state": REPLICA_HEALTHY, "reason": "startup-complete"})
        self._register_subscriptions(replica)

    def _register_subscriptions(self, replica: ReplicaInstance) -> None:
        for pattern in self.catalog[replica.service].subscriptions:
            self.sim.subscribe(replica.id, pattern)

    def terminate_replicas(self, service: str, reason: str, only: list[str] | None = None,
                           abrupt: bool = False) -> int:
        """Abrupt kills drop in-flight requests; graceful terminations drain them."""
        runtime = self.services[service]
        now = self.sim.clock.now
        count = 0
        for replica in runtime.live_replicas():
            if only is not None and replica.id not in only:
                continue
            replica.state = REPLICA_TERMINATED
            replica.terminated_abruptly = abrupt
            self.sim.drop_replica_subscriptions(replica.id)
            self.sim.trace.append(now, "state", service, replica.id,
                                  {"scope": "replica", "replica": replica.id,
                                   "state": REPLICA_TERMINATED, "reason": reason})
            count += 1
        return count

    def set_fault_mode(self, service: str, mode: str) -> list[str]:
        touched = []
        for replica in self.services[service].live_replicas():
            replica.fault_mode = mode
            touched.append(replica.id)
        return touched

    def set_injected_delay(self, service: str, delay_ms: int, period_ms: int) -> list[str]:
        now = self.sim.clock.now
        touched = []
        for replica in self.services[service].live_replicas():
            replica.injected_delay = (delay_ms, period_ms, now)
            touched.append(replica.id)
        return touched

    def clear_injections(self, service: str) -> None:
        for replica in self.services[service].replicas:
            replica.fault_mode = FAULT_MODE_NONE
            replica.injected_delay = None

    def set_battery(self, service: str, pct: float) -> None:
        runtime = self.services[service]
        if runtime.sensor_unit is not None:
            runtime.battery_pct(self.sim.clock.now)
            runtime.sensor_unit.battery_pct = pct

    def set_drain_rate(self, service: str, pct_per_min: float) -> None:
        runtime = self.services[service]
        if runtime.sensor_unit is not None:
            runtime.battery_pct(self.sim.clock.now)
            runtime.sensor_unit.drain_pct_per_min = pct_per_min

    def enable_backup_unit(self, service: str, unit_name: str) -> None:
        """Swap the sensing service onto its standby hardware unit."""
        runtime = self.services[service]
        if runtime.sensor_unit is None:
            return
        runtime.sensor_unit.battery_pct = 100.0
        runtime.sensor_unit.drain_pct_per_min = 0.0
        runtime.battery_updated_at = self.sim.clock.now
        self.sim.trace.append(self.sim.clock.now, "backup-enabled", service, service,
                              {"unit": unit_name})

    def set_min_replicas(self, service: str, n: int) -> None:
        policy = self.services[service].spec.replica_policy
        policy.min_replicas = min(max(n, 1), policy.max_replicas)
        self.sim.trace.append(self.sim.clock.now, "config-update", service, service,
                              {"field": "min_replicas", "value": policy.min_replicas})

    def block_replicas(self, service: str) -> list[str]:
        blocked = []
        for replica in self.services[service].live_replicas():
            self.sim.block_publisher(replica.id)
            blocked.append(replica.id)
        return blocked

    # -- periodic behavior ----------------------------------------------------

    def _schedule_period_tick(self, service: str, at: int) -> None:
        self.sim.schedule(at, EventKind.TIMER, service, {"action": "period"},
                          lambda sim, ev, s=service: self._on_period_tick(s))

    def _schedule_status_tick(self, service: str, at: int) -> None:
        self.sim.schedule(at, EventKind.TIMER, service, {"action": "status"},
                          lambda sim, ev, s=service: self._on_status_tick(s))

    def _schedule_autoscale_tick(self, service: str, at: int) -> None:
        self.sim.schedule(at, EventKind.TIMER, service, {"action": "autoscale"},
                          lambda sim, ev, s=service: self._on_autoscale_tick(s))

    def _on_period_tick(self, service: str) -> None:
        runtime = self.services[service]
        now = self.sim.clock.now
        self._schedule_period_tick(service, now + runtime.spec.period_ms)
        kind = runtime.spec.kind
        if kind == ServiceKind.SENSOR:
            self.emit_sensor_reading(runtime, now)
        elif kind == ServiceKind.EXTERNAL:
            self._emit_weather(runtime, now)
        elif kind == ServiceKind.ACTUATOR:
            self._emit_actuator_state(runtime, now)

    def emit_sensor_reading(self, runtime: ServiceRuntime, now: int) -> None:
        """Publish one reading on the sensor's period tick, unless depleted or down."""
        lead = runtime.lead_replica()
        unit = runtime.sensor_unit
        battery = runtime.battery_pct(now)
        if lead is None or unit is None:
            return
        if battery <= 0.0:
            if runtime.status != STATUS_IDLE:
                self._record_status(runtime, STATUS_IDLE, ["battery-depleted"])
            return
        rng = self.sim.rng.stream(f"noise:{runtime.spec.name}")
        if unit.boolean:
            true_value = 1.0 if rng.random() < unit.event_probability else 0.0
        else:
            true_value = round(unit.base_value + rng.uniform(-unit.noise_amplitude, unit.noise_amplitude), 3)
        value = self._apply_fault_mode(runtime, lead, true_value, unit)
        runtime.sensor_seq += 1
        payload = {"value": value, "battery": round(battery, 3), "seq": runtime.sensor_seq}
        self.sim.publish(
            runtime.spec.publishes[0], payload, lead.id,
            extra={"true_value": true_value, "fault_mode": lead.fault_mode},
        )

    def _apply_fault_mode(self, runtime: ServiceRuntime, replica: ReplicaInstance,
                          true_value: float, unit: SensorModel) -> float:
        mode = replica.fault_mode
        if mode == FAULT_MODE_NONE:
            return true_value
        if mode == FAULT_MODE_MIXED:
            stream = self.sim.rng.stream(f"fault-mix:{replica.id}")
            # Seeded starting phase, then strict alternation between the modes.
            if not hasattr(stream, "_mix_phase"):
                stream._mix_phase = stream.randrange(2)
            stream._mix_phase = 1 - stream._mix_phase
            mode = FAULT_MODE_REALISTIC if stream._mix_phase else FAULT_MODE_UNREALISTIC
        rng = self.sim.rng.stream(f"fault:{replica.id}")
        if mode == FAULT_MODE_REALISTIC:
            if unit.boolean:
                return 1.0 - true_value
            offset = (2.0 + 3.0 * rng.random()) * max(unit.noise_amplitude, 0.1)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            value = true_value + sign * offset
            return round(min(max(value, unit.range_lo), unit.range_hi), 3)
        # Unrealistic values sit strictly outside the plausible range.
        return round(unit.range_hi + 5.0 + 10.0 * rng.random(), 3)

    def _emit_weather(self, runtime: ServiceRuntime, now: int) -> None:
        lead = runtime.lead_replica()
        if lead is None:
            return
        rng = self.sim.rng.stream("weather")
        if self._weather_condition is None or rng.random() >= 0.8:
            from .catalog import WEATHER_CONDITIONS

            self._weather_condition = WEATHER_CONDITIONS[rng.randrange(len(WEATHER_CONDITIONS))]
        runtime.sensor_seq += 1
        payload = {"condition": self._weather_condition, "seq": runtime.sensor_seq}
        self.sim.publish(runtime.spec.publishes[0], payload, lead.id,
                         extra={"true_value": self._weather_condition})

    def _emit_actuator_state(self, runtime: ServiceRuntime, now: int) -> None:
        if runtime.status == STATUS_NOT_FUNCTIONAL or runtime.status == STATUS_IDLE:
            return
        lead = runtime.lead_replica()
        if lead is None:
            return
        actuator = self.actuators.setdefault(runtime.spec.name, ActuatorState(value="off"))
        runtime.sensor_seq += 1
        payload = {"value": actuator.value, "status": runtime.status, "seq": runtime.sensor_seq}
        self.sim.publish(runtime.spec.publishes[0], payload, lead.id)

    # -- message consumption --------------------------------------------------

    def _on_delivery(self, replica_id: str, msg: Message, now: int) -> None:
        replica = self.replicas.get(replica_id)
        if replica is None:
            return
        runtime = self.services[replica.service]
        # Only the lead replica drives shared service state; other replicas
        # receive the fan-out but their copies act on the same runtime.
        lead = runtime.lead_replica()
        if lead is None or replica.id != lead.id:
            return
        kind = runtime.spec.kind
        if kind == ServiceKind.CONTROL:
            self._control_consume(runtime, msg, now)
        elif kind == ServiceKind.ACTUATOR:
            self._actuator_consume(runtime, msg, now)
        elif kind == ServiceKind.UI:
            tracker = runtime.inputs.setdefault(msg.topic, InputTracker())
            tracker.last_any_at = now
            tracker.last_clean_at = now
        elif kind == ServiceKind.MANAGING:
            handler = self._delivery_handlers.get("managing")
            if handler is not None:
                handler(msg, now)

    def register_managing_handler(self, fn) -> None:
        self._delivery_handlers["managing"] = fn

    def _control_consume(self, runtime: ServiceRuntime, msg: Message, now: int) -> None:
        tracker = runtime.inputs.get(msg.topic)
        if tracker is None:
            return
        tracker.last_any_at = now
        if msg.topic.startswith("actuator/"):
            tracker.last_clean_at = now
            tracker.last_value = msg.payload.get("value")
            return
        if msg.topic.startswith("sensor/"):
            sensor_service = self._publisher_service(msg.topic)
            result = validate_reading(sensor_service, msg.payload.get("value"), self.kb)
            self.sim.trace.append(now, "validation", runtime.spec.name, sensor_service,
                                  {"result": result, "value": msg.payload.get("value"),
                                   "message_id": msg.id, "topic": msg.topic})
            if result != ACCEPTED:
                return
            tracker.last_accepted_at = now
            tracker.last_value = msg.payload.get("value")
            tracker.last_message_id = msg.id
            if runtime.spec.name == "light-control" and msg.topic.endswith("motion"):
                if msg.payload.get("value") == 1.0:
                    runtime.last_motion_true_at = now
        else:
            # Weather feed: no plausibility validation, condition strings.
            tracker.last_accepted_at = now
            tracker.last_clean_at = now
            tracker.last_value = msg.payload.get("condition")
            tracker.last_message_id = msg.id

    def _publisher_service(self, topic: str) -> str:
        for spec in self.catalog.values():
            if topic in spec.publishes:
                return spec.name
        return topic

    def _actuator_consume(self, runtime: ServiceRuntime, msg: Message, now: int) -> None:
        tracker = runtime.inputs.get(msg.topic)
        if tracker is None:
            return
        tracker.last_any_at = now
        if not msg.payload.get("degraded", False):
            tracker.last_clean_at = now
        actuator = self.actuators.setdefault(runtime.spec.name, ActuatorState(value="off"))
        commanded = msg.payload.get("state")
        actuator.last_command_at = now
        if commanded is not None and commanded != actuator.value:
            self.sim.trace.append(now, "actuator", runtime.spec.name, runtime.spec.name,
                                  {"from": actuator.value, "to": commanded,
                                   "command_message_id": msg.id})
            actuator.value = commanded

    # -- status ticks -----------------------------------------------------------

    def _on_status_tick(self, service: str) -> None:
        runtime = self.services[service]
        now = self.sim.clock.now
        self._schedule_status_tick(service, now + runtime.spec.tick_ms)
        status, reasons = self._compute_status(runtime, now)
        if status != runtime.status or reasons != runtime.status_reasons:
            self._record_status(runtime, status, reasons)
        if runtime.spec.kind == ServiceKind.CONTROL and status in (STATUS_FUNCTIONAL, STATUS_DEGRADED):
            self._emit_control_command(runtime, now)

    def _compute_status(self, runtime: ServiceRuntime, now: int) -> tuple[str, list[str]]:
        kind = runtime.spec.kind
        if kind == ServiceKind.BROKER:
            return ((STATUS_FUNCTIONAL, []) if runtime.healthy_replicas()
                    else (STATUS_NOT_FUNCTIONAL, ["no-healthy-replicas"]))
        if not runtime.healthy_replicas():
            return STATUS_NOT_FUNCTIONAL, ["no-healthy-replicas"]
        if not self.broker_healthy():
            if kind in (ServiceKind.MONITORING, ServiceKind.MANAGING):
                return STATUS_DEGRADED, ["broker-unreachable"]
            return STATUS_NOT_FUNCTIONAL, ["broker-unreachable"]
        if kind in (ServiceKind.SENSOR, ServiceKind.EXTERNAL):
            if runtime.sensor_unit is not None and runtime.battery_pct(now) <= 0.0:
                return STATUS_IDLE, ["battery-depleted"]
            return STATUS_FUNCTIONAL, []
        if kind == ServiceKind.CONTROL:
            return self._control_status(runtime, now)
        if kind == ServiceKind.ACTUATOR:
            return self._actuator_status(runtime, now)
        if kind == ServiceKind.UI:
            return self._ui_status(runtime, now)
        return STATUS_FUNCTIONAL, []

    def _control_status(self, runtime: ServiceRuntime, now: int) -> tuple[str, list[str]]:
        reasons: list[str] = []
        data_inputs = [ri for ri in runtime.spec.required_inputs if not ri.actuator_feedback]
        feedback_inputs = [ri for ri in runtime.spec.required_inputs if ri.actuator_feedback]
        fresh: dict[str, bool] = {}
        for ri in data_inputs:
            tracker = runtime.inputs[ri.topic]
            anchor = tracker.last_accepted_at if tracker.last_accepted_at is not None else 0
            fresh[ri.topic] = (now - anchor) < self.kb.staleness_for(ri.topic)
        critical_stale = [ri.topic for ri in data_inputs
                          if ri.criticality == Criticality.CRITICAL and not fresh[ri.topic]]
        if critical_stale:
            return STATUS_NOT_FUNCTIONAL, [f"critical-input-stale:{t}" for t in critical_stale]
        if data_inputs and not any(fresh.values()):
            return STATUS_NOT_FUNCTIONAL, ["all-inputs-stale"]
        degraded = False
        if any(not f for f in fresh.values()):
            degraded = True
            reasons.extend(f"input-stale:{t}" for t, f in fresh.items() if not f)
        for ri in feedback_inputs:
            tracker = runtime.inputs[ri.topic]
            silence = now - tracker.last_any_at
            if silence >= self.kb.prolonged_outage_ms:
                return STATUS_NOT_FUNCTIONAL, [f"actuator-outage-prolonged:{ri.topic}"]
            if silence >= self.kb.staleness_for(ri.topic):
                degraded = True
                reasons.append(f"actuator-silent:{ri.topic}")
        return (STATUS_DEGRADED, reasons) if degraded else (STATUS_FUNCTIONAL, [])

    def _actuator_status(self, runtime: ServiceRuntime, now: int) -> tuple[str, list[str]]:
        ri = runtime.spec.required_inputs[0]
        tracker = runtime.inputs[ri.topic]
        staleness = self.kb.staleness_for(ri.topic)
        if now - tracker.last_any_at >= staleness:
            return STATUS_NOT_FUNCTIONAL, [f"critical-input-stale:{ri.topic}"]
        if now - tracker.last_clean_at >= staleness:
            return STATUS_DEGRADED, [f"input-quality-degraded:{ri.topic}"]
        return STATUS_FUNCTIONAL, []

    def _ui_status(self, runtime: ServiceRuntime, now: int) -> tuple[str, list[str]]:
        missing = []
        for topic in self.public_topics:
            tracker = runtime.inputs.setdefault(topic, InputTracker())
            if now - tracker.last_any_at >= self.kb.staleness_for(topic):
                missing.append(topic)
        runtime.display_missing = missing
        if len(missing) == len(self.public_topics):
            return STATUS_NOT_FUNCTIONAL, ["all-streams-silent"]
        if missing:
            return STATUS_FUNCTIONAL, [f"display-missing:{t}" for t in missing]
        return STATUS_FUNCTIONAL, []

    def _record_status(self, runtime: ServiceRuntime, status: str, reasons: list[str],
                       force: bool = False) -> None:
        runtime.status = status
        runtime.status_reasons = list(reasons)
        data = {"scope": "service", "service": runtime.spec.name,
                "status": status, "reasons": list(reasons)}
        if runtime.spec.kind == ServiceKind.UI:
            data["display_missing"] = list(runtime.display_missing)
        self.sim.trace.append(self.sim.clock.now, "state", runtime.spec.name,
                              runtime.spec.name, data)

    # -- control command emission ----------------------------------------------

    def _emit_control_command(self, runtime: ServiceRuntime, now: int) -> None:
        lead = runtime.lead_replica()
        if lead is None:
            return
        name = runtime.spec.name
        if name == "heating-control":
            tracker = runtime.inputs[self.catalog[name].required_inputs[0].topic]
            if tracker.last_value is None:
                return
            previous = runtime.previous_command
            command = heating_command(tracker.last_value, self.prefs, previous)
            runtime.previous_command = command
            runtime.command_seq += 1
            payload = {
                "state": command,
                "degraded": False,
                "seq": runtime.command_seq,
                "basis": {"reading_id": tracker.last_message_id,
                          "value": tracker.last_value,
                          "previous": previous},
            }
            self.sim.publish(runtime.spec.publishes[0], payload, lead.id)
        elif name == "light-control":
            self._emit_light_command(runtime, lead, now)

    def _emit_light_command(self, runtime: ServiceRuntime, lead: ReplicaInstance, now: int) -> None:
        spec = runtime.spec
        motion_tracker = runtime.inputs["sensor/motion"]
        weather_tracker = runtime.inputs["weather/conditions"]
        motion_anchor = motion_tracker.last_accepted_at if motion_tracker.last_accepted_at is not None else 0
        weather_anchor = weather_tracker.last_accepted_at if weather_tracker.last_accepted_at is not None else 0
        motion_fresh = (now - motion_anchor) < self.kb.staleness_for("sensor/motion")
        weather_fresh = (now - weather_anchor) < self.kb.staleness_for("weather/conditions")
        if not motion_fresh and not weather_fresh:
            return
        band = time_band(now, self.prefs.start_hour)
        motion_age = None
        if runtime.last_motion_true_at is not None:
            motion_age = now - runtime.last_motion_true_at
        condition = weather_tracker.last_value if weather_fresh else None
        command = light_command(band, self.prefs, motion_fresh, motion_age, condition)
        degraded = not (motion_fresh and weather_fresh)
        runtime.command_seq += 1
        payload = {
            "state": command,
            "degraded": degraded,
            "seq": runtime.command_seq,
            "basis": {
                "band": band,
                "motion_fresh": motion_fresh,
                "weather_fresh": weather_fresh,
                "motion_reading_id": motion_tracker.last_message_id if motion_fresh else None,
                "weather_reading_id": weather_tracker.last_message_id if weather_fresh else None,
                "motion_true_age_ms": motion_age if motion_fresh else None,
                "condition": condition,
            },
        }
        self.sim.publish(spec.publishes[0], payload, lead.id)

    # -- request serving ---------------------------------------------------------

    def handle_service_request(self, service: str, requester: str, probe: bool = False) -> int:
        """Route a request to the least-loaded healthy replica; zero healthy fails it."""
        now = self.sim.clock.now
        self._request_counter += 1
        req_id = self._request_counter
        runtime = self.services[service]
        runtime.arrivals.append(now)
        healthy = runtime.healthy_replicas()
        data = {"req_id": req_id, "requester": requester, "probe": probe}
        if not healthy:
            self.sim.trace.append(now, "request-failed", requester, service,
                                  dict(data, reason="no-healthy-replica"))
            return req_id
        self.sim.trace.append(now, "request", requester, service, data)
        replica = min(healthy, key=lambda r: (max(r.next_free_ms, now), r.ordinal))
        service_ms = runtime.spec.replica_policy.service_time_ms
        start = max(replica.next_free_ms, now)
        wait = start - now
        extra = replica.delay_active(now)
        latency = wait + service_ms + extra
        replica.next_free_ms = start + service_ms
        self.sim.schedule(
            now + latency, EventKind.TIMER, service,
            {"action": "response", "req_id": req_id},
            lambda sim, ev, r=replica, rq=req_id, lat=latency, sent=now, pr=probe:
                self._on_response(r, rq, lat, sent, pr),
        )
        return req_id

    def _on_response(self, replica: ReplicaInstance, req_id: int, latency: int,
                     sent_at: int, probe: bool) -> None:
        now = self.sim.clock.now
        if replica.state != REPLICA_HEALTHY and replica.terminated_abruptly:
            self.sim.trace.append(now, "request-failed", replica.service, replica.service,
                                  {"req_id": req_id, "reason": "replica-terminated",
                                   "sent_at": sent_at, "probe": probe})
            return
        self.sim.trace.append(now, "response", replica.id, replica.service,
                              {"req_id": req_id, "latency_ms": latency,
                               "sent_at": sent_at, "probe": probe})

    # -- autoscaling ----------------------------------------------------------------

    def _on_autoscale_tick(self, service: str) -> None:
        runtime = self.services[service]
        now = self.sim.clock.now
        self.sim.schedule(now + 5000, EventKind.TIMER, service, {"action": "autoscale"},
                          lambda sim, ev, s=service: self._on_autoscale_tick(s))
        self.autoscale_step(runtime, now)

    def autoscale_step(self, runtime: ServiceRuntime, now: int) -> int:
        """Scale on per-replica arrival rate; scale-down waits out the cooldown."""
        policy = runtime.spec.replica_policy
        arrivals = runtime.arrivals
        while arrivals and arrivals[0] < now - self._rate_window_ms:
            arrivals.popleft()
        rate = len(arrivals) / (self._rate_window_ms / 1000.0)
        per_replica_limit = policy.scale_up_threshold * policy.capacity_rps
        needed = max(policy.min_replicas, math.ceil(rate / per_replica_limit) if rate > 0 else 0)
        current = len(runtime.live_replicas())
        if needed > current:
            target = min(needed, policy.max_replicas)
            added = 0
            for _ in range(target - current):
                self.deploy_replica(runtime.spec.name, reason="scale-up")
                added += 1
            if added:
                self.sim.trace.append(now, "scale", runtime.spec.name, runtime.spec.name,
                                      {"action": "scale-up", "from": current,
                                       "to": current + added, "rate_rps": round(rate, 3)})
            runtime.low_since = None
            runtime.down_wait_ms = policy.scale_down_cooldown_ms
            return added
        if needed < current:
            if runtime.low_since is None:
                runtime.low_since = now
                return 0
            if now - runtime.low_since < runtime.down_wait_ms:
                return 0
            buffered = max(policy.buffer_factor * needed, policy.min_replicas)
            target = buffered if current > buffered else needed
            victims = sorted(runtime.live_replicas(), key=lambda r: -r.ordinal)[: current - target]
            self.terminate_replicas(runtime.spec.name, "scale-down", only=[v.id for v in victims])
            self.sim.trace.append(now, "scale", runtime.spec.name, runtime.spec.name,
                                  {"action": "scale-down", "from": current, "to": target,
                                   "rate_rps": round(rate, 3)})
            runtime.low_since = now
            runtime.down_wait_ms = policy.scale_down_settle_ms
            return target - current
        runtime.low_since = None
        return 0
