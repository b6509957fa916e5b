"""Smart-office service catalog: static service descriptions and user preferences.

Defaults are embedded so the harness runs with zero configuration; every value
can be overridden from the declarative config document.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum


class ServiceKind(str, Enum):
    SENSOR = "sensor"
    EXTERNAL = "external"
    CONTROL = "control"
    ACTUATOR = "actuator"
    UI = "ui"
    BROKER = "broker"
    MONITORING = "monitoring"
    MANAGING = "managing"


class Criticality(str, Enum):
    CRITICAL = "critical"
    CONTRIBUTORY = "contributory"


@dataclass(frozen=True)
class RequiredInput:
    topic: str
    criticality: Criticality
    # Actuator feedback streams degrade a control service when silent and
    # escalate to not-functional only after a prolonged outage.
    actuator_feedback: bool = False


@dataclass
class ReplicaPolicy:
    min_replicas: int = 1
    max_replicas: int = 3
    capacity_rps: float = 10.0
    scale_up_threshold: float = 0.8
    scale_down_cooldown_ms: int = 420_000
    # Two-stage descent: first drop to buffer_factor x demand, then settle to
    # demand after scale_down_settle_ms of sustained low load.
    scale_down_settle_ms: int = 240_000
    buffer_factor: int = 2

    def validate(self, name: str) -> None:
        if self.min_replicas < 1 or self.min_replicas > self.max_replicas:
            raise ValueError(f"{name}: replica bounds must satisfy 1 <= min <= max")
        if self.capacity_rps <= 0:
            raise ValueError(f"{name}: per-replica capacity must be positive")

    @property
    def service_time_ms(self) -> int:
        return round(1000.0 / self.capacity_rps)


@dataclass
class SensorModel:
    """Reading model and battery behavior of the physical sensor unit."""

    base_value: float = 21.0
    noise_amplitude: float = 0.5
    range_lo: float = -40.0
    range_hi: float = 60.0
    unit: str = "celsius"
    boolean: bool = False
    event_probability: float = 0.3
    battery_pct: float = 100.0
    drain_pct_per_min: float = 0.0


@dataclass
class ServiceSpec:
    name: str
    kind: ServiceKind
    subscriptions: list[str] = field(default_factory=list)
    publishes: list[str] = field(default_factory=list)
    period_ms: int = 0
    required_inputs: list[RequiredInput] = field(default_factory=list)
    replica_policy: ReplicaPolicy = field(default_factory=ReplicaPolicy)
    sensor: SensorModel | None = None
    startup_latency_ms: int = 2000
    tick_ms: int = 1000

    def validate(self) -> None:
        self.replica_policy.validate(self.name)
        if self.publishes and self.kind in (ServiceKind.SENSOR, ServiceKind.EXTERNAL) and self.period_ms <= 0:
            raise ValueError(f"{self.name}: periodic publishers need period_ms > 0")


LIGHT_LEVELS = ["off", "low", "medium", "high"]
TIME_BANDS = ["morning", "day", "evening", "night"]
WEATHER_CONDITIONS = ["sunny", "cloudy", "rainy"]


def default_illumination_rules() -> dict[tuple[str, str], str]:
    return {
        ("morning", "sunny"): "low",
        ("morning", "cloudy"): "medium",
        ("morning", "rainy"): "medium",
        ("day", "sunny"): "off",
        ("day", "cloudy"): "low",
        ("day", "rainy"): "medium",
        ("evening", "sunny"): "medium",
        ("evening", "cloudy"): "medium",
        ("evening", "rainy"): "high",
        ("night", "sunny"): "high",
        ("night", "cloudy"): "high",
        ("night", "rainy"): "high",
    }


@dataclass
class UserPreferences:
    temp_min: float = 20.0
    temp_max: float = 24.0
    illumination_rules: dict[tuple[str, str], str] = field(default_factory=default_illumination_rules)
    light_timeout_ms: int = 300_000
    start_hour: int = 12

    def validate(self) -> None:
        if self.temp_min >= self.temp_max:
            raise ValueError("temperature range must satisfy min < max")
        if self.light_timeout_ms <= 0:
            raise ValueError("light timeout must be positive")
        for band in TIME_BANDS:
            for cond in WEATHER_CONDITIONS:
                level = self.illumination_rules.get((band, cond))
                if level not in LIGHT_LEVELS:
                    raise ValueError(f"illumination rule missing or invalid for ({band}, {cond})")


def time_band(at_ms: int, start_hour: int) -> str:
    hour = (start_hour + at_ms // 3_600_000) % 24
    if 6 <= hour < 10:
        return "morning"
    if 10 <= hour < 18:
        return "day"
    if 18 <= hour < 22:
        return "evening"
    return "night"


TOPIC_TEMPERATURE = "sensor/temperature"
TOPIC_MOTION = "sensor/motion"
TOPIC_WEATHER = "weather/conditions"
TOPIC_HEATING_CMD = "control/heating"
TOPIC_LIGHT_CMD = "control/light"
TOPIC_HEATING_STATE = "actuator/heating/state"
TOPIC_LIGHT_STATE = "actuator/light/state"
TOPIC_FAULTS = "monitor/faults"

SERVICE_NAMES = [
    "temperature-sensor",
    "motion-sensor",
    "external-weather",
    "heating-control",
    "light-control",
    "heating-actuator",
    "light-actuator",
    "mqtt-broker",
    "user-interface",
    "system-monitoring",
    "system-managing",
]

# Services eligible as chaos targets: the public catalog minus the UI sink.
INJECTABLE_SERVICES = [
    "temperature-sensor",
    "motion-sensor",
    "external-weather",
    "heating-control",
    "light-control",
    "heating-actuator",
    "light-actuator",
    "mqtt-broker",
]

PUBLIC_SERVICES = INJECTABLE_SERVICES + ["user-interface"]


def default_catalog() -> dict[str, ServiceSpec]:
    specs = [
        ServiceSpec(
            name="temperature-sensor",
            kind=ServiceKind.SENSOR,
            publishes=[TOPIC_TEMPERATURE],
            period_ms=2000,
            sensor=SensorModel(),
        ),
        ServiceSpec(
            name="motion-sensor",
            kind=ServiceKind.SENSOR,
            publishes=[TOPIC_MOTION],
            period_ms=2000,
            sensor=SensorModel(base_value=0.0, noise_amplitude=0.0, range_lo=0.0, range_hi=1.0,
                               unit="event", boolean=True),
        ),
        ServiceSpec(
            name="external-weather",
            kind=ServiceKind.EXTERNAL,
            publishes=[TOPIC_WEATHER],
            period_ms=30_000,
        ),
        ServiceSpec(
            name="heating-control",
            kind=ServiceKind.CONTROL,
            subscriptions=[TOPIC_TEMPERATURE, TOPIC_HEATING_STATE],
            publishes=[TOPIC_HEATING_CMD],
            required_inputs=[
                RequiredInput(TOPIC_TEMPERATURE, Criticality.CRITICAL),
                RequiredInput(TOPIC_HEATING_STATE, Criticality.CONTRIBUTORY, actuator_feedback=True),
            ],
        ),
        ServiceSpec(
            name="light-control",
            kind=ServiceKind.CONTROL,
            subscriptions=[TOPIC_MOTION, TOPIC_WEATHER, TOPIC_LIGHT_STATE],
            publishes=[TOPIC_LIGHT_CMD],
            required_inputs=[
                RequiredInput(TOPIC_MOTION, Criticality.CONTRIBUTORY),
                RequiredInput(TOPIC_WEATHER, Criticality.CONTRIBUTORY),
                RequiredInput(TOPIC_LIGHT_STATE, Criticality.CONTRIBUTORY, actuator_feedback=True),
            ],
            replica_policy=ReplicaPolicy(max_replicas=20, capacity_rps=2.5),
        ),
        ServiceSpec(
            name="heating-actuator",
            kind=ServiceKind.ACTUATOR,
            subscriptions=[TOPIC_HEATING_CMD],
            publishes=[TOPIC_HEATING_STATE],
            period_ms=2000,
            required_inputs=[RequiredInput(TOPIC_HEATING_CMD, Criticality.CRITICAL)],
        ),
        ServiceSpec(
            name="light-actuator",
            kind=ServiceKind.ACTUATOR,
            subscriptions=[TOPIC_LIGHT_CMD],
            publishes=[TOPIC_LIGHT_STATE],
            period_ms=2000,
            required_inputs=[RequiredInput(TOPIC_LIGHT_CMD, Criticality.CRITICAL)],
        ),
        ServiceSpec(
            name="mqtt-broker",
            kind=ServiceKind.BROKER,
        ),
        ServiceSpec(
            name="user-interface",
            kind=ServiceKind.UI,
            subscriptions=["sensor/#", "weather/#", "control/#", "actuator/#"],
        ),
        ServiceSpec(
            name="system-monitoring",
            kind=ServiceKind.MONITORING,
            publishes=[TOPIC_FAULTS],
        ),
        ServiceSpec(
            name="system-managing",
            kind=ServiceKind.MANAGING,
            subscriptions=[TOPIC_FAULTS],
        ),
    ]
    catalog = {}
    for spec in specs:
        spec.validate()
        catalog[spec.name] = spec
    return catalog


def validate_catalog(catalog: dict[str, ServiceSpec]) -> None:
    missing = [n for n in SERVICE_NAMES if n not in catalog]
    if missing:
        raise ValueError(f"catalog is missing services: {missing}")
    for spec in catalog.values():
        spec.validate()


def topic_publishers(catalog: dict[str, ServiceSpec]) -> dict[str, str]:
    """Map each concrete topic to the service that publishes it."""
    out: dict[str, str] = {}
    for spec in catalog.values():
        for topic in spec.publishes:
            out[topic] = spec.name
    return out


def topic_period(catalog: dict[str, ServiceSpec], topic: str) -> int:
    """Effective cadence of a topic: publisher period, or its tick for command topics."""
    publishers = topic_publishers(catalog)
    name = publishers.get(topic)
    if name is None:
        return 0
    spec = catalog[name]
    if spec.period_ms > 0:
        return spec.period_ms
    return spec.tick_ms


def dependency_graph(catalog: dict[str, ServiceSpec]) -> dict[str, list[str]]:
    """Edges producer -> consumer, with the broker feeding every other service."""
    publishers = topic_publishers(catalog)
    edges: dict[str, list[str]] = {name: [] for name in catalog}
    for spec in catalog.values():
        for pattern in spec.subscriptions:
            for topic, producer in publishers.items():
                if producer != spec.name and producer in catalog:
                    from .kernel import topic_matches

                    if topic_matches(pattern, topic) and spec.name not in edges[producer]:
                        edges[producer].append(spec.name)
    broker = "mqtt-broker"
    if broker in edges:
        edges[broker] = [n for n in catalog if n != broker]
    return edges


def reachable_from(graph: dict[str, list[str]], start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for nxt in graph.get(node, []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def clone_catalog(catalog: dict[str, ServiceSpec]) -> dict[str, ServiceSpec]:
    out = {}
    for name, spec in catalog.items():
        out[name] = replace(
            spec,
            subscriptions=list(spec.subscriptions),
            publishes=list(spec.publishes),
            required_inputs=list(spec.required_inputs),
            replica_policy=replace(spec.replica_policy),
            sensor=replace(spec.sensor) if spec.sensor else None,
        )
    return out
