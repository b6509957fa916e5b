"""Shared knowledge base: plausible ranges, thresholds, and the dependency graph.

Both the managed services (data validation) and the managing system (detection,
diagnosis) read from here; chaos injection never writes to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .catalog import ServiceSpec, dependency_graph, topic_period, topic_publishers

ACCEPTED = "accepted"
REJECTED_OUT_OF_RANGE = "rejected-out-of-range"
REJECTED_UNKNOWN_TYPE = "rejected-unknown-type"


@dataclass
class KnowledgeBase:
    """Rule-table knowledge driving detection and diagnosis."""

    plausible_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    delay_threshold_ms: int = 5000
    battery_alarm_pct: float = 10.0
    staleness_ms: dict[str, int] = field(default_factory=dict)
    dependency_graph: dict[str, list[str]] = field(default_factory=dict)
    backup_sensors: dict[str, str] = field(default_factory=dict)
    # Expected worst-case lag from injection to detection, per fault kind.
    detection_window_ms: dict[str, int] = field(
        default_factory=lambda: {
            "crash": 2000,
            "erroneous-data": 12_000,
            "battery-drain": 12_000,
            # Rolling response averages only cross the threshold once delayed
            # completions land, so this window covers delay + crossing time.
            "delay": 40_000,
        }
    )
    rejection_count_threshold: int = 3
    monitor_tick_ms: int = 1000
    rolling_window_ms: int = 60_000
    crash_recurrence_count: int = 2
    crash_recurrence_window_ms: int = 600_000
    prolonged_outage_ms: int = 300_000
    staleness_periods: int = 3
    sensor_idle_periods: int = 5

    def validate(self, catalog: dict[str, ServiceSpec]) -> None:
        for name, (lo, hi) in self.plausible_ranges.items():
            if lo >= hi:
                raise ValueError(f"plausible range for {name} must have lo < hi")
        for name in catalog:
            if name not in self.dependency_graph:
                raise ValueError(f"service {name} missing from dependency graph")

    def staleness_for(self, topic: str) -> int:
        return self.staleness_ms.get(topic, 6000)


def default_knowledge(catalog: dict[str, ServiceSpec]) -> KnowledgeBase:
    ranges = {}
    for spec in catalog.values():
        if spec.sensor is not None:
            ranges[spec.name] = (spec.sensor.range_lo, spec.sensor.range_hi)
    kb = KnowledgeBase(
        plausible_ranges=ranges,
        dependency_graph=dependency_graph(catalog),
        backup_sensors={"temperature-sensor": "backup-unit-temperature",
                        "motion-sensor": "backup-unit-motion"},
    )
    for topic in topic_publishers(catalog):
        period = topic_period(catalog, topic)
        if period > 0:
            kb.staleness_ms[topic] = kb.staleness_periods * period
    kb.validate(catalog)
    return kb


def validate_reading(sensor_service: str, value: float, kb: KnowledgeBase) -> str:
    """Range-only plausibility check; boundary values are accepted.

    Out-of-range values are always rejected; in-range values are always
    accepted, even when they happen to be wrong.
    """
    bounds = kb.plausible_ranges.get(sensor_service)
    if bounds is None:
        return REJECTED_UNKNOWN_TYPE
    lo, hi = bounds
    if lo <= value <= hi:
        return ACCEPTED
    return REJECTED_OUT_OF_RANGE
