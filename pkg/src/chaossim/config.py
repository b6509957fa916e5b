"""Run configuration: defaults, declarative overrides, manifest round-tripping.

Every run writes a manifest echoing the full effective configuration; a report
must be recomputable from that manifest plus the exported trace alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .catalog import (
    ReplicaPolicy,
    SensorModel,
    ServiceKind,
    ServiceSpec,
    UserPreferences,
    RequiredInput,
    Criticality,
    clone_catalog,
    default_catalog,
    validate_catalog,
)
from .chaos import (
    ChaosExperiment,
    FailureModelParams,
    experiment_from_document,
)
from .knowledge import KnowledgeBase, default_knowledge
from .workload import LoadProfile


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    seed: int = 42
    out_dir: str = "runs/out"
    recovery: bool = True
    before_ms: int = 30_000
    after_settle_ms: int = 60_000
    after_window_ms: int = 60_000
    snapshot_cadence_ms: int = 5000
    impact_window_ms: int = 8000
    clean_duration_ms: int = 120_000
    budget: int = 4
    parallel: int = 1
    scenario_filter: str | None = None
    feedback_boost: float = 1.5
    max_concurrent_experiments: int = 1
    catalog: dict[str, ServiceSpec] = field(default_factory=default_catalog)
    prefs: UserPreferences = field(default_factory=UserPreferences)
    kb: KnowledgeBase | None = None
    failure_model: FailureModelParams = field(default_factory=FailureModelParams)
    workload: LoadProfile = field(default_factory=LoadProfile)
    experiment: ChaosExperiment | None = None

    def __post_init__(self) -> None:
        if self.kb is None:
            self.kb = default_knowledge(self.catalog)

    def validate(self) -> None:
        validate_catalog(self.catalog)
        self.prefs.validate()
        self.kb.validate(self.catalog)
        for name in ("before_ms", "after_settle_ms", "after_window_ms",
                     "snapshot_cadence_ms", "impact_window_ms", "clean_duration_ms"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.max_concurrent_experiments != 1:
            raise ConfigError("max_concurrent_experiments is limited to 1 per run")


# -- serialization helpers ----------------------------------------------------------


def prefs_to_dict(prefs: UserPreferences) -> dict:
    return {
        "temp_min": prefs.temp_min,
        "temp_max": prefs.temp_max,
        "light_timeout_ms": prefs.light_timeout_ms,
        "start_hour": prefs.start_hour,
        "illumination_rules": {f"{band}/{cond}": level
                               for (band, cond), level in sorted(prefs.illumination_rules.items())},
    }


def prefs_from_dict(raw: dict) -> UserPreferences:
    prefs = UserPreferences()
    for key in ("temp_min", "temp_max", "light_timeout_ms", "start_hour"):
        if key in raw:
            setattr(prefs, key, raw[key])
    if "illumination_rules" in raw:
        rules = {}
        for key, level in raw["illumination_rules"].items():
            band, cond = key.split("/", 1)
            rules[(band, cond)] = level
        prefs.illumination_rules = rules
    prefs.validate()
    return prefs


def spec_to_dict(spec: ServiceSpec) -> dict:
    return {
        "name": spec.name,
        "kind": spec.kind.value,
        "subscriptions": list(spec.subscriptions),
        "publishes": list(spec.publishes),
        "period_ms": spec.period_ms,
        "required_inputs": [
            {"topic": ri.topic, "criticality": ri.criticality.value,
             "actuator_feedback": ri.actuator_feedback}
            for ri in spec.required_inputs
        ],
        "replica_policy": asdict(spec.replica_policy),
        "sensor": asdict(spec.sensor) if spec.sensor else None,
        "startup_latency_ms": spec.startup_latency_ms,
        "tick_ms": spec.tick_ms,
    }


def spec_from_dict(raw: dict) -> ServiceSpec:
    return ServiceSpec(
        name=raw["name"],
        kind=ServiceKind(raw["kind"]),
        subscriptions=list(raw.get("subscriptions", [])),
        publishes=list(raw.get("publishes", [])),
        period_ms=raw.get("period_ms", 0),
        required_inputs=[
            RequiredInput(ri["topic"], Criticality(ri["criticality"]),
                          ri.get("actuator_feedback", False))
            for ri in raw.get("required_inputs", [])
        ],
        replica_policy=ReplicaPolicy(**raw.get("replica_policy", {})),
        sensor=SensorModel(**raw["sensor"]) if raw.get("sensor") else None,
        startup_latency_ms=raw.get("startup_latency_ms", 2000),
        tick_ms=raw.get("tick_ms", 1000),
    )


def kb_to_dict(kb: KnowledgeBase) -> dict:
    return {
        "plausible_ranges": {k: list(v) for k, v in sorted(kb.plausible_ranges.items())},
        "delay_threshold_ms": kb.delay_threshold_ms,
        "battery_alarm_pct": kb.battery_alarm_pct,
        "staleness_ms": dict(sorted(kb.staleness_ms.items())),
        "dependency_graph": {k: list(v) for k, v in sorted(kb.dependency_graph.items())},
        "backup_sensors": dict(sorted(kb.backup_sensors.items())),
        "detection_window_ms": dict(sorted(kb.detection_window_ms.items())),
        "rejection_count_threshold": kb.rejection_count_threshold,
        "monitor_tick_ms": kb.monitor_tick_ms,
        "rolling_window_ms": kb.rolling_window_ms,
        "crash_recurrence_count": kb.crash_recurrence_count,
        "crash_recurrence_window_ms": kb.crash_recurrence_window_ms,
        "prolonged_outage_ms": kb.prolonged_outage_ms,
        "staleness_periods": kb.staleness_periods,
    }


def kb_from_dict(raw: dict) -> KnowledgeBase:
    kb = KnowledgeBase()
    kb.plausible_ranges = {k: tuple(v) for k, v in raw.get("plausible_ranges", {}).items()}
    kb.staleness_ms = dict(raw.get("staleness_ms", {}))
    kb.dependency_graph = {k: list(v) for k, v in raw.get("dependency_graph", {}).items()}
    kb.backup_sensors = dict(raw.get("backup_sensors", {}))
    kb.detection_window_ms = dict(raw.get("detection_window_ms", kb.detection_window_ms))
    for key in ("delay_threshold_ms", "battery_alarm_pct", "rejection_count_threshold",
                "monitor_tick_ms", "rolling_window_ms", "crash_recurrence_count",
                "crash_recurrence_window_ms", "prolonged_outage_ms", "staleness_periods"):
        if key in raw:
            setattr(kb, key, raw[key])
    return kb


def experiment_from_dict(raw: dict, kb: KnowledgeBase) -> ChaosExperiment:
    return experiment_from_document(yaml.safe_dump(raw), kb)


def config_to_manifest(cfg: RunConfig) -> dict:
    return {
        "seed": cfg.seed,
        "recovery": cfg.recovery,
        "before_ms": cfg.before_ms,
        "after_settle_ms": cfg.after_settle_ms,
        "after_window_ms": cfg.after_window_ms,
        "snapshot_cadence_ms": cfg.snapshot_cadence_ms,
        "impact_window_ms": cfg.impact_window_ms,
        "clean_duration_ms": cfg.clean_duration_ms,
        "budget": cfg.budget,
        "parallel": cfg.parallel,
        "scenario_filter": cfg.scenario_filter,
        "feedback_boost": cfg.feedback_boost,
        "max_concurrent_experiments": cfg.max_concurrent_experiments,
        "catalog": {name: spec_to_dict(spec) for name, spec in sorted(cfg.catalog.items())},
        "preferences": prefs_to_dict(cfg.prefs),
        "knowledge": kb_to_dict(cfg.kb),
        "failure_model": asdict(cfg.failure_model),
        "workload": asdict(cfg.workload),
        "experiment": cfg.experiment.to_dict() if cfg.experiment else None,
    }


def config_from_manifest(manifest: dict) -> RunConfig:
    catalog = {name: spec_from_dict(raw) for name, raw in manifest["catalog"].items()}
    kb = kb_from_dict(manifest["knowledge"])
    experiment = None
    if manifest.get("experiment"):
        experiment = experiment_from_dict(manifest["experiment"], kb)
    cfg = RunConfig(
        seed=manifest["seed"],
        recovery=manifest["recovery"],
        before_ms=manifest["before_ms"],
        after_settle_ms=manifest["after_settle_ms"],
        after_window_ms=manifest["after_window_ms"],
        snapshot_cadence_ms=manifest["snapshot_cadence_ms"],
        impact_window_ms=manifest["impact_window_ms"],
        clean_duration_ms=manifest["clean_duration_ms"],
        budget=manifest.get("budget", 0),
        parallel=manifest.get("parallel", 1),
        scenario_filter=manifest.get("scenario_filter"),
        feedback_boost=manifest.get("feedback_boost", 1.5),
        catalog=catalog,
        prefs=prefs_from_dict(manifest["preferences"]),
        kb=kb,
        failure_model=FailureModelParams(**manifest.get("failure_model", {})),
        workload=LoadProfile(**manifest.get("workload", {})),
        experiment=experiment,
    )
    return cfg


# -- declarative config document ------------------------------------------------------


def _apply_overrides(obj, raw: dict, label: str) -> None:
    for key, value in raw.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown field {label}.{key}")
        setattr(obj, key, value)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from the declarative document; defaults fill the gaps."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping")
    cfg = RunConfig()
    run_section = dict(raw.get("run", {}))
    run_section.update(overrides or {})
    for key, value in run_section.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown field run.{key}")
        setattr(cfg, key, value)
    if "services" in raw:
        catalog = clone_catalog(cfg.catalog)
        for name, spec_raw in raw["services"].items():
            if name not in catalog:
                raise ConfigError(f"unknown service in config: {name}")
            spec = catalog[name]
            for key, value in spec_raw.items():
                if key == "replica_policy":
                    _apply_overrides(spec.replica_policy, value, f"services.{name}.replica_policy")
                elif key == "sensor":
                    if spec.sensor is None:
                        raise ConfigError(f"services.{name} has no sensor model")
                    _apply_overrides(spec.sensor, value, f"services.{name}.sensor")
                elif hasattr(spec, key):
                    setattr(spec, key, value)
                else:
                    raise ConfigError(f"unknown field services.{name}.{key}")
        cfg.catalog = catalog
        cfg.kb = default_knowledge(catalog)
    if "preferences" in raw:
        cfg.prefs = prefs_from_dict({**prefs_to_dict(cfg.prefs), **raw["preferences"]})
    if "knowledge" in raw:
        base = kb_to_dict(cfg.kb)
        for key, value in raw["knowledge"].items():
            if key not in base:
                raise ConfigError(f"unknown field knowledge.{key}")
            if isinstance(base[key], dict) and isinstance(value, dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        cfg.kb = kb_from_dict(base)
    if "failure_model" in raw:
        _apply_overrides(cfg.failure_model, raw["failure_model"], "failure_model")
    if "workload" in raw:
        _apply_overrides(cfg.workload, raw["workload"], "workload")
    cfg.validate()
    return cfg


def write_json(data: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
