from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from chaossim import RunConfig, Scenario, canonical_experiment
from chaossim.catalog import UserPreferences, default_catalog
from chaossim.harness import execute_simulation
from chaossim.kernel import Simulator
from chaossim.knowledge import (
    ACCEPTED,
    REJECTED_OUT_OF_RANGE,
    REJECTED_UNKNOWN_TYPE,
    default_knowledge,
    validate_reading,
)
from chaossim.managing import (
    ACTION_ALARM,
    ACTION_BACKUP,
    ACTION_DELETE,
    ACTION_DEPLOY,
    ACTION_REPLACE,
    ACTION_UNSUBSCRIBE,
    Fault,
    SelfHealingController,
    diagnose,
)
from chaossim.smartoffice import FAULT_MODE_REALISTIC, ManagedSystem


@pytest.fixture()
def kb():
    return default_knowledge(default_catalog())


# -- reading validation -----------------------------------------------------------

def test_gross_out_of_range_rejected(kb):
    assert validate_reading("temperature-sensor", 250.0, kb) == REJECTED_OUT_OF_RANGE


def test_realistic_false_value_is_missed(kb):
    # In-range but wrong: the range validator cannot tell, by design.
    assert validate_reading("temperature-sensor", 22.5, kb) == ACCEPTED


def test_boundary_values_accepted(kb):
    assert validate_reading("temperature-sensor", 60.0, kb) == ACCEPTED
    assert validate_reading("temperature-sensor", -40.0, kb) == ACCEPTED


def test_unknown_sensor_type_rejected_distinctly(kb):
    assert validate_reading("mystery-sensor", 1.0, kb) == REJECTED_UNKNOWN_TYPE


@given(value=st.floats(min_value=-1000, max_value=1000, allow_nan=False))
@settings(max_examples=300, derandomize=True)
def test_validator_range_soundness(value):
    # Every reading outside [lo, hi] rejected; none inside rejected.
    kb = default_knowledge(default_catalog())
    lo, hi = kb.plausible_ranges["temperature-sensor"]
    result = validate_reading("temperature-sensor", value, kb)
    if lo <= value <= hi:
        assert result == ACCEPTED
    else:
        assert result == REJECTED_OUT_OF_RANGE


# -- diagnosis rule table ------------------------------------------------------------

def test_diagnose_crash_plan(kb):
    plan = diagnose(Fault("crash", "heating-control", 1000, {}), kb).plan
    assert [a.kind for a in plan] == [ACTION_DEPLOY]


def test_diagnose_recurring_crash_adds_autoscaling(kb):
    plan = diagnose(Fault("crash", "heating-control", 1000, {}), kb,
                    recurring_crash=True).plan
    assert [a.kind for a in plan] == [ACTION_DEPLOY, "update-config"]


def test_diagnose_erroneous_data_plan(kb):
    plan = diagnose(Fault("erroneous-data", "temperature-sensor", 1000, {}), kb).plan
    assert [a.kind for a in plan] == [ACTION_UNSUBSCRIBE, ACTION_DELETE, ACTION_DEPLOY]


def test_diagnose_battery_with_backup(kb):
    plan = diagnose(Fault("battery-drain", "temperature-sensor", 1000, {}), kb).plan
    assert [a.kind for a in plan] == [ACTION_ALARM, ACTION_BACKUP]


def test_diagnose_battery_without_backup(kb):
    kb2 = default_knowledge(default_catalog())
    kb2.backup_sensors = {}
    plan = diagnose(Fault("battery-drain", "temperature-sensor", 1000, {}), kb2).plan
    assert [a.kind for a in plan] == [ACTION_ALARM]


def test_diagnose_delay_plan(kb):
    plan = diagnose(Fault("delay", "light-control", 1000, {}), kb).plan
    assert [a.kind for a in plan] == [ACTION_REPLACE]


def test_every_known_kind_has_nonempty_plan(kb):
    for kind in ("crash", "erroneous-data", "battery-drain", "delay"):
        diagnosis = diagnose(Fault(kind, "temperature-sensor", 0, {}), kb)
        assert diagnosis.diagnosable and diagnosis.plan


def test_unknown_kind_is_undiagnosable(kb):
    diagnosis = diagnose(Fault("gremlins", "temperature-sensor", 0, {}), kb)
    assert not diagnosis.diagnosable and diagnosis.plan == []


# -- live loop behavior -----------------------------------------------------------------

def run_canonical(scenario, recovery=True, seed=42, **kw):
    cfg = RunConfig(seed=seed, recovery=recovery)
    cfg = replace(cfg, experiment=canonical_experiment(scenario, cfg.kb, **kw))
    trace, log = execute_simulation(cfg)
    return cfg, trace


def test_observe_all_heartbeats_fresh_on_clean_system():
    sim = Simulator(0)
    catalog = default_catalog()
    kb = default_knowledge(catalog)
    office = ManagedSystem(sim, catalog, UserPreferences(), kb)
    controller = SelfHealingController(sim, office, kb)
    office.start()
    controller.start()
    sim.run_until(20_000)
    observations = controller.observe(20_000)
    assert set(observations) == set(catalog)
    for obs in observations.values():
        assert not obs.heartbeat_stale
        assert obs.healthy_replicas >= 1
    assert controller.open_fault_keys() == []


def test_detection_only_from_observable_evidence():
    # Realistic false readings are invisible to the range validator, so the
    # managing system must raise no erroneous-data fault at all.
    cfg, trace = run_canonical(Scenario.SENSOR_FAULT, mode=FAULT_MODE_REALISTIC)
    detections = [rec for rec in trace if rec.kind == "detection"]
    assert all(rec.data["fault_kind"] != "erroneous-data" for rec in detections)


def test_mixed_fault_mode_detected_and_replaced():
    cfg, trace = run_canonical(Scenario.SENSOR_FAULT)
    detections = [rec for rec in trace if rec.kind == "detection"
                  and rec.data["fault_kind"] == "erroneous-data"]
    assert detections
    actions = [rec for rec in trace if rec.kind == "recovery"]
    kinds = [rec.data["action"] for rec in actions]
    assert ACTION_UNSUBSCRIBE in kinds and ACTION_DEPLOY in kinds and ACTION_DELETE in kinds


def test_recovery_causality_chain():
    # injection <= detection <= first recovery action, for every handled fault
    cfg, trace = run_canonical(Scenario.SERVICE_DOWN)
    injection_at = min(rec.at for rec in trace if rec.kind == "injection")
    detections = {rec.data["fault_id"]: rec.at for rec in trace if rec.kind == "detection"}
    for rec in trace:
        if rec.kind == "recovery":
            detected = detections[rec.data["fault_id"]]
            assert injection_at <= detected <= rec.at


def test_crash_escalation_enables_autoscaling():
    # Two separate outages of the same service within the recurrence window:
    # spaced kills recover fully in between, so each kill is a fresh fault.
    cfg, trace = run_canonical(Scenario.SERVICE_DOWN,
                               parameters={"kill_interval_ms": 10_000},
                               duration_ms=30_000)
    crash_faults = [rec for rec in trace if rec.kind == "detection"
                    and rec.data["fault_kind"] == "crash"
                    and rec.target == "heating-control"]
    assert len(crash_faults) >= 2
    updates = [rec for rec in trace if rec.kind == "config-update"]
    assert any(rec.data["field"] == "min_replicas" and rec.data["value"] >= 2
               for rec in updates)


def test_recovery_disabled_executes_nothing():
    cfg, trace = run_canonical(Scenario.SERVICE_DOWN, recovery=False)
    assert [rec for rec in trace if rec.kind == "recovery"] == []


def test_managing_service_down_drops_actions():
    cfg = RunConfig(seed=42, recovery=True)
    exp = canonical_experiment(Scenario.SENSOR_DOWN, cfg.kb)
    cfg = replace(cfg, experiment=exp)
    sim = Simulator(cfg.seed)
    office = ManagedSystem(sim, default_catalog(), cfg.prefs, cfg.kb)
    controller = SelfHealingController(sim, office, cfg.kb, recovery_enabled=True)
    office.start()
    controller.start()
    from chaossim.chaos import ChaosInjector, ChaosLog

    ChaosInjector(sim, office, ChaosLog()).inject(exp)
    sim.run_until(10_000)
    office.terminate_replicas("system-managing", "test-kill", abrupt=True)
    # keep it dead: zero both bounds or the platform supervisor respawns it
    office.services["system-managing"].spec.replica_policy.min_replicas = 0
    office.services["system-managing"].spec.replica_policy.max_replicas = 0

    sim.run_until(60_000)
    assert [rec for rec in sim.trace if rec.kind == "recovery"] == []
    assert any(rec.kind == "recovery-dropped" for rec in sim.trace)


def test_monitoring_down_means_blind():
    cfg = RunConfig(seed=42)
    sim = Simulator(cfg.seed)
    office = ManagedSystem(sim, default_catalog(), cfg.prefs, cfg.kb)
    controller = SelfHealingController(sim, office, cfg.kb)
    office.start()
    controller.start()
    sim.run_until(5000)
    office.terminate_replicas("system-monitoring", "test-kill", abrupt=True)
    office.services["system-monitoring"].spec.replica_policy.min_replicas = 0
    office.terminate_replicas("temperature-sensor", "test-kill", abrupt=True)
    office.services["temperature-sensor"].spec.replica_policy.min_replicas = 0
    sim.run_until(60_000)
    # the sensor crash goes undetected because the monitor itself is down
    assert [rec for rec in sim.trace if rec.kind == "detection" and rec.at > 5000] == []
