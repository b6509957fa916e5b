import pytest
from hypothesis import given, settings, strategies as st

from chaossim.catalog import (
    LIGHT_LEVELS,
    SERVICE_NAMES,
    TIME_BANDS,
    WEATHER_CONDITIONS,
    UserPreferences,
    default_catalog,
    dependency_graph,
    reachable_from,
    time_band,
    validate_catalog,
)
from chaossim.kernel import EventKind, Simulator
from chaossim.knowledge import default_knowledge
from chaossim.smartoffice import (
    STATUS_IDLE,
    ManagedSystem,
    heating_command,
    light_command,
)


def build_office(seed=0):
    sim = Simulator(seed)
    catalog = default_catalog()
    prefs = UserPreferences()
    kb = default_knowledge(catalog)
    office = ManagedSystem(sim, catalog, prefs, kb)
    office.start()
    return sim, office


def test_default_catalog_contains_exactly_the_expected_services():
    catalog = default_catalog()
    assert sorted(catalog) == sorted(SERVICE_NAMES)
    validate_catalog(catalog)


def test_replica_policy_bounds_validated():
    catalog = default_catalog()
    catalog["temperature-sensor"].replica_policy.min_replicas = 5
    catalog["temperature-sensor"].replica_policy.max_replicas = 2
    with pytest.raises(ValueError):
        validate_catalog(catalog)


def test_dependency_graph_paths():
    graph = dependency_graph(default_catalog())
    assert "heating-control" in graph["temperature-sensor"]
    assert "heating-actuator" in graph["heating-control"]
    # feedback edge: actuator state streams back to its control service
    assert "heating-control" in graph["heating-actuator"]
    assert set(graph["mqtt-broker"]) == set(SERVICE_NAMES) - {"mqtt-broker"}
    # no path from the heating chain into the light chain
    assert "light-control" not in reachable_from(graph, "heating-control")


# -- heating rule -------------------------------------------------------------

@given(temp=st.floats(min_value=-40, max_value=60, allow_nan=False),
       prev=st.sampled_from(["on", "off"]))
@settings(max_examples=200, derandomize=True)
def test_heating_rule_property(temp, prev):
    prefs = UserPreferences()
    command = heating_command(temp, prefs, prev)
    if temp < prefs.temp_min:
        assert command == "on"
    elif temp > prefs.temp_max:
        assert command == "off"
    else:
        assert command == prev


def test_heating_rule_examples():
    prefs = UserPreferences(temp_min=20, temp_max=24)
    assert heating_command(18, prefs, "off") == "on"
    assert heating_command(26, prefs, "on") == "off"
    assert heating_command(22, prefs, "on") == "on"
    assert heating_command(22, prefs, "off") == "off"


# -- light rule ---------------------------------------------------------------

def test_light_rule_full_table():
    # Oracle: enumerate every (band, condition) pair against the rule table.
    prefs = UserPreferences()
    for band in TIME_BANDS:
        for condition in WEATHER_CONDITIONS:
            level = light_command(band, prefs, motion_fresh=True,
                                  motion_true_age_ms=1000, weather_condition=condition)
            assert level == prefs.illumination_rules[(band, condition)]
            assert level in LIGHT_LEVELS


def test_light_timeout_forces_off():
    prefs = UserPreferences()
    level = light_command("night", prefs, motion_fresh=True,
                          motion_true_age_ms=prefs.light_timeout_ms,
                          weather_condition="cloudy")
    assert level == "off"


def test_light_degraded_inputs_still_produce_command():
    prefs = UserPreferences()
    # motion unavailable: occupancy assumed, rule table still applies
    assert light_command("night", prefs, motion_fresh=False, motion_true_age_ms=None,
                         weather_condition="rainy") == "high"
    # weather unavailable: default condition substitutes
    assert (light_command("day", prefs, motion_fresh=True, motion_true_age_ms=0,
                          weather_condition=None)
            == prefs.illumination_rules[("day", "cloudy")])


def test_time_band_wheel():
    assert time_band(0, start_hour=12) == "day"
    assert time_band(0, start_hour=23) == "night"
    assert time_band(0, start_hour=7) == "morning"
    assert time_band(0, start_hour=19) == "evening"
    assert time_band(9 * 3_600_000, start_hour=12) == "evening"
    assert time_band(24 * 3_600_000, start_hour=12) == "day"


# -- live office behavior --------------------------------------------------------

def test_sensor_reading_published_per_period():
    sim, office = build_office()
    sim.run_until(10_000)
    readings = [rec for rec in sim.trace
                if rec.kind == "publish" and rec.data["topic"] == "sensor/temperature"]
    # period 2000ms over [0, 10000] inclusive grid
    assert len(readings) == 6
    for rec in readings:
        value = rec.data["payload"]["value"]
        assert 18.0 <= value <= 24.0
        assert rec.data["true_value"] == value


def test_battery_zero_silences_sensor_and_marks_idle():
    sim, office = build_office()
    sim.run_until(5000)
    office.set_battery("temperature-sensor", 0.0)
    sim.run_until(20_000)
    readings = [rec for rec in sim.trace
                if rec.kind == "publish" and rec.data["topic"] == "sensor/temperature"]
    assert all(rec.at <= 5000 for rec in readings)
    status = [rec for rec in sim.trace
              if rec.kind == "state" and rec.data.get("service") == "temperature-sensor"]
    assert status[-1].data["status"] == STATUS_IDLE


def test_heating_commands_follow_readings():
    sim, office = build_office()
    sim.run_until(30_000)
    commands = [rec for rec in sim.trace
                if rec.kind == "publish" and rec.data["topic"] == "control/heating"]
    assert commands, "heating-control should emit keepalive commands"
    for rec in commands:
        assert rec.data["payload"]["state"] in ("on", "off")
        assert rec.data["payload"]["degraded"] is False


def test_actuator_changes_only_after_command():
    sim, office = build_office()
    sim.run_until(60_000)
    changes = [rec for rec in sim.trace if rec.kind == "actuator"]
    commands = {rec.data["message_id"]: rec.at for rec in sim.trace
                if rec.kind == "publish" and rec.data["topic"].startswith("control/")}
    for change in changes:
        cmd_at = commands.get(change.data["command_message_id"])
        assert cmd_at is not None and cmd_at <= change.at


def test_control_goes_not_functional_while_input_stale():
    # A single kill causes a transient outage only: the platform supervisor
    # (autoscaler minimum) respawns the sensor, so staleness must both appear
    # and clear, with no commands emitted inside the stale window.
    sim, office = build_office()
    sim.run_until(10_000)
    office.terminate_replicas("temperature-sensor", "test-kill", abrupt=True)
    sim.run_until(40_000)
    states = [rec for rec in sim.trace
              if rec.kind == "state" and rec.data.get("service") == "heating-control"]
    flips = [rec for rec in states if rec.data["status"] == "not-functional"]
    assert flips, "control never noticed the stale input"
    # staleness window is 3 x 2000ms from the last reading before the kill
    assert 14_000 <= flips[0].at <= 18_000
    recovery = next(rec for rec in states
                    if rec.at > flips[0].at and rec.data["status"] == "functional")
    commands = [rec.at for rec in sim.trace
                if rec.kind == "publish" and rec.data["topic"] == "control/heating"]
    assert not [at for at in commands if flips[0].at <= at < recovery.at]


# -- request serving ----------------------------------------------------------------

def test_uncontended_request_latency_is_base_service_time():
    sim, office = build_office()
    sim.run_until(1000)
    office.handle_service_request("heating-control", "tester")
    sim.run_until(5000)
    response = next(rec for rec in sim.trace if rec.kind == "response")
    assert response.data["latency_ms"] == office.catalog["heating-control"].replica_policy.service_time_ms


def test_request_with_zero_healthy_replicas_fails():
    sim, office = build_office()
    sim.run_until(1000)
    office.terminate_replicas("heating-control", "test-kill", abrupt=True)
    office.handle_service_request("heating-control", "tester")
    failures = [rec for rec in sim.trace if rec.kind == "request-failed"]
    assert failures and failures[-1].data["reason"] == "no-healthy-replica"


def test_latency_grows_monotonically_with_load():
    def mean_latency(rate_rps):
        sim, office = build_office()
        sim.run_until(1000)
        interval = int(1000 / rate_rps)
        for k in range(60):
            at = 1000 + k * interval
            sim.schedule(at, EventKind.WORKLOAD_REQUEST,
                         "light-control", {},
                         lambda s, e: office.handle_service_request("light-control", "u"))
        sim.run_until(400_000)
        latencies = [rec.data["latency_ms"] for rec in sim.trace if rec.kind == "response"]
        return sum(latencies) / len(latencies)

    light = mean_latency(1)
    heavy = mean_latency(10)
    assert heavy > light


def test_injected_delay_adds_to_response_latency():
    sim, office = build_office()
    sim.run_until(1000)
    office.set_injected_delay("light-control", 20_000, 0)
    office.handle_service_request("light-control", "tester")
    sim.run_until(60_000)
    response = next(rec for rec in sim.trace if rec.kind == "response")
    assert response.data["latency_ms"] >= 20_000


# -- autoscaler -----------------------------------------------------------------------

def test_autoscaler_holds_replicas_under_light_load():
    sim, office = build_office()
    sim.run_until(120_000)
    runtime = office.services["light-control"]
    assert len(runtime.live_replicas()) == 1


def test_autoscaler_respects_max_replicas():
    sim, office = build_office()
    runtime = office.services["light-control"]
    assert runtime.spec.replica_policy.max_replicas == 20
    for k in range(3000):
        sim.schedule(1000 + k * 10, EventKind.WORKLOAD_REQUEST,
                     "light-control", {},
                     lambda s, e: office.handle_service_request("light-control", "u"))
    sim.run_until(40_000)
    assert len(runtime.live_replicas()) <= 20


def test_replica_count_never_below_min():
    sim, office = build_office()
    sim.run_until(200_000)
    for name, runtime in office.services.items():
        assert len(runtime.live_replicas()) >= runtime.spec.replica_policy.min_replicas
