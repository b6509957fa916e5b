from dataclasses import replace

import pytest

from chaossim import RunConfig, Scenario, canonical_experiment
from chaossim.chaos import ChaosExperiment, default_hypothesis
from chaossim.evaluation import Evaluator
from chaossim.harness import build_report, execute_simulation


class RunCache:
    """Builds each simulation once per session; acceptance criteria share runs."""

    def __init__(self) -> None:
        self._runs: dict = {}

    def canonical(self, scenario: Scenario | None, recovery: bool = True,
                  seed: int = 42, **overrides):
        key = ("canonical", scenario, recovery, seed, tuple(sorted(overrides.items())))
        if key not in self._runs:
            cfg = RunConfig(seed=seed, recovery=recovery)
            experiment = None
            if scenario is not None:
                experiment = canonical_experiment(scenario, cfg.kb, **overrides)
            cfg = replace(cfg, experiment=experiment, clean_duration_ms=300_000)
            trace, log = execute_simulation(cfg)
            report = build_report(cfg, trace)
            evaluator = Evaluator(trace, cfg.catalog, cfg.prefs, cfg.kb,
                                  impact_window_ms=cfg.impact_window_ms)
            self._runs[key] = (cfg, trace, log, report, evaluator)
        return self._runs[key]

    def blast(self, target: str, duration_ms: int, seed: int = 7):
        key = ("blast", target, duration_ms, seed)
        if key not in self._runs:
            cfg = RunConfig(seed=seed, recovery=False)
            experiment = ChaosExperiment(
                id=f"blast-{target}",
                scenario=Scenario.SERVICE_DOWN,
                targets=[target],
                parameters={"kill_interval_ms": 2000},
                hypothesis=default_hypothesis(Scenario.SERVICE_DOWN, [target], cfg.kb),
                duration_ms=duration_ms,
            )
            cfg = replace(cfg, experiment=experiment)
            trace, log = execute_simulation(cfg)
            evaluator = Evaluator(trace, cfg.catalog, cfg.prefs, cfg.kb,
                                  impact_window_ms=cfg.impact_window_ms)
            self._runs[key] = (cfg, trace, log, evaluator)
        return self._runs[key]


@pytest.fixture(scope="session")
def runs() -> RunCache:
    return RunCache()
