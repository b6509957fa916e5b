"""Deterministic chaos-experiment harness for a self-healing smart-office simulation."""

from .catalog import (
    ServiceKind,
    ServiceSpec,
    UserPreferences,
    default_catalog,
)
from .chaos import (
    ChaosExperiment,
    FailureModelParams,
    Scenario,
    SteadyStateHypothesis,
    build_pool,
    canonical_experiment,
    verify_hypothesis,
)
from .config import RunConfig, load_config
from .evaluation import Evaluator
from .harness import analyze, run_cycle, run_load_round, run_suite
from .kernel import Simulator, Trace
from .knowledge import KnowledgeBase, default_knowledge
from .managing import SelfHealingController
from .smartoffice import ManagedSystem
from .workload import LoadProfile

__version__ = "0.1.0"

__all__ = [
    "ChaosExperiment",
    "Evaluator",
    "FailureModelParams",
    "KnowledgeBase",
    "LoadProfile",
    "ManagedSystem",
    "RunConfig",
    "Scenario",
    "SelfHealingController",
    "ServiceKind",
    "ServiceSpec",
    "Simulator",
    "SteadyStateHypothesis",
    "Trace",
    "UserPreferences",
    "analyze",
    "build_pool",
    "canonical_experiment",
    "default_catalog",
    "default_knowledge",
    "load_config",
    "run_cycle",
    "run_load_round",
    "run_suite",
    "verify_hypothesis",
]
