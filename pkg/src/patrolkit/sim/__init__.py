"""Monte-Carlo simulation of surveillance trials."""
from ._backend import BACKEND, available_backends
from .engine import (
    AdaptiveRouting,
    EnsembleResult,
    TrialConfig,
    TrialRecord,
    run_ensemble,
    run_markov_routing,
    run_multi_vehicle,
    run_trial,
    write_detection_log,
    write_trials_csv,
)

__all__ = [
    "BACKEND",
    "available_backends",
    "AdaptiveRouting",
    "EnsembleResult",
    "TrialConfig",
    "TrialRecord",
    "run_ensemble",
    "run_markov_routing",
    "run_multi_vehicle",
    "run_trial",
    "write_detection_log",
    "write_trials_csv",
]
