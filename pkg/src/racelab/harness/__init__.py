"""Experiment orchestration: evaluation models (nominal, randomized,
mismatch), Monte-Carlo trials, the method comparison benchmark, value-grid
sweeps, and the command-line interface."""

from .models import EvalModel, build_model, mismatch_params
from .benchmark import MethodArtifacts, RunRecord, run_benchmark, run_trial

__all__ = [
    "EvalModel",
    "MethodArtifacts",
    "RunRecord",
    "build_model",
    "mismatch_params",
    "run_benchmark",
    "run_trial",
]
