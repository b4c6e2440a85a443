"""Evaluation models: the nominal plant, per-trial parameter randomization,
and the fixed "mismatch" plant standing in for unmodeled aerodynamics.

The mismatch model perturbs the nominal drone by a documented fixed draw:
10% thrust-map deficit, 25% extra rotor drag, 5% inertia error, 20 ms of
extra unmodeled latency, and a slow thrust sag (8% over 20 s) mimicking
battery droop. Controllers keep compensating only the nominal 40 ms delay.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..dynamics import QuadParams
from ..rl.env import RandomizationSpec

NOMINAL_DELAY_S = 0.04

MISMATCH_THRUST_SCALE = 0.90
MISMATCH_DRAG_FACTOR = 1.25
MISMATCH_INERTIA_FACTOR = 1.05
MISMATCH_EXTRA_DELAY_S = 0.02
MISMATCH_SAG_FRACTION = 0.08   # linear thrust loss over MISMATCH_SAG_WINDOW_S
MISMATCH_SAG_WINDOW_S = 20.0


def mismatch_params(base: QuadParams) -> QuadParams:
    """Perturbed copy of the nominal drone used as the evaluation plant."""
    return dataclasses.replace(
        base,
        thrust_scale=base.thrust_scale * MISMATCH_THRUST_SCALE,
        drag=tuple(d * MISMATCH_DRAG_FACTOR for d in base.drag),
        inertia=tuple(j * MISMATCH_INERTIA_FACTOR for j in base.inertia),
        thrust_sag_rate=MISMATCH_SAG_FRACTION / MISMATCH_SAG_WINDOW_S,
        twr=None,  # the perturbed thrust map no longer matches the spec TWR
    )


@dataclass
class EvalModel:
    """One evaluation plant: parameters, actual command latency, and an
    optional per-trial randomization applied on top."""

    name: str
    params: QuadParams
    delay_s: float
    randomization: RandomizationSpec | None = None

    def trial_params(self, rng: np.random.Generator) -> QuadParams:
        """Plant parameters for one trial (samples randomization if any)."""
        if self.randomization is None:
            return self.params
        ts, ds = self.randomization.sample(rng)
        return dataclasses.replace(
            self.params,
            thrust_scale=self.params.thrust_scale * ts,
            drag=tuple(d * ds for d in self.params.drag),
            twr=None,
        )


def build_model(name: str, base: QuadParams,
                randomization: RandomizationSpec | None = None) -> EvalModel:
    """nominal: the training/planning plant with the standard 40 ms delay.
    randomized: nominal plus per-trial thrust/drag scaling.
    mismatch: the fixed perturbed plant with 60 ms total delay."""
    if name == "nominal":
        return EvalModel("nominal", base, NOMINAL_DELAY_S)
    if name == "randomized":
        spec = randomization if randomization is not None else RandomizationSpec()
        return EvalModel("randomized", base, spec.delay_s, randomization=spec)
    if name == "mismatch":
        return EvalModel(
            "mismatch", mismatch_params(base), NOMINAL_DELAY_S + MISMATCH_EXTRA_DELAY_S
        )
    raise ValueError(f"unknown model '{name}' (expected nominal, randomized, mismatch)")
