"""Standard GLMB filter told the true clutter rate and detection probability.

It serves as the reference the adaptive filter is compared against.
"""
from __future__ import annotations

from typing import Sequence

from .engine import BirthTerm, Budget, JmsModel, LinearGaussianMode, ModeMixture, estimate_mme, estimate_multi_bernoulli, jms_glmb_step
from .rfs import GlmbDensity
from .robust import ObjectModel
from .scenario import ScenarioConfig


def known_parameter_model(objects: ObjectModel, scenario: ScenarioConfig, step: int) -> JmsModel:
    mode = LinearGaussianMode(objects.dynamics, objects.p_survival, scenario.true_pd(step))
    births = tuple(BirthTerm(b.r, ModeMixture.single(0, b.density.kinematic)) for b in objects.births)
    return JmsModel((mode,), [[1.0]], births, scenario.true_lambda(step) / scenario.volume)


def run_baseline(measurements: Sequence, objects: ObjectModel, scenario: ScenarioConfig, budget: Budget,
                 estimator: str = "mb", threshold: float = 0.5, callback=None) -> list:
    """Filter every scan; returns the per-step estimates."""
    glmb = GlmbDensity.empty(0)
    out = []
    for Z in measurements:
        glmb = jms_glmb_step(glmb, Z, known_parameter_model(objects, scenario, glmb.step + 1), budget)
        if callback is not None:
            callback(glmb)
        out.append(estimate_mme(glmb) if estimator == "mme" else estimate_multi_bernoulli(glmb, threshold))
    return out
