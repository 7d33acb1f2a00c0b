"""Ground truth and measurement simulation for the 2-D constant-velocity study."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .gaussbeta import LinearGaussianModel, constant_velocity_model
from .rfs import Gaussian, Label
from .robust import DEFAULT_BIRTH_MEANS

CLUTTER_ORIGIN = None

Profile = tuple[tuple[int, float], ...]


def profile_value(profile: Profile, step: int) -> float:
    """Value of a piecewise-constant ``((start_step, value), ...)`` profile at ``step``."""
    value = profile[0][1]
    for start, v in profile:
        if step >= start:
            value = v
        else:
            break
    return float(value)


def _check_profile(name: str, profile: Profile, lo: float, hi: float) -> Profile:
    profile = tuple((int(s), float(v)) for s, v in profile)
    if not profile:
        raise ValueError(f"{name} profile is empty")
    starts = [s for s, _ in profile]
    if starts != sorted(starts) or len(set(starts)) != len(starts):
        raise ValueError(f"{name} profile start steps must be strictly increasing")
    for _, v in profile:
        if not lo <= v <= hi:
            raise ValueError(f"{name} profile value {v} outside [{lo}, {hi}]")
    return profile


def _default_truth_births() -> tuple[tuple[float, Gaussian], ...]:
    cov = np.diag([50.0, 50.0, 50.0, 50.0])
    return tuple((0.03, Gaussian(np.array(m), cov)) for m in DEFAULT_BIRTH_MEANS)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Generative model for one simulated study.

    ``clutter_rate`` and ``detection_prob`` are piecewise-constant profiles
    given as ``((start_step, value), ...)``; steps are 1-based.
    """

    duration: int = 100
    region: tuple[tuple[float, float], tuple[float, float]] = ((-1000.0, 1000.0), (-1000.0, 1000.0))
    dynamics: LinearGaussianModel = field(default_factory=constant_velocity_model)
    births: tuple[tuple[float, Gaussian], ...] = field(default_factory=_default_truth_births)
    p_survival: float = 0.99
    detection_prob: Profile = ((1, 0.97),)
    clutter_rate: Profile = ((1, 10.0),)
    name: str = "custom"

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        (x0, x1), (y0, y1) = self.region
        if not (x1 > x0 and y1 > y0):
            raise ValueError("region must have positive volume")
        if not 0.0 <= self.p_survival <= 1.0:
            raise ValueError("p_survival must lie in [0, 1]")
        for r, _ in self.births:
            if not 0.0 <= r <= 1.0:
                raise ValueError("birth probabilities must lie in [0, 1]")
        object.__setattr__(self, "births", tuple(self.births))
        object.__setattr__(self, "detection_prob", _check_profile("detection_prob", self.detection_prob, 0.0, 1.0))
        object.__setattr__(self, "clutter_rate", _check_profile("clutter_rate", self.clutter_rate, 0.0, np.inf))

    @property
    def volume(self) -> float:
        (x0, x1), (y0, y1) = self.region
        return (x1 - x0) * (y1 - y0)

    def true_pd(self, step: int) -> float:
        return profile_value(self.detection_prob, step)

    def true_lambda(self, step: int) -> float:
        return profile_value(self.clutter_rate, step)


def preset(scenario_id: int) -> ScenarioConfig:
    """The four background regimes: (clutter rate, detection probability)."""
    table = {
        1: (((1, 10.0),), ((1, 0.97),)),
        2: (((1, 10.0),), ((1, 0.85),)),
        3: (((1, 70.0),), ((1, 0.97),)),
        4: (((1, 25.0), (51, 35.0)), ((1, 0.95),)),
    }
    if scenario_id not in table:
        raise ValueError(f"unknown scenario preset {scenario_id!r}; expected 1-4")
    lam, pd = table[scenario_id]
    return ScenarioConfig(clutter_rate=lam, detection_prob=pd, name=f"scenario-{scenario_id}")


@dataclass(frozen=True, eq=False)
class TruthRecord:
    """Per-step true states and, once generated, measurements with origin tags.

    ``origins[k][j]`` is the label that produced ``measurements[k][j]``, or
    ``None`` for clutter.
    """

    states: tuple[dict, ...]
    measurements: tuple[np.ndarray, ...] = ()
    origins: tuple[tuple, ...] = ()

    @property
    def duration(self) -> int:
        return len(self.states)

    def positions(self, step: int) -> np.ndarray:
        """True positions at 1-based ``step``."""
        st = self.states[step - 1]
        if not st:
            return np.zeros((0, 2))
        return np.array([x[:2] for _, x in sorted(st.items())])


def _inside(x: np.ndarray, region) -> bool:
    (x0, x1), (y0, y1) = region
    return x0 <= x[0] <= x1 and y0 <= x[1] <= y1


def _rng(seed, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


def generate_truth(config: ScenarioConfig, seed: int) -> TruthRecord:
    """Sample object trajectories from the birth LMB and constant-velocity dynamics."""
    rng = _rng(seed, 0)
    F, Q = config.dynamics.F, config.dynamics.Q
    n = F.shape[0]
    alive: dict[Label, np.ndarray] = {}
    states = []
    for k in range(1, config.duration + 1):
        nxt = {}
        for label, x in alive.items():
            if rng.random() >= config.p_survival:
                continue
            x = F @ x + rng.multivariate_normal(np.zeros(n), Q)
            if _inside(x, config.region):
                nxt[label] = x
        for i, (r, g) in enumerate(config.births):
            if rng.random() < r:
                x = rng.multivariate_normal(g.mean, g.cov)
                if _inside(x, config.region):
                    nxt[Label(k, i)] = x
        alive = nxt
        states.append(dict(alive))
    return TruthRecord(tuple(states))


def generate_measurements(truth: TruthRecord, config: ScenarioConfig, seed: int) -> TruthRecord:
    """Detections of live objects plus Poisson clutter uniform over the region, shuffled per scan."""
    rng = _rng(seed, 1)
    H, R = config.dynamics.H, config.dynamics.R
    d = H.shape[0]
    (x0, x1), (y0, y1) = config.region
    scans, origins = [], []
    for k, st in enumerate(truth.states, start=1):
        pd = config.true_pd(k)
        pts, tags = [], []
        for label in sorted(st):
            if rng.random() < pd:
                pts.append(H @ st[label] + rng.multivariate_normal(np.zeros(d), R))
                tags.append(label)
        n_clutter = rng.poisson(config.true_lambda(k))
        if n_clutter:
            clutter = np.column_stack([rng.uniform(x0, x1, n_clutter), rng.uniform(y0, y1, n_clutter)])
            pts.extend(clutter)
            tags.extend([CLUTTER_ORIGIN] * n_clutter)
        order = rng.permutation(len(pts))
        Z = np.array([pts[j] for j in order]).reshape(len(pts), d)
        scans.append(Z)
        origins.append(tuple(tags[j] for j in order))
    return replace(truth, measurements=tuple(scans), origins=tuple(origins))


def simulate(config: ScenarioConfig, seed: int) -> TruthRecord:
    return generate_measurements(generate_truth(config, seed), config, seed)


def max_cardinality(truth: TruthRecord) -> int:
    return max((len(s) for s in truth.states), default=0)


__all__ = ["ScenarioConfig", "TruthRecord", "generate_measurements", "generate_truth", "max_cardinality",
           "preset", "profile_value", "simulate"]
