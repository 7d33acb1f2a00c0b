"""GLMB tracker with unknown clutter rate and detection probability.

Clutter is modeled as a second, non-interacting class of memoryless
"clutter generators" with uniform likelihood. Each hypothesis stores only
their count. A step generates children in two stages per parent:

1. objects of interest are associated by a ranked-assignment search (Gibbs
   or Murty) in which clutter is approximated as Poisson with matching
   intensity ``kappa_hat``;
2. the measurements left unclaimed are given to the clutter generators,
   whose best survival/birth counts follow in closed form.

The composed child weight uses the exact factorized weights of both
classes; ``kappa_hat`` only steers the search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import (
    Budget,
    Estimate,
    FilterDivergence,
    GaussBetaMode,
    RowCache,
    _as_measurements,
    draw_assignments,
    estimate_mme,
    estimate_multi_bernoulli,
    parent_rng,
)
from .gaussbeta import LinearGaussianModel, constant_velocity_model, gauss_beta_predict
from .rfs import (
    BetaDist,
    GaussBeta,
    Gaussian,
    GlmbComponent,
    GlmbDensity,
    Label,
    OBJECT_CLASS,
    all_track_marginals,
    dedupe,
    normalize,
    truncate,
)

_TIE_TOL = 1e-12


def _open_unit(name, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {value!r}")


@dataclass(frozen=True)
class ClutterModel:
    """Clutter-generator parameters; ``volume`` is the observation-region volume ``V``."""

    p_survival: float = 0.9
    p_detect: float = 0.9
    birth_prob: float = 0.5
    n_birth_initial: int = 120
    n_birth: int = 30
    volume: float = 4e6

    def __post_init__(self):
        _open_unit("clutter p_survival", self.p_survival)
        _open_unit("clutter p_detect", self.p_detect)
        _open_unit("clutter birth_prob", self.birth_prob)
        if self.n_birth_initial < 0 or self.n_birth < 0:
            raise ValueError("clutter birth counts must be non-negative")
        if not self.volume > 0:
            raise ValueError("volume must be positive")

    def births_at(self, step: int) -> int:
        return self.n_birth_initial if step == 1 else self.n_birth


@dataclass(frozen=True, eq=False)
class ObjectBirth:
    r: float
    density: GaussBeta


DEFAULT_BIRTH_MEANS = ((0.0, 0.0, 0.0, 0.0), (400.0, -600.0, 0.0, 0.0),
                       (-800.0, -200.0, 0.0, 0.0), (-200.0, 800.0, 0.0, 0.0))


def default_object_births(r: float = 0.03, cov_diag=(50.0, 50.0, 50.0, 50.0),
                          beta=(9.0, 1.0)) -> tuple[ObjectBirth, ...]:
    cov = np.diag(np.asarray(cov_diag, dtype=float))
    return tuple(ObjectBirth(r, GaussBeta(Gaussian(np.array(m), cov), BetaDist(*beta)))
                 for m in DEFAULT_BIRTH_MEANS)


@dataclass(frozen=True, eq=False)
class ObjectModel:
    dynamics: LinearGaussianModel = field(default_factory=constant_velocity_model)
    p_survival: float = 0.99
    births: tuple[ObjectBirth, ...] = field(default_factory=default_object_births)
    beta_inflation: float = 1.2

    def __post_init__(self):
        object.__setattr__(self, "births", tuple(self.births))
        if not 0.0 <= self.p_survival <= 1.0:
            raise ValueError("p_survival must lie in [0, 1]")
        if self.beta_inflation < 1.0:
            raise ValueError("beta_inflation must be >= 1")
        for b in self.births:
            _open_unit("birth probability", b.r)

    @property
    def prior_detection_mean(self) -> float:
        if not self.births:
            return 0.5
        return float(np.mean([b.density.detect.mean for b in self.births]))


@dataclass(frozen=True, eq=False)
class RobustConfig:
    objects: ObjectModel = field(default_factory=ObjectModel)
    clutter: ClutterModel = field(default_factory=ClutterModel)
    max_components: int = 1000
    min_weight: float = 1e-15
    sampler: str = "gibbs"
    gibbs_sweeps: int = 1000
    estimator: str = "mb"
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in ("mb", "mme"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        self.budget  # validates sampler and caps

    @property
    def budget(self) -> Budget:
        return Budget(self.max_components, self.min_weight, self.sampler, self.gibbs_sweeps, self.seed)


@dataclass
class StepDiagnostics:
    eta_rows: list = field(default_factory=list)
    expected_rows: list = field(default_factory=list)
    kappa_hat: list = field(default_factory=list)
    beta_clamps: int = 0
    n_children: int = 0


@dataclass(frozen=True, eq=False)
class RobustFilterState:
    glmb: GlmbDensity
    config: RobustConfig
    diagnostics: StepDiagnostics | None = None

    @property
    def step(self) -> int:
        return self.glmb.step

    @classmethod
    def initial(cls, config: RobustConfig | None = None) -> "RobustFilterState":
        return cls(GlmbDensity.empty(0), config or RobustConfig())


# --------------------------------------------------------------------------
# clutter side


def predicted_clutter_intensity(component: GlmbComponent, clutter: ClutterModel, n_birth: int | None = None) -> float:
    """Poisson-matched predicted clutter intensity for one parent."""
    nb = clutter.n_birth if n_birth is None else n_birth
    expected = clutter.p_survival * component.clutter_count + clutter.birth_prob * nb
    return expected * clutter.p_detect / clutter.volume


def clutter_log_weight(count: int, n_birth: int, n_meas: int, n_s: int, n_b: int, clutter: ClutterModel) -> float:
    """Log of the full clutter-generator weight for given survivor and birth counts."""
    if not (0 <= n_s <= count and 0 <= n_b <= n_birth and n_s + n_b >= n_meas >= 0):
        return -math.inf
    ps, pd, rb = clutter.p_survival, clutter.p_detect, clutter.birth_prob
    return ((count - n_s) * math.log1p(-ps) + n_s * math.log(ps)
            + (n_birth - n_b) * math.log1p(-rb) + n_b * math.log(rb)
            + (n_s + n_b - n_meas) * math.log1p(-pd)
            + n_meas * (math.log(pd) - math.log(clutter.volume)))


def _preferred(cand, best) -> bool:
    # larger weight; near-ties go to the smaller population, then more survivors
    if best is None:
        return True
    lw, ns, nb = cand
    blw, bns, bnb = best
    tol = _TIE_TOL * max(1.0, abs(blw))
    if lw > blw + tol:
        return True
    if lw < blw - tol:
        return False
    if ns + nb != bns + bnb:
        return ns + nb < bns + bnb
    return ns > bns


def propagate_clutter(count: int, clutter: ClutterModel, n_meas: int, n_birth: int | None = None):
    """Best ``(N_S, N_B)`` for the clutter generators and the resulting log-weight.

    The log-weight is linear in ``(N_S, N_B)`` over the feasible polygon
    ``0 <= N_S <= count``, ``0 <= N_B <= n_birth``, ``N_S + N_B >= n_meas``,
    so only its vertices need to be compared. Returns ``(0, 0, -inf)``
    when no feasible pair exists.
    """
    nb_max = clutter.n_birth if n_birth is None else n_birth
    if count < 0 or n_meas < 0:
        raise ValueError("counts must be non-negative")
    if count + nb_max < n_meas:
        return 0, 0, -math.inf
    best = None
    for ns in {0, count, max(0, n_meas - nb_max), min(count, n_meas)}:
        for nb in {0, nb_max, max(0, n_meas - ns)}:
            lw = clutter_log_weight(count, nb_max, n_meas, ns, nb, clutter)
            if lw == -math.inf:
                continue
            cand = (lw, ns, nb)
            if _preferred(cand, best):
                best = cand
    lw, ns, nb = best
    return ns, nb, lw


# --------------------------------------------------------------------------
# objects of interest


@dataclass(frozen=True, eq=False)
class ObjectHypothesis:
    """One class-1 child: its tracks, assignment, exact class-1 log-weight and claimed measurements."""

    tracks: tuple
    gamma: tuple
    log_weight: float
    claimed: frozenset


class _ClampCounter:
    def __init__(self, model: ObjectModel):
        self.model = model
        self.count = 0

    def predict(self, x: GaussBeta) -> GaussBeta:
        out, clamped = gauss_beta_predict(x, self.model.dynamics, self.model.beta_inflation)
        self.count += clamped
        return out


def object_row_cache(Z: np.ndarray, objects: ObjectModel) -> tuple[RowCache, _ClampCounter]:
    """Per-step rows for class-1 tracks; ``psi`` is left undivided by clutter."""
    mode = GaussBetaMode(objects.dynamics, objects.p_survival, objects.beta_inflation)
    counter = _ClampCounter(objects)
    return RowCache(Z, mode.survival, counter.predict, mode.update), counter


def _birth_rows(cache: RowCache, objects: ObjectModel, step: int):
    return [cache.birth(Label(step, i, OBJECT_CLASS), b.r, b.density) for i, b in enumerate(objects.births)]


def search_eta(exact_log_eta: np.ndarray, kappa_hat: float) -> np.ndarray:
    """Log eta used for the class-1 search: detection columns divided by ``kappa_hat``."""
    out = exact_log_eta.copy()
    if kappa_hat > 0.0:
        out[:, 2:] -= math.log(kappa_hat)
    return out


def propagate_objects(parent: GlmbComponent, cache: RowCache, births: Sequence, kappa_hat: float,
                      budget: Budget, share: float, rng: np.random.Generator) -> tuple[list[ObjectHypothesis], int]:
    """Class-1 children of ``parent`` and the number of eta rows used."""
    if kappa_hat < 0:
        raise ValueError("kappa_hat must be non-negative")
    rows = [cache.track(tr) for tr in parent.tracks] + list(births)
    if not rows:
        return [ObjectHypothesis((), (), 0.0, frozenset())], 0
    exact = np.vstack([r.log_eta for r in rows])
    cols = np.arange(len(rows))
    out = []
    for gamma in draw_assignments(search_eta(exact, kappa_hat), share, budget, rng):
        lw = float(exact[cols, np.asarray(gamma) + 1].sum())
        if lw == -math.inf:
            continue
        tracks = tuple(row.child(g) for row, g in zip(rows, gamma) if g >= 0)
        out.append(ObjectHypothesis(tracks, tuple(gamma), lw, frozenset(g for g in gamma if g > 0)))
    if not out:
        raise FilterDivergence("no valid class-1 assignment")
    return out, len(rows)


def compose(parent: GlmbComponent, hypothesis: ObjectHypothesis, clutter_result, n_meas: int,
            parent_index: int | None = None) -> GlmbComponent | None:
    n_s, n_b, lw0 = clutter_result
    if lw0 == -math.inf:
        return None
    n0 = n_meas - len(hypothesis.claimed)
    return GlmbComponent(
        hypothesis.tracks,
        parent.log_weight + hypothesis.log_weight + lw0,
        n_s + n_b,
        parent.clutter_history + ((n_s, n_b, n0),),
        parent_index,
    )


def robust_step(state: RobustFilterState, Z) -> RobustFilterState:
    cfg = state.config
    step = state.step + 1
    Z = _as_measurements(Z, cfg.objects.dynamics.meas_dim)
    M = Z.shape[0]
    n_birth0 = cfg.clutter.births_at(step)
    budget = cfg.budget
    cache, clamps = object_row_cache(Z, cfg.objects)
    births = _birth_rows(cache, cfg.objects, step)
    diag = StepDiagnostics()
    per_parent = []
    prior = state.glmb
    for idx, (parent, share) in enumerate(zip(prior.components, prior.weights)):
        kappa_hat = predicted_clutter_intensity(parent, cfg.clutter, n_birth0)
        hyps, n_rows = propagate_objects(parent, cache, births, kappa_hat, budget, share,
                                         parent_rng(cfg.seed, step, idx))
        diag.eta_rows.append(n_rows)
        diag.expected_rows.append(len(parent.tracks) + len(births))
        diag.kappa_hat.append(kappa_hat)
        clutter_cache = {}
        group = []
        for h in hyps:
            n0 = M - len(h.claimed)
            if n0 not in clutter_cache:
                clutter_cache[n0] = propagate_clutter(parent.clutter_count, cfg.clutter, n0, n_birth0)
            child = compose(parent, h, clutter_cache[n0], M, idx)
            if child is not None:
                group.append(child)
        per_parent.append(dedupe(group))
    children = [c for g in per_parent for c in g]
    if not children:
        raise FilterDivergence("filter divergence")
    diag.n_children = len(children)
    diag.beta_clamps = clamps.count
    glmb = normalize(GlmbDensity(tuple(children), step))
    glmb = truncate(glmb, cfg.max_components, cfg.min_weight)
    return RobustFilterState(glmb, cfg, diag)


# --------------------------------------------------------------------------
# estimators


def extract_tracks(state: RobustFilterState) -> list[Estimate]:
    if state.config.estimator == "mme":
        return estimate_mme(state.glmb)
    return estimate_multi_bernoulli(state.glmb, state.config.threshold)


def estimate_clutter_rate(state: RobustFilterState) -> float:
    """Expected number of clutter detections per scan."""
    w = state.glmb.weights
    counts = np.array([c.clutter_count for c in state.glmb.components], dtype=float)
    return float(w @ counts) * state.config.clutter.p_detect


def _detection_mean(density) -> float:
    # a track-marginal mixture of Beta-Gaussians, or a single one
    if hasattr(density, "weights"):
        return float(sum(w * d.detect.mean for w, d in zip(density.weights, density.densities)))
    return density.detect.mean


def estimate_detection_probability(state: RobustFilterState, estimates: Sequence[Estimate] | None = None) -> float:
    """Existence-weighted mean detection probability of the reported tracks."""
    if estimates is None:
        estimates = extract_tracks(state)
    if not estimates:
        return state.config.objects.prior_detection_mean
    marg = None
    num = den = 0.0
    for e in estimates:
        density = e.density
        if density is None or not hasattr(density, "weights"):
            if marg is None:
                marg = all_track_marginals(state.glmb)
            density = marg[e.label][1]
        num += e.existence * _detection_mean(density)
        den += e.existence
    return num / den


def structural_violations(state: RobustFilterState, n_meas: int) -> list[str]:
    """Invariant breaches of one filter output; empty when the state is well formed."""
    out = []
    w = state.glmb.weights
    if abs(w.sum() - 1.0) > 1e-12:
        out.append(f"weights sum to {w.sum()!r}")
    for i, comp in enumerate(state.glmb.components):
        if not comp.has_distinct_labels():
            out.append(f"component {i} repeats a label")
        current = [tr.history[-1] for tr in comp.tracks]
        positive = [j for j in current if j > 0]
        if len(positive) != len(set(positive)) or any(j > n_meas for j in positive):
            out.append(f"component {i} association is not positive 1-1")
        if comp.clutter_history and comp.clutter_history[-1][2] != n_meas - len(positive):
            out.append(f"component {i} clutter detections do not match the unclaimed measurements")
        if comp.clutter_count < (comp.clutter_history[-1][2] if comp.clutter_history else 0):
            out.append(f"component {i} has fewer clutter generators than clutter detections")
        if any(tr.label.class_id != OBJECT_CLASS for tr in comp.tracks):
            out.append(f"component {i} stores a clutter generator as a track")
    d = state.diagnostics
    if d is not None and d.eta_rows != d.expected_rows:
        out.append("eta matrix rows differ from the class-1 hypothesized tracks")
    return out


def run_filter(measurements: Sequence, config: RobustConfig | None = None, callback=None) -> list[RobustFilterState]:
    """Filter a whole scan sequence; ``callback(state)`` is called after every step."""
    state = RobustFilterState.initial(config)
    out = []
    for Z in measurements:
        state = robust_step(state, Z)
        if callback is not None:
            callback(state)
        out.append(state)
    return out


__all__ = [
    "ClutterModel", "ObjectBirth", "ObjectModel", "RobustConfig", "RobustFilterState", "StepDiagnostics",
    "ObjectHypothesis", "clutter_log_weight", "compose", "default_object_births", "estimate_clutter_rate",
    "estimate_detection_probability", "extract_tracks", "predicted_clutter_intensity", "propagate_clutter",
    "propagate_objects", "robust_step", "structural_violations", "run_filter", "search_eta",
]
