"""Generic joint prediction-update GLMB recursion for jump Markov models.

Each track density is a ``ModeMixture``: a weighted list of mode-conditioned
single-object densities. A ``JmsModel`` supplies the per-mode models, the
mode transition matrix, the labeled multi-Bernoulli birth terms and the
Poisson clutter intensity. With a diagonal transition matrix modes act as
non-interacting object classes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .assign import enumerate_assignments, gibbs_sample, is_positive_one_to_one, murty_kbest
from .gaussbeta import (
    LinearGaussianModel,
    beta_update_detected,
    beta_update_missed,
    gauss_beta_predict,
    kalman_predict,
    kalman_update_many,
)
from .rfs import (
    CLUTTER_CLASS,
    GaussBeta,
    Gaussian,
    GlmbComponent,
    GlmbDensity,
    Label,
    TrackDensity,
    all_track_marginals,
    cardinality_distribution,
    dedupe,
    normalize,
    truncate,
)


class FilterDivergence(RuntimeError):
    """Every child hypothesis of a step received zero weight."""


class EnumerationBudgetExceeded(ValueError):
    pass


def safe_log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


# --------------------------------------------------------------------------
# single-object mode models


@dataclass(frozen=True, eq=False)
class LinearGaussianMode:
    """Gaussian track with known, constant survival and detection probabilities."""

    model: LinearGaussianModel
    p_survival: float
    p_detect: float

    def survival(self, x) -> float:
        return self.p_survival

    def predict(self, x: Gaussian) -> Gaussian:
        return kalman_predict(x, self.model)

    def update(self, x: Gaussian, Z: np.ndarray):
        log_q, means, cov = kalman_update_many(x, Z, self.model)
        log_s = np.empty(Z.shape[0] + 1)
        log_s[0] = safe_log(1.0 - self.p_detect)
        log_s[1:] = safe_log(self.p_detect) + log_q
        return log_s, [x] + [Gaussian(mu, cov) for mu in means]


@dataclass(frozen=True, eq=False)
class GaussBetaMode:
    """Gaussian kinematics with a Beta-distributed unknown detection probability."""

    model: LinearGaussianModel
    p_survival: float
    beta_inflation: float = 1.2

    def survival(self, x) -> float:
        return self.p_survival

    def predict(self, x: GaussBeta) -> GaussBeta:
        return gauss_beta_predict(x, self.model, self.beta_inflation)[0]

    def update(self, x: GaussBeta, Z: np.ndarray):
        log_q, means, cov = kalman_update_many(x.kinematic, Z, self.model)
        p_det, beta_det = beta_update_detected(x.detect)
        p_miss, beta_miss = beta_update_missed(x.detect)
        log_s = np.empty(Z.shape[0] + 1)
        log_s[0] = safe_log(p_miss)
        log_s[1:] = safe_log(p_det) + log_q
        posts = [GaussBeta(x.kinematic, beta_miss)]
        posts.extend(GaussBeta(Gaussian(mu, cov), beta_det) for mu in means)
        return log_s, posts


@dataclass(frozen=True, eq=False)
class ClutterGeneratorMode:
    """Memoryless pseudo-object with a uniform likelihood over a region of volume ``volume``."""

    p_survival: float
    p_detect: float
    volume: float

    def survival(self, x) -> float:
        return self.p_survival

    def predict(self, x):
        return None

    def update(self, x, Z: np.ndarray):
        log_s = np.full(Z.shape[0] + 1, safe_log(self.p_detect) - math.log(self.volume))
        log_s[0] = safe_log(1.0 - self.p_detect)
        return log_s, [None] * (Z.shape[0] + 1)


# --------------------------------------------------------------------------
# mode-augmented densities and the jump Markov model


@dataclass(frozen=True, eq=False)
class ModeMixture:
    """Mode-conditioned densities of one track; ``weights`` sum to one."""

    weights: tuple[float, ...]
    modes: tuple[int, ...]
    densities: tuple

    @classmethod
    def single(cls, mode: int, density) -> "ModeMixture":
        return cls((1.0,), (mode,), (density,))

    @property
    def mean(self) -> np.ndarray:
        return sum(w * d.mean for w, d in zip(self.weights, self.densities))

    def mode_probabilities(self, n_modes: int) -> np.ndarray:
        out = np.zeros(n_modes)
        for w, m in zip(self.weights, self.modes):
            out[m] += w
        return out


@dataclass(frozen=True, eq=False)
class BirthTerm:
    r: float
    density: ModeMixture
    class_id: int = 1


@dataclass(frozen=True, eq=False)
class JmsModel:
    modes: tuple
    transition: np.ndarray
    births: tuple[BirthTerm, ...] = ()
    clutter_intensity: float | Callable[[np.ndarray], float] = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "births", tuple(self.births))
        T = np.atleast_2d(np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "transition", T)
        n = len(self.modes)
        if T.shape != (n, n) or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0):
            raise ValueError("transition must be a row-stochastic matrix over the modes")
        for b in self.births:
            if not 0.0 < b.r < 1.0:
                raise ValueError("birth probabilities must lie in (0, 1)")
        if not callable(self.clutter_intensity) and self.clutter_intensity < 0:
            raise ValueError("clutter intensity must be non-negative")

    @property
    def is_diagonal(self) -> bool:
        return bool(np.array_equal(self.transition, np.eye(len(self.modes))))

    @property
    def tracks_clutter(self) -> bool:
        return any(isinstance(m, ClutterGeneratorMode) for m in self.modes)

    def _log_clutter_divisor(self, Z: np.ndarray) -> np.ndarray:
        if callable(self.clutter_intensity):
            kappa = np.array([self.clutter_intensity(z) for z in Z], dtype=float)
        else:
            kappa = np.full(Z.shape[0], float(self.clutter_intensity))
        # zero intensity means no division (the delta_0 convention)
        return np.log(np.where(kappa > 0.0, kappa, 1.0))

    def survival(self, mix: ModeMixture) -> float:
        return float(sum(w * self.modes[m].survival(x) for w, m, x in zip(mix.weights, mix.modes, mix.densities)))

    def predict(self, mix: ModeMixture) -> ModeMixture | None:
        ws, ms, xs = [], [], []
        for w, m, x in zip(mix.weights, mix.modes, mix.densities):
            ps = self.modes[m].survival(x)
            for m_next in np.flatnonzero(self.transition[m]):
                m_next = int(m_next)
                ws.append(w * ps * self.transition[m, m_next])
                ms.append(m_next)
                xs.append(self.modes[m_next].predict(x))
        total = sum(ws)
        if total <= 0.0:
            return None
        return ModeMixture(tuple(w / total for w in ws), tuple(ms), tuple(xs))

    def update(self, mix: ModeMixture, Z: np.ndarray):
        """Expected likelihood ratios ``psi_bar`` (log, misdetect first) and per-outcome posteriors."""
        div = self._log_clutter_divisor(Z)
        terms, posts = [], []
        for w, m, x in zip(mix.weights, mix.modes, mix.densities):
            log_s, post = self.modes[m].update(x, Z)
            log_s = log_s.copy()
            log_s[1:] -= div
            terms.append(safe_log(w) + log_s)
            posts.append(post)
        terms = np.vstack(terms)
        if terms.shape[0] == 1:
            log_psi = terms[0].copy()
        else:
            with np.errstate(divide="ignore"):
                log_psi = logsumexp(terms, axis=0)
        out = []
        for j in range(terms.shape[1]):
            if not np.isfinite(log_psi[j]):
                out.append(None)
                continue
            wj = np.exp(terms[:, j] - log_psi[j])
            keep = [e for e in range(terms.shape[0]) if wj[e] > 0.0]
            out.append(ModeMixture(
                tuple(float(wj[e]) for e in keep),
                tuple(mix.modes[e] for e in keep),
                tuple(posts[e][j] for e in keep),
            ))
        return log_psi, out


# --------------------------------------------------------------------------
# per-step row cache


class _Row:
    """Exact eta row (log domain) of one hypothesized track plus lazily built children."""

    __slots__ = ("label", "history", "class_id", "log_eta", "posteriors", "_children")

    def __init__(self, label, history, log_eta, posteriors):
        self.label = label
        self.history = history
        self.class_id = label.class_id
        self.log_eta = log_eta
        self.posteriors = posteriors
        self._children = {}

    def child(self, j: int) -> TrackDensity:
        tr = self._children.get(j)
        if tr is None:
            tr = TrackDensity(self.label, self.posteriors[j], self.history + (j,))
            self._children[j] = tr
        return tr


class RowCache:
    """Shares prediction and update work between hypotheses holding the same track.

    A track's filtered density is fixed by its label and association
    history, so rows are keyed on that pair for the duration of one step.
    """

    def __init__(self, Z: np.ndarray, survival: Callable, predict: Callable, update: Callable):
        self.Z = Z
        self._survival = survival
        self._predict = predict
        self._update = update
        self._rows: dict = {}

    def _row(self, label, history, p_exist, predicted) -> _Row:
        M = self.Z.shape[0]
        log_eta = np.full(M + 2, -math.inf)
        log_eta[0] = safe_log(1.0 - p_exist)
        posts = [None] * (M + 1)
        if p_exist > 0.0 and predicted is not None:
            log_psi, posts = self._update(predicted, self.Z)
            log_eta[1:] = math.log(p_exist) + log_psi
        return _Row(label, history, log_eta, posts)

    def track(self, tr: TrackDensity) -> _Row:
        key = tr.key
        row = self._rows.get(key)
        if row is None:
            ps = self._survival(tr.density)
            predicted = self._predict(tr.density) if ps > 0.0 else None
            row = self._row(tr.label, tr.history, ps, predicted)
            self._rows[key] = row
        return row

    def birth(self, label: Label, r: float, density) -> _Row:
        key = (label, None)
        row = self._rows.get(key)
        if row is None:
            row = self._row(label, (), r, density)
            self._rows[key] = row
        return row


# --------------------------------------------------------------------------
# budgets and samplers


@dataclass(frozen=True)
class Budget:
    """Component budget for one recursion step.

    ``solver`` is ``"gibbs"``, ``"murty"`` or ``"exhaustive"``. Each parent
    receives a share of ``max_components`` (Murty) or ``gibbs_sweeps``
    (Gibbs) proportional to its weight, with a minimum of one.
    """

    max_components: int = 1000
    min_weight: float = 1e-15
    solver: str = "gibbs"
    gibbs_sweeps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.solver not in ("gibbs", "murty", "exhaustive"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.max_components < 1 or self.gibbs_sweeps < 1:
            raise ValueError("budgets must be positive")


def parent_rng(seed: int, step: int, index: int) -> np.random.Generator:
    """Counter-based stream dedicated to one parent hypothesis at one step."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, index])))


def row_scaled_eta(log_eta: np.ndarray) -> np.ndarray:
    """``exp(log_eta)`` rescaled per row; conditionals and rankings are unchanged."""
    if log_eta.shape[0] == 0:
        return np.zeros(log_eta.shape)
    top = log_eta.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ValueError("a hypothesized track has no positive-weight option")
    return np.exp(log_eta - top)


def draw_assignments(log_eta: np.ndarray, share: float, budget: Budget, rng: np.random.Generator) -> list:
    P, W = log_eta.shape
    if P == 0:
        return [()]
    if budget.solver == "exhaustive":
        cols = np.arange(P)
        return [g for g in enumerate_assignments(P, W - 2)
                if np.isfinite(log_eta[cols, np.asarray(g) + 1].sum())]
    eta = row_scaled_eta(log_eta)
    if budget.solver == "murty":
        k = max(1, int(round(budget.max_components * share)))
        return [g for g, _ in murty_kbest(eta, k)]
    sweeps = max(1, int(round(budget.gibbs_sweeps * share)))
    return gibbs_sample(eta, sweeps, rng=rng)


# --------------------------------------------------------------------------
# recursions


def _as_measurements(Z, dim: int | None = None) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.size == 0:
        return Z.reshape(0, dim or (Z.shape[1] if Z.ndim == 2 else 0))
    return Z.reshape(Z.shape[0], -1) if Z.ndim != 1 else Z.reshape(1, -1)


def _birth_rows(model: JmsModel, cache: RowCache, step: int) -> list[_Row]:
    return [cache.birth(Label(step, i, b.class_id), b.r, b.density) for i, b in enumerate(model.births)]


def _child_component(parent: GlmbComponent, rows: Sequence[_Row], n_survivors: int, gamma, log_weight: float,
                     track_clutter: bool, parent_index: int) -> GlmbComponent:
    tracks = []
    ns = nb = nd = 0
    for i, (row, g) in enumerate(zip(rows, gamma)):
        if g < 0:
            continue
        tracks.append(row.child(g))
        if row.class_id == CLUTTER_CLASS:
            if i < n_survivors:
                ns += 1
            else:
                nb += 1
            if g > 0:
                nd += 1
    history = parent.clutter_history + ((ns, nb, nd),) if track_clutter else parent.clutter_history
    return GlmbComponent(tuple(tracks), log_weight, ns + nb if track_clutter else parent.clutter_count, history,
                         parent_index)


def _finish(per_parent: list[list[GlmbComponent]], step: int, budget: Budget | None) -> GlmbDensity:
    # duplicates are collapsed within a parent only; equal hypotheses reached
    # from different parents carry different histories and stay separate
    children = [c for group in per_parent for c in dedupe(group) if np.isfinite(c.log_weight)]
    if not children:
        raise FilterDivergence("filter divergence")
    out = normalize(GlmbDensity(tuple(children), step))
    if budget is not None:
        out = truncate(out, budget.max_components, budget.min_weight)
    return out


def jms_glmb_step(prior: GlmbDensity, Z, model: JmsModel, budget: Budget = Budget()) -> GlmbDensity:
    """One joint prediction-update step of the jump Markov GLMB filter.

    Children of each parent are generated from the eta matrix over
    (surviving tracks, birth labels); a child's weight is the parent weight
    times the product of its selected eta entries.
    """
    step = prior.step + 1
    Z = _as_measurements(Z)
    cache = RowCache(Z, model.survival, model.predict, model.update)
    births = _birth_rows(model, cache, step)
    track_clutter = model.tracks_clutter
    weights = prior.weights
    children = []
    for idx, (parent, share) in enumerate(zip(prior.components, weights)):
        children.append([])
        rows = [cache.track(tr) for tr in parent.tracks] + births
        if not rows:
            children[-1].append(_child_component(parent, rows, 0, (), parent.log_weight, track_clutter, idx))
            continue
        log_eta = np.vstack([r.log_eta for r in rows])
        cols = np.arange(len(rows))
        for gamma in draw_assignments(log_eta, share, budget, parent_rng(budget.seed, step, idx)):
            lw = parent.log_weight + float(log_eta[cols, np.asarray(gamma) + 1].sum())
            if lw > -math.inf:
                children[-1].append(_child_component(parent, rows, len(parent.tracks), gamma, lw, track_clutter, idx))
    return _finish(children, step, budget)


def multiclass_enumerated_step(prior: GlmbDensity, Z, model: JmsModel, max_tracks: int = 12,
                               max_meas: int = 6) -> GlmbDensity:
    """Exhaustive non-interacting multi-class GLMB step (brute-force oracle).

    Every positive 1-1 extended assignment of every parent is visited. The
    child weight is the product over classes of each class's own factor,
    with assignments that reuse a measurement across rows excluded.
    """
    if not model.is_diagonal:
        raise ValueError("multi-class recursion requires a diagonal mode transition")
    step = prior.step + 1
    Z = _as_measurements(Z)
    M = Z.shape[0]
    if M > max_meas:
        raise EnumerationBudgetExceeded("enumeration budget exceeded")
    cache = RowCache(Z, model.survival, model.predict, model.update)
    births = _birth_rows(model, cache, step)
    track_clutter = model.tracks_clutter
    children = []
    for idx, parent in enumerate(prior.components):
        children.append([])
        rows = [cache.track(tr) for tr in parent.tracks] + births
        if len(rows) > max_tracks:
            raise EnumerationBudgetExceeded("enumeration budget exceeded")
        classes = sorted({r.class_id for r in rows})
        members = {c: [i for i, r in enumerate(rows) if r.class_id == c] for c in classes}
        table = [r.log_eta.tolist() for r in rows]
        for gamma in itertools.product(range(-1, M + 1), repeat=len(rows)):
            if not is_positive_one_to_one(gamma):
                continue
            class_factors = [sum(table[i][gamma[i] + 1] for i in members[c]) for c in classes]
            lw = parent.log_weight + sum(class_factors)
            if lw > -math.inf:
                children[-1].append(_child_component(parent, rows, len(parent.tracks), gamma, lw, track_clutter, idx))
    return _finish(children, step, None)


def marginalize_class(glmb: GlmbDensity, class_id: int) -> GlmbDensity:
    """Restrict every hypothesis to one class and sum weights of equal restrictions."""
    groups: dict = {}
    order = []
    for comp in glmb.components:
        tracks = tuple(tr for tr in comp.tracks if tr.label.class_id == class_id)
        keep_clutter = class_id == CLUTTER_CLASS
        count = comp.clutter_count if keep_clutter else 0
        hist = comp.clutter_history if keep_clutter else ()
        key = (tuple(sorted(tr.key for tr in tracks)), count, hist)
        if key in groups:
            groups[key][1].append(comp.log_weight)
        else:
            groups[key] = (GlmbComponent(tracks, 0.0, count, hist), [comp.log_weight])
            order.append(key)
    comps = tuple(groups[k][0].with_log_weight(float(logsumexp(groups[k][1]))) for k in order)
    return normalize(GlmbDensity(comps, glmb.step))


# --------------------------------------------------------------------------
# estimators


@dataclass(frozen=True, eq=False)
class Estimate:
    label: Label
    mean: np.ndarray
    existence: float
    density: Any = field(default=None, repr=False)


def estimate_multi_bernoulli(glmb: GlmbDensity, threshold: float = 0.5) -> list[Estimate]:
    """Labels with existence strictly above ``threshold``, at their marginal mean."""
    out = []
    for label, (r, mix) in all_track_marginals(glmb).items():
        if r > threshold:
            out.append(Estimate(label, mix.mean, r, mix))
    return out


def estimate_mme(glmb: GlmbDensity) -> list[Estimate]:
    """Heaviest hypothesis among those at the modal cardinality.

    Ties go to the first such hypothesis in the density's order.
    """
    card = cardinality_distribution(glmb)
    n_star = int(np.argmax(card))
    w = glmb.weights
    best = None
    for i, comp in enumerate(glmb.components):
        if len(comp.tracks) == n_star and (best is None or w[i] > w[best]):
            best = i
    marg = all_track_marginals(glmb)
    out = []
    for tr in sorted(glmb.components[best].tracks, key=lambda t: t.label):
        r = marg[tr.label][0]
        out.append(Estimate(tr.label, np.asarray(tr.density.mean, dtype=float), r, tr.density))
    return out
