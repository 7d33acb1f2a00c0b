"""Labeled random finite set types and GLMB density bookkeeping.

A GLMB density is stored as a flat list of hypotheses (components). Each
component carries the class-1 tracks it asserts, their per-track filtered
densities, a count of clutter generators, and a log-weight. All weight
arithmetic happens in the log domain.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable

import numpy as np
from scipy.special import logsumexp

CLUTTER_CLASS = 0
OBJECT_CLASS = 1

_NORM_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Label:
    """Track identity: birth step, index among that step's births, class."""

    birth_time: int
    birth_index: int
    class_id: int = OBJECT_CLASS

    def __post_init__(self):
        if self.birth_time < 0 or self.birth_index < 0:
            raise ValueError(f"label indices must be non-negative: {self}")


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def check(self, rtol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless the covariance is symmetric positive-definite."""
        cov = np.asarray(self.cov)
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > rtol * scale:
            raise ValueError("covariance is not symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) <= 0.0:
            raise ValueError("covariance is not positive-definite")


@dataclass(frozen=True)
class BetaDist:
    """Beta density on the detection probability with shapes ``s`` and ``t``."""

    s: float
    t: float

    def __post_init__(self):
        if not (self.s > 0.0 and self.t > 0.0):
            raise ValueError(f"Beta shapes must be positive, got s={self.s}, t={self.t}")

    @property
    def mean(self) -> float:
        return self.s / (self.s + self.t)

    @property
    def variance(self) -> float:
        n = self.s + self.t
        return self.s * self.t / (n * n * (n + 1.0))


@dataclass(frozen=True, eq=False)
class GaussBeta:
    """Product of a Gaussian kinematic density and a Beta detection density."""

    kinematic: Gaussian
    detect: BetaDist

    @property
    def mean(self) -> np.ndarray:
        return self.kinematic.mean


@dataclass(frozen=True, eq=False)
class TrackDensity:
    """One labeled track inside a hypothesis.

    ``history`` holds one measurement index per step since birth, with 0
    meaning a misdetection. Together with the label it identifies the
    filtered density, so ``key`` is used for caching and deduplication.
    """

    label: Label
    density: Any
    history: tuple[int, ...] = ()

    @property
    def key(self) -> tuple[Label, tuple[int, ...]]:
        return (self.label, self.history)


@dataclass(frozen=True, eq=False)
class GlmbComponent:
    """A single hypothesis.

    ``clutter_history`` records ``(survived, born, detected)`` clutter
    generator counts per step; the generators themselves carry no state.
    ``parent`` is the index of the generating component in the previous
    step's density, for lineage only.
    """

    tracks: tuple[TrackDensity, ...]
    log_weight: float
    clutter_count: int = 0
    clutter_history: tuple[tuple[int, int, int], ...] = ()
    parent: int | None = None

    def __post_init__(self):
        if self.clutter_count < 0:
            raise ValueError("clutter_count must be non-negative")

    @property
    def labels(self) -> tuple[Label, ...]:
        return tuple(tr.label for tr in self.tracks)

    @property
    def key(self) -> Hashable:
        return (
            tuple(sorted(tr.key for tr in self.tracks)),
            self.clutter_count,
            self.clutter_history,
        )

    def with_log_weight(self, log_weight: float) -> "GlmbComponent":
        return GlmbComponent(self.tracks, log_weight, self.clutter_count, self.clutter_history, self.parent)

    def has_distinct_labels(self) -> bool:
        labels = self.labels
        return len(set(labels)) == len(labels)


@dataclass(frozen=True, eq=False)
class GlmbDensity:
    components: tuple[GlmbComponent, ...]
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([c.log_weight for c in self.components], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @classmethod
    def empty(cls, step: int = 0) -> "GlmbDensity":
        """The density asserting no tracks with certainty."""
        return cls((GlmbComponent((), 0.0),), step)


@dataclass(frozen=True, eq=False)
class Mixture:
    """Weighted list of per-hypothesis densities for one track."""

    weights: np.ndarray
    densities: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.densities)

    @property
    def mean(self) -> np.ndarray:
        if not self.densities:
            raise ValueError("empty mixture has no mean")
        means = np.array([d.mean for d in self.densities], dtype=float)
        return self.weights @ means


def normalize(glmb: GlmbDensity) -> GlmbDensity:
    """Rescale component weights to sum to one (log-sum-exp)."""
    if not glmb.components:
        raise ValueError("empty density")
    lw = glmb.log_weights
    if not np.all(np.isfinite(lw)):
        raise ValueError("log-weights must be finite")
    total = logsumexp(lw)
    comps = tuple(c.with_log_weight(float(w - total)) for c, w in zip(glmb.components, lw))
    return GlmbDensity(comps, glmb.step)


def _require_normalized(glmb: GlmbDensity) -> np.ndarray:
    w = glmb.weights
    if abs(w.sum() - 1.0) > _NORM_TOL:
        raise ValueError(f"density is not normalized (weights sum to {w.sum()!r})")
    return w


def cardinality_distribution(glmb: GlmbDensity) -> np.ndarray:
    """Probability of each class-1 track count; clutter generators are excluded."""
    w = _require_normalized(glmb)
    sizes = np.array([len(c.tracks) for c in glmb.components], dtype=int)
    return np.bincount(sizes, weights=w, minlength=int(sizes.max()) + 1)


def track_marginal(glmb: GlmbDensity, label: Label) -> tuple[float, Mixture]:
    """Existence probability and weight-normalized density mixture of one label."""
    w = _require_normalized(glmb)
    ws, ds = [], []
    for wi, comp in zip(w, glmb.components):
        for tr in comp.tracks:
            if tr.label == label:
                ws.append(wi)
                ds.append(tr.density)
                break
    r = float(np.sum(ws)) if ws else 0.0
    if r <= 0.0:
        return 0.0, Mixture(np.zeros(0), ())
    return min(r, 1.0), Mixture(np.asarray(ws) / r, tuple(ds))


def all_track_marginals(glmb: GlmbDensity) -> dict[Label, tuple[float, Mixture]]:
    """``track_marginal`` for every label present, in one pass."""
    w = _require_normalized(glmb)
    acc: dict[Label, tuple[list, list]] = defaultdict(lambda: ([], []))
    for wi, comp in zip(w, glmb.components):
        for tr in comp.tracks:
            ws, ds = acc[tr.label]
            ws.append(wi)
            ds.append(tr.density)
    out = {}
    for label in sorted(acc):
        ws, ds = acc[label]
        r = float(np.sum(ws))
        if r > 0.0:
            out[label] = (min(r, 1.0), Mixture(np.asarray(ws) / r, tuple(ds)))
    return out


def truncate(glmb: GlmbDensity, max_components: int, min_weight: float = 0.0) -> GlmbDensity:
    """Keep the heaviest components, drop those below ``min_weight``, renormalize.

    The single best component always survives. Output is sorted by weight,
    heaviest first; equal weights keep their input order.
    """
    if max_components < 1:
        raise ValueError("max_components must be >= 1")
    if not glmb.components:
        raise ValueError("empty density")
    lw = glmb.log_weights
    lw = lw - logsumexp(lw)
    order = np.argsort(-lw, kind="stable")[:max_components]
    keep = [int(i) for i in order if lw[i] >= np.log(min_weight)] if min_weight > 0 else list(map(int, order))
    if not keep:
        keep = [int(order[0])]
    return normalize(GlmbDensity(tuple(glmb.components[i] for i in keep), glmb.step))


def dedupe(components: Iterable[GlmbComponent]) -> list[GlmbComponent]:
    """Drop repeated hypotheses, keeping the first copy.

    Repeats arise when a sampler visits the same assignment twice; they are
    the same hypothesis, so weights are not added.
    """
    seen = set()
    out = []
    for comp in components:
        key = comp.key
        if key in seen:
            continue
        seen.add(key)
        out.append(comp)
    return out


def check_distinct_labels(glmb: GlmbDensity) -> bool:
    return all(c.has_distinct_labels() for c in glmb.components)
