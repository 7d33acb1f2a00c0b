"""Ranked assignment over extended association matrices.

An eta matrix has one row per hypothesized track and ``M + 2`` columns:
column 0 is death (or not born), column 1 is alive but misdetected and
column ``1 + j`` is alive and generating measurement ``j`` (1-based). An
extended assignment ``gamma`` stores, per row, ``-1``, ``0`` or the
measurement index. Valid assignments are positive 1-1: no measurement index
appears twice.
"""
from __future__ import annotations

import bisect
import heapq
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

DEATH = -1
MISSED = 0
SENTINEL = 1e30

Assignment = tuple[int, ...]


class InfeasibleAssignment(ValueError):
    pass


def is_positive_one_to_one(gamma: Sequence[int]) -> bool:
    positive = [g for g in gamma if g > 0]
    return len(positive) == len(set(positive))


def assignment_weight(eta: np.ndarray, gamma: Sequence[int]) -> float:
    eta = np.asarray(eta, dtype=float)
    idx = np.asarray(gamma, dtype=int) + 1
    return float(np.prod(eta[np.arange(len(idx)), idx]))


def neg_log_eta(eta: np.ndarray) -> np.ndarray:
    """``-log(eta)`` with zero entries mapped to ``SENTINEL``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("eta entries must be non-negative")
    out = np.full(eta.shape, SENTINEL)
    pos = eta > 0
    out[pos] = -np.log(eta[pos])
    return out


def build_eta(survival: np.ndarray, birth_r: np.ndarray, psi: np.ndarray, kappa_hat: float) -> np.ndarray:
    """Assemble the eta matrix for surviving rows followed by birth rows.

    Parameters
    ----------
    survival
        Survival probability of each existing track.
    birth_r
        Birth probability of each birth label.
    psi
        ``(rows, M + 1)`` array; column 0 is the expected misdetection
        probability, column ``j`` the expected detection probability times
        the likelihood of measurement ``j``.
    kappa_hat
        Clutter intensity dividing the detection columns.
    """
    if not kappa_hat > 0:
        raise ValueError("kappa_hat must be positive")
    exist = np.concatenate([np.asarray(survival, float), np.asarray(birth_r, float)])
    psi = np.asarray(psi, dtype=float).reshape(exist.size, -1)
    eta = np.empty((exist.size, psi.shape[1] + 1))
    eta[:, 0] = 1.0 - exist
    eta[:, 1] = exist * psi[:, 0]
    eta[:, 2:] = exist[:, None] * psi[:, 1:] / kappa_hat
    return eta


def enumerate_assignments(n_rows: int, n_meas: int) -> Iterator[Assignment]:
    """Every positive 1-1 extended assignment, in lexicographic order."""
    gamma = [0] * n_rows
    used = [False] * (n_meas + 1)

    def rec(i):
        if i == n_rows:
            yield tuple(gamma)
            return
        for g in range(-1, n_meas + 1):
            if g > 0:
                if used[g]:
                    continue
                used[g] = True
            gamma[i] = g
            yield from rec(i + 1)
            if g > 0:
                used[g] = False

    yield from rec(0)


def solve_lsa(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Rectangular min-cost assignment of every row.

    Entries at or above ``SENTINEL`` (or infinite) are forbidden. Raises
    ``InfeasibleAssignment`` when no complete row assignment exists.
    """
    cost = np.array(cost, dtype=float)
    cost[cost >= SENTINEL] = np.inf
    if cost.shape[0] == 0:
        return np.zeros(0, int), np.zeros(0, int), 0.0
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise InfeasibleAssignment("no feasible assignment") from exc
    total = float(cost[rows, cols].sum())
    if not np.isfinite(total):
        raise InfeasibleAssignment("no feasible assignment")
    return rows, cols, total


def _expand(neg_log: np.ndarray) -> np.ndarray:
    # Private death and miss columns per row turn the extended problem into a
    # plain rectangular assignment whose solutions biject with gamma.
    P, W = neg_log.shape
    M = W - 2
    C = np.full((P, M + 2 * P), np.inf)
    C[:, :M] = neg_log[:, 2:]
    r = np.arange(P)
    C[r, M + r] = neg_log[:, 0]
    C[r, M + P + r] = neg_log[:, 1]
    C[C >= SENTINEL] = np.inf
    return C


def _decode(cols: np.ndarray, P: int, M: int) -> Assignment:
    out = []
    for c in cols:
        c = int(c)
        if c < M:
            out.append(c + 1)
        elif c < M + P:
            out.append(DEATH)
        else:
            out.append(MISSED)
    return tuple(out)


def _solve_expanded(C: np.ndarray):
    try:
        rows, cols = linear_sum_assignment(C)
    except ValueError:
        return None
    total = float(C[rows, cols].sum())
    if not np.isfinite(total):
        return None
    return total, cols


def optimal_assignment(neg_log: np.ndarray) -> np.ndarray:
    """Minimum ``sum(-log eta)`` extended assignment; rows may each die or miss independently."""
    neg_log = np.asarray(neg_log, dtype=float)
    P, W = neg_log.shape
    if P == 0:
        return np.zeros(0, dtype=int)
    sol = _solve_expanded(_expand(neg_log))
    if sol is None:
        raise InfeasibleAssignment("no assignment with positive weight")
    return np.array(_decode(sol[1], P, W - 2), dtype=int)


def murty_kbest(eta: np.ndarray, K: int) -> list[tuple[Assignment, float]]:
    """The ``K`` heaviest positive-weight assignments, heaviest first.

    Equal weights are ordered lexicographically by assignment. Fewer than
    ``K`` are returned when fewer exist.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    eta = np.asarray(eta, dtype=float)
    P, W = eta.shape
    M = W - 2
    if P == 0:
        return [((), 1.0)]
    C0 = _expand(neg_log_eta(eta))
    first = _solve_expanded(C0)
    if first is None:
        return []
    heap = [(first[0], _decode(first[1], P, M), first[1], C0)]
    found: list[tuple[float, Assignment]] = []
    while heap:
        cost, gamma, cols, C = heapq.heappop(heap)
        if len(found) >= K:
            kth = found[K - 1][0]
            if cost > kth + 1e-9 * max(1.0, abs(kth)):
                break
        found.append((cost, gamma))
        work = C.copy()
        for r in range(P):
            c = int(cols[r])
            child = work.copy()
            child[r, c] = np.inf
            sol = _solve_expanded(child)
            if sol is not None:
                heapq.heappush(heap, (sol[0], _decode(sol[1], P, M), sol[1], child))
            keep = work[r, c]
            work[:, c] = np.inf
            work[r, :] = np.inf
            work[r, c] = keep
    ranked = [(g, assignment_weight(eta, g)) for _, g in found]
    ranked.sort(key=lambda gw: (-gw[1], gw[0]))
    return ranked[:K]


def gibbs_chain(eta: np.ndarray, sweeps: int, init: Sequence[int] | None = None,
                rng: np.random.Generator | None = None) -> Iterator[Assignment]:
    """Yield the state after each systematic-scan Gibbs sweep.

    Row ``i`` is redrawn from ``eta[i]`` with columns of measurements held by
    other rows zeroed, so the chain leaves ``prod_i eta_i(gamma_i)``
    invariant over valid assignments. Rows whose every option is blocked
    keep their current value.
    """
    eta = np.asarray(eta, dtype=float)
    P, W = eta.shape
    M = W - 2
    if sweeps < 1:
        raise ValueError("iterations must be >= 1")
    if init is None:
        gamma = [MISSED] * P
    else:
        gamma = [int(g) for g in init]
        if len(gamma) != P or any(g < -1 or g > M for g in gamma) or not is_positive_one_to_one(gamma):
            raise ValueError(f"invalid initial assignment {tuple(gamma)}")
    if rng is None:
        rng = np.random.default_rng()
    rows = eta.tolist()
    used = [False] * (M + 1)
    for g in gamma:
        if g > 0:
            used[g] = True
    uniforms = rng.random((sweeps, P)).tolist() if P else [[]] * sweeps
    cum = [0.0] * W
    for u in uniforms:
        for i in range(P):
            g = gamma[i]
            if g > 0:
                used[g] = False
            row = rows[i]
            total = row[0]
            cum[0] = total
            total += row[1]
            cum[1] = total
            for col in range(2, W):
                if not used[col - 1]:
                    total += row[col]
                cum[col] = total
            if total > 0.0:
                col = bisect.bisect_right(cum, u[i] * total)
                if col == W:
                    # u * total rounded up to total: take the last option with mass
                    col = bisect.bisect_left(cum, total)
                g = col - 1
            gamma[i] = g
            if g > 0:
                used[g] = True
        yield tuple(gamma)


def gibbs_sample(eta: np.ndarray, iterations: int, init: Sequence[int] | None = None,
                 rng: np.random.Generator | None = None) -> list[Assignment]:
    """Distinct assignments visited by ``gibbs_chain``, in first-visit order.

    The initial state is included; it is the all-misdetect assignment when
    ``init`` is omitted.
    """
    eta = np.asarray(eta, dtype=float)
    start = tuple([MISSED] * eta.shape[0]) if init is None else tuple(int(g) for g in init)
    seen = {start: None}
    for gamma in gibbs_chain(eta, iterations, start, rng):
        if gamma not in seen:
            seen[gamma] = None
    return list(seen)
