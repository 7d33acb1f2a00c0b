"""Closed-form Kalman and Beta identities used by every track update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rfs import BetaDist, GaussBeta, Gaussian

_LOG_2PI = np.log(2.0 * np.pi)
VARIANCE_CLAMP = 0.999


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """Linear dynamics ``x+ = F x + w``, ``w ~ N(0, Q)``; sensor ``z = H x + v``, ``v ~ N(0, R)``."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "H", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.F.shape[0]
        d = self.H.shape[0]
        if self.F.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("F and Q must be square with matching size")
        if self.H.shape != (d, n) or self.R.shape != (d, d):
            raise ValueError("H must map state to measurement space and R match it")
        for name in ("Q", "R"):
            m = getattr(self, name)
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


def constant_velocity_model(T: float = 1.0, v_f: float = 5.0, v_r: float = 3.0) -> LinearGaussianModel:
    """2-D constant-velocity model over the state ``[x, y, xdot, ydot]``.

    The process noise is the piecewise-constant white acceleration
    covariance with intensity ``v_f**2``; position is observed with
    noise standard deviation ``v_r`` per axis.
    """
    I2 = np.eye(2)
    F = np.block([[I2, T * I2], [np.zeros((2, 2)), I2]])
    Q = v_f**2 * np.block([[T**4 / 4 * I2, T**3 / 2 * I2], [T**3 / 2 * I2, T**2 * I2]])
    H = np.hstack([I2, np.zeros((2, 2))])
    R = v_r**2 * I2
    return LinearGaussianModel(F, Q, H, R)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kalman_predict(prior: Gaussian, model: LinearGaussianModel) -> Gaussian:
    m = np.asarray(prior.mean, dtype=float)
    if m.shape != (model.state_dim,):
        raise ValueError(f"state dimension {m.shape} does not match model ({model.state_dim},)")
    F = model.F
    return Gaussian(F @ m, _symmetrize(F @ prior.cov @ F.T + model.Q))


def _innovation(prior: Gaussian, model: LinearGaussianModel):
    m = np.asarray(prior.mean, dtype=float)
    if m.shape != (model.state_dim,):
        raise ValueError(f"state dimension {m.shape} does not match model ({model.state_dim},)")
    H, P = model.H, prior.cov
    S = _symmetrize(H @ P @ H.T + model.R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc
    PHt = P @ H.T
    K = np.linalg.solve(S, PHt.T).T
    return m, H @ m, S, L, K


def gaussian_logpdf(z: np.ndarray, mean: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Log-density of rows of ``z`` under ``N(mean, L L^T)``."""
    diff = np.atleast_2d(z) - mean
    sol = np.linalg.solve(L, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (mean.size * _LOG_2PI + logdet + maha)


def _joseph(P: np.ndarray, K: np.ndarray, model: LinearGaussianModel) -> np.ndarray:
    A = np.eye(P.shape[0]) - K @ model.H
    return _symmetrize(A @ P @ A.T + K @ model.R @ K.T)


def kalman_update(prior: Gaussian, z, model: LinearGaussianModel) -> tuple[float, Gaussian]:
    """Return the measurement likelihood ``q(z)`` and the posterior Gaussian."""
    log_q, post = kalman_update_log(prior, z, model)
    return float(np.exp(log_q)), post


def kalman_update_log(prior: Gaussian, z, model: LinearGaussianModel) -> tuple[float, Gaussian]:
    m, zhat, _, L, K = _innovation(prior, model)
    z = np.asarray(z, dtype=float).reshape(model.meas_dim)
    log_q = float(gaussian_logpdf(z, zhat, L)[0])
    return log_q, Gaussian(m + K @ (z - zhat), _joseph(prior.cov, K, model))


def kalman_update_many(prior: Gaussian, Z: np.ndarray, model: LinearGaussianModel):
    """Vectorized update against every row of ``Z``.

    Returns ``(log_q, means, cov)`` where ``means[j]`` is the posterior mean
    for ``Z[j]``; the posterior covariance is shared by all measurements.
    """
    m, zhat, _, L, K = _innovation(prior, model)
    Z = np.asarray(Z, dtype=float).reshape(-1, model.meas_dim)
    cov = _joseph(prior.cov, K, model)
    if Z.shape[0] == 0:
        return np.zeros(0), np.zeros((0, m.size)), cov
    log_q = gaussian_logpdf(Z, zhat, L)
    means = m + (Z - zhat) @ K.T
    return log_q, means, cov


def kalman_update_standard(prior: Gaussian, z, model: LinearGaussianModel) -> Gaussian:
    """Textbook ``(I - K H) P`` covariance form, kept for cross-checking the Joseph form."""
    m, zhat, _, _, K = _innovation(prior, model)
    z = np.asarray(z, dtype=float).reshape(model.meas_dim)
    P = (np.eye(m.size) - K @ model.H) @ prior.cov
    return Gaussian(m + K @ (z - zhat), _symmetrize(P))


def beta_moments(b: BetaDist) -> tuple[float, float]:
    return b.mean, b.variance


def beta_predict_checked(prior: BetaDist, inflation: float) -> tuple[BetaDist, bool]:
    """Moment-matched Beta prediction with the variance inflated by ``inflation``.

    Returns the predicted Beta and whether the inflated variance had to be
    clamped to ``0.999 * mu * (1 - mu)`` to keep the density proper.
    """
    if inflation < 1.0:
        raise ValueError("inflation must be >= 1")
    mu, var = beta_moments(prior)
    if inflation == 1.0:
        return prior, False
    var = inflation * var
    limit = mu * (1.0 - mu)
    clamped = var >= limit
    if clamped:
        var = VARIANCE_CLAMP * limit
    common = limit / var - 1.0
    return BetaDist(common * mu, common * (1.0 - mu)), clamped


def beta_predict(prior: BetaDist, inflation: float) -> BetaDist:
    return beta_predict_checked(prior, inflation)[0]


def beta_update_detected(prior: BetaDist) -> tuple[float, BetaDist]:
    """``a * Beta(a; s, t) = s/(s+t) * Beta(a; s+1, t)``."""
    return prior.s / (prior.s + prior.t), BetaDist(prior.s + 1.0, prior.t)


def beta_update_missed(prior: BetaDist) -> tuple[float, BetaDist]:
    """``(1 - a) * Beta(a; s, t) = t/(s+t) * Beta(a; s, t+1)``.

    The scale is formed as ``1 - s/(s+t)`` so that it sums with the detected
    scale to exactly 1.0 in floating point.
    """
    return 1.0 - prior.s / (prior.s + prior.t), BetaDist(prior.s, prior.t + 1.0)


def gauss_beta_predict(prior: GaussBeta, model: LinearGaussianModel, inflation: float) -> tuple[GaussBeta, bool]:
    beta, clamped = beta_predict_checked(prior.detect, inflation)
    return GaussBeta(kalman_predict(prior.kinematic, model), beta), clamped
