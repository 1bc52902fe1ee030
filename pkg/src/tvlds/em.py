"""EM baseline: Kalman filter, RTS smoother and the M-step for ``A``.

Only the transition matrix is estimated; ``sigma_w`` and ``sigma_eps`` are
treated as known.  Indexing of the smoothed second moments:

* ``s_t[t]     = E[beta_t beta_t^T | all data]``,            ``t = 0..T-1``
* ``s_t_tm1[t] = E[beta_{t+1} beta_t^T | all data]``,        ``t = 0..T-2``

so the M-step is ``A <- (sum_t s_t_tm1[t]) (sum_t s_t[t])^{-1}`` with both
sums over ``t = 0..T-2``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import (
    DegenerateMStepError,
    DegeneratePredictionError,
    InsufficientDataError,
    NumericalError,
    ValidationError,
)
from .model import lyapunov_solve, spectral_radius
from .simulate import Trajectory

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 500
DEFAULT_TOL = 1e-6
INIT_RADIUS = 0.95


@dataclass(frozen=True, eq=False)
class FilterResult:
    pred_means: np.ndarray
    pred_covs: np.ndarray
    filt_means: np.ndarray
    filt_covs: np.ndarray
    loglik: float


@dataclass(frozen=True, eq=False)
class SmootherResult:
    smooth_means: np.ndarray
    smooth_covs: np.ndarray
    lag_one_covs: np.ndarray
    s_t: np.ndarray
    s_t_tm1: np.ndarray


@dataclass(eq=False)
class EMEstimate:
    a_hat: np.ndarray
    init: np.ndarray
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "sigma_hat": None,
            "m_hat": None,
            "a_hat": self.a_hat.tolist(),
            "sigma_eps_sq_hat": None,
            "diagnostics": {},
            "loglik_trace": list(self.loglik_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "init": self.init.tolist(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def kalman_filter(traj: Trajectory, A, sigma_w, sigma_eps, init_mean, init_cov,
                  backend=None) -> FilterResult:
    """Forward pass for ``y_t = x_t^T beta_t + eps_t``.

    ``pred_*[t]`` condition on ``y_0..y_{t-1}`` (so ``pred_*[0]`` is the
    prior), ``filt_*[t]`` on ``y_0..y_t``.  ``loglik`` is the exact Gaussian
    log-likelihood of all labels given the features.
    """
    d = traj.dim
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(sigma_w, dtype=float))
    m0 = np.asarray(init_mean, dtype=float).reshape(d)
    P0 = np.atleast_2d(np.asarray(init_cov, dtype=float))
    if A.shape != (d, d) or Q.shape != (d, d) or P0.shape != (d, d):
        raise ValidationError("A, sigma_w and init_cov must all be d x d")
    pm, pP, fm, fP, ll = kernels.kalman_filter(
        traj.xs, traj.ys, A, Q, float(sigma_eps) ** 2, m0, P0, backend=backend
    )
    return FilterResult(pm, pP, fm, fP, float(ll))


def rts_smoother(filt: FilterResult, A, backend=None) -> SmootherResult:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sm, sP, lag = kernels.rts_smoother(
        filt.pred_means, filt.pred_covs, filt.filt_means, filt.filt_covs, A,
        backend=backend,
    )
    s_t = sP + sm[:, :, None] * sm[:, None, :]
    s_t_tm1 = lag + sm[1:, :, None] * sm[:-1, None, :]
    return SmootherResult(sm, sP, lag, s_t, s_t_tm1)


def m_step(smooth: SmootherResult) -> np.ndarray:
    lagged = smooth.s_t_tm1.sum(axis=0)
    S = smooth.s_t[:-1].sum(axis=0)
    S = 0.5 * (S + S.T)
    lam = np.linalg.eigvalsh(S)
    if not lam[0] > 1e-12 * max(abs(lam[-1]), 1e-300):
        raise DegenerateMStepError(
            f"summed state second moment is singular: lambda_min = {lam[0]:.3e}"
        )
    return np.linalg.solve(S, lagged.T).T


def em_step(traj: Trajectory, A_current, sigma_w, sigma_eps, init_mean, init_cov,
            backend=None):
    """One EM iteration; returns ``(A_next, loglik(A_current))``."""
    if traj.T < 2:
        raise InsufficientDataError("EM needs T >= 2")
    filt = kalman_filter(traj, A_current, sigma_w, sigma_eps, init_mean, init_cov,
                         backend=backend)
    try:
        smooth = rts_smoother(filt, A_current, backend=backend)
    except DegeneratePredictionError as exc:
        raise DegenerateMStepError(
            "E-step produced singular predicted covariances; no state signal to fit"
        ) from exc
    return m_step(smooth), filt.loglik


def stationary_prior(A, sigma_w):
    """Filter initialisation ``(0, Sigma_inf(A))``, or a wide fallback if ``A`` is unstable."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    W = np.atleast_2d(np.asarray(sigma_w, dtype=float))
    d = A.shape[0]
    if spectral_radius(A) < 1.0:
        return np.zeros(d), lyapunov_solve(A, W).sigma_inf
    return np.zeros(d), 10.0 * float(np.trace(W)) * np.eye(d)


def default_init(traj: Trajectory, sigma_eps: Optional[float]) -> np.ndarray:
    """Warm start: the CM estimate, rescaled to spectral radius 0.95 if unstable.

    Falls back to the zero matrix when the CM estimate cannot be formed.
    """
    from .cm import estimate_cm

    try:
        a = estimate_cm(traj, sigma_eps_known=sigma_eps).a_hat
    except NumericalError as exc:
        log.info("CM warm start unavailable (%s); using A = 0", exc)
        return np.zeros((traj.dim, traj.dim))
    rho = spectral_radius(a)
    if rho >= 1.0:
        a = a * (INIT_RADIUS / rho)
    return a


def em_fit(
    traj: Trajectory,
    sigma_w,
    sigma_eps: float,
    a_init=None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    prior: str = "fixed",
    backend=None,
) -> EMEstimate:
    """Run EM on ``A`` until successive iterates differ by less than ``tol``.

    Parameters
    ----------
    prior : {"fixed", "stationary"}
        Initial-state distribution fed to every filter pass.  ``"fixed"``
        uses the stationary prior of ``a_init`` throughout; the M-step is then
        the exact maximiser and the log-likelihood trace is non-decreasing.
        ``"stationary"`` recomputes the prior from each iterate, which ties
        the prior to ``A`` and forfeits the ascent guarantee.
    """
    if max_iters < 0:
        raise ValidationError(f"max_iters must be >= 0, got {max_iters}")
    if prior not in ("fixed", "stationary"):
        raise ValidationError(f"prior must be 'fixed' or 'stationary', got {prior!r}")
    if a_init is None:
        a_init = default_init(traj, sigma_eps)
    A = np.atleast_2d(np.asarray(a_init, dtype=float)).copy()
    est = EMEstimate(a_hat=A.copy(), init=A.copy())
    m0, P0 = stationary_prior(A, sigma_w)
    for k in range(max_iters):
        if prior == "stationary" and k > 0:
            m0, P0 = stationary_prior(A, sigma_w)
        A_next, ll = em_step(traj, A, sigma_w, sigma_eps, m0, P0, backend=backend)
        est.loglik_trace.append(ll)
        est.iterations = k + 1
        step = float(np.linalg.norm(A_next - A))
        A = A_next
        if step < tol:
            est.converged = True
            break
    est.a_hat = A
    return est
