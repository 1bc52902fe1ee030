"""System description, stability analysis and theoretical error bounds.

The data-generating process is

    beta_{t+1} = A beta_t + w_t,        w_t ~ N(0, sigma_w)
    y_t        = x_t^T beta_t + eps_t,  eps_t ~ N(0, sigma_eps^2)

with features x_t ~ N(0, I_d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    InstabilityError,
    NonConvergenceError,
    ValidationError,
)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
TAU_MAX_ITERS = 100_000


def _as_square(A, name="A") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


@dataclass(frozen=True)
class SystemParams:
    """Ground-truth model ``(A, sigma_w, sigma_eps)``.

    Construction only coerces shapes; call :func:`validate_params` to check
    the invariants.
    """

    A: np.ndarray
    sigma_w: np.ndarray
    sigma_eps: float

    def __post_init__(self):
        object.__setattr__(self, "A", _as_square(self.A, "A"))
        object.__setattr__(self, "sigma_w", _as_square(self.sigma_w, "sigma_w"))
        object.__setattr__(self, "sigma_eps", float(self.sigma_eps))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "sigma_w": self.sigma_w.tolist(),
            "sigma_eps": self.sigma_eps,
        }


@dataclass(frozen=True)
class StationarySolution:
    sigma_inf: np.ndarray
    spectral_radius: float


@dataclass(frozen=True)
class TheoryBound:
    """High-probability error bounds for the covariance method.

    All values are computed with the single universal constant
    ``c_convention`` substituted everywhere the analysis leaves it
    unspecified, so they hold only up to that constant.
    """

    gamma: float
    tau: float
    c_convention: float
    bound_sigma: float
    bound_cross: float
    bound_A: float
    min_T: float
    T: int = field(default=0)
    delta: float = field(default=float("nan"))

    @property
    def sample_size_ok(self) -> bool:
        return self.T >= self.min_T

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "delta": self.delta,
            "gamma": self.gamma,
            "tau": self.tau,
            "c_convention": self.c_convention,
            "bound_sigma": self.bound_sigma,
            "bound_cross": self.bound_cross,
            "bound_A": self.bound_A,
            "min_T": self.min_T,
            "sample_size_ok": self.sample_size_ok,
        }


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = _as_square(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def operator_norm(A) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(np.atleast_2d(A), 2))


def validate_params(params: SystemParams) -> SystemParams:
    """Check the :class:`SystemParams` invariants.

    Returns ``params`` itself when ``sigma_w`` is exactly symmetric, otherwise
    a copy with ``sigma_w`` replaced by its symmetric part (allowed only when
    the asymmetry is below ``1e-12``).
    """
    d = params.dim
    if params.sigma_w.shape != (d, d):
        raise DimensionError(
            f"sigma_w has shape {params.sigma_w.shape}, expected {(d, d)}"
        )
    if not np.all(np.isfinite(params.A)) or not np.all(np.isfinite(params.sigma_w)):
        raise ValidationError("A and sigma_w must be finite")
    if not math.isfinite(params.sigma_eps) or params.sigma_eps < 0:
        raise ValidationError(
            f"sigma_eps must be a nonnegative real, got {params.sigma_eps}"
        )
    asym = float(np.max(np.abs(params.sigma_w - params.sigma_w.T)))
    if asym > SYMMETRY_TOL:
        raise ValidationError(
            f"sigma_w is not symmetric: max |S - S^T| = {asym:.3e}"
        )
    lam_min = float(np.linalg.eigvalsh(params.sigma_w)[0])
    if lam_min < -PSD_TOL:
        raise ValidationError(
            f"sigma_w is not positive semidefinite: lambda_min = {lam_min:.6g}"
        )
    if asym == 0.0:
        return params
    sym = 0.5 * (params.sigma_w + params.sigma_w.T)
    return SystemParams(params.A, sym, params.sigma_eps)


def lyapunov_solve(A, sigma_w) -> StationarySolution:
    """Solve ``P = A P A^T + sigma_w`` for the stationary covariance.

    Uses a dense solve of ``(I - A kron A) vec(P) = vec(sigma_w)``, which is
    exact to rounding for the small dimensions handled here.
    """
    A = _as_square(A)
    W = _as_square(sigma_w, "sigma_w")
    d = A.shape[0]
    if W.shape != (d, d):
        raise DimensionError(f"sigma_w has shape {W.shape}, expected {(d, d)}")
    asym = float(np.max(np.abs(W - W.T))) if d else 0.0
    if asym > SYMMETRY_TOL:
        raise ValidationError(f"sigma_w is not symmetric: max |S - S^T| = {asym:.3e}")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise InstabilityError(f"A is not stable: spectral radius {rho:.6g} >= 1")
    lhs = np.eye(d * d) - np.kron(A, A)
    P = np.linalg.solve(lhs, W.reshape(-1)).reshape(d, d)
    P = 0.5 * (P + P.T)
    return StationarySolution(sigma_inf=P, spectral_radius=rho)


def gelfand_tau(A, gamma: float, max_iters: int = TAU_MAX_ITERS) -> float:
    """``sup_k ||A^k|| gamma^{-k}`` over ``k >= 0``.

    Stops at the first ``k >= 1`` whose term is at most one: by
    submultiplicativity every later term is then bounded by the running
    supremum over smaller powers.
    """
    A = _as_square(A)
    gamma = float(gamma)
    rho = spectral_radius(A)
    if not (rho < gamma < 1.0):
        raise DomainError(
            f"gamma must satisfy rho(A) < gamma < 1; got gamma={gamma}, rho(A)={rho:.6g}"
        )
    d = A.shape[0]
    power = np.eye(d)
    sup = 1.0
    for k in range(1, max_iters + 1):
        power = power @ A
        term = operator_norm(power) / gamma**k
        if term <= 1.0:
            return sup
        sup = max(sup, term)
    raise NonConvergenceError(
        f"gelfand_tau did not terminate within {max_iters} powers (gamma={gamma})"
    )


def _bracket(sigma_eps, tau_pow, gamma, sigma_norm, d, T, delta, log_weight):
    log_term = math.log(2.0 * T / delta) ** 2
    return sigma_eps**4 + tau_pow / (1.0 - gamma**2) * sigma_norm**2 * (
        d**2 + log_weight * log_term
    )


def a_error_bound(
    *, d, T, delta, gamma, tau, sigma_eps, sigma_norm, lam_min, a_norm,
    c_outer=1.0, c_radical=1.0,
):
    """Right-hand side of the transition-matrix error bound.

    The universal constant appears twice, once in front and once under the
    square root; the two occurrences are exposed separately.
    """
    if lam_min <= 0:
        return math.inf
    inner = _bracket(sigma_eps, tau**3, gamma, sigma_norm, d, T, delta, 4.0)
    return c_outer * (1.0 + a_norm) / lam_min * math.sqrt(c_radical * d**2 / (T * delta) * inner)


def min_sample_size(*, d, T, delta, gamma, tau, sigma_eps, sigma_norm, lam_min, c=1.0):
    """Sample size needed for the ``A`` error bound, evaluated at ``T``.

    The threshold depends on ``T`` through a log term, so it is a check
    ``T >= min_T(T)`` rather than a closed-form minimum.
    """
    if lam_min <= 0:
        return math.inf
    inner = _bracket(sigma_eps, tau**3, gamma, sigma_norm, d, T, delta, 4.0)
    return c * d**2 / (lam_min**2 * delta) * inner


def theoretical_bound(
    params: SystemParams,
    stat: StationarySolution,
    T: int,
    delta: float,
    gamma: float,
    c_convention: float = 1.0,
) -> TheoryBound:
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not c_convention > 0:
        raise DomainError(f"c_convention must be positive, got {c_convention}")
    tau = gelfand_tau(params.A, gamma)
    d = params.dim
    c = float(c_convention)
    sig = params.sigma_eps
    sigma_norm = operator_norm(stat.sigma_inf)
    lam_min = float(np.linalg.eigvalsh(stat.sigma_inf)[0])
    a_norm = operator_norm(params.A)

    scale = c * d**2 / (T * delta)
    bound_sigma = math.sqrt(
        scale * _bracket(sig, tau**2, gamma, sigma_norm, d, T, delta, 1.0)
    )
    bound_cross = math.sqrt(
        scale * _bracket(sig, tau**3, gamma, sigma_norm, d, T, delta, 1.0)
    )
    common = dict(
        d=d, T=T, delta=delta, gamma=gamma, tau=tau, sigma_eps=sig,
        sigma_norm=sigma_norm, lam_min=lam_min,
    )
    bound_A = a_error_bound(a_norm=a_norm, c_outer=c, c_radical=c, **common)
    min_T = min_sample_size(c=c, **common)
    return TheoryBound(
        gamma=float(gamma), tau=tau, c_convention=c, bound_sigma=bound_sigma,
        bound_cross=bound_cross, bound_A=bound_A, min_T=min_T, T=int(T),
        delta=float(delta),
    )
