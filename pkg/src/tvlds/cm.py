"""The covariance method: two least-squares regressions and one linear solve.

Conventions
-----------
``svec`` flattens a symmetric ``d x d`` matrix row-major over the upper
triangle (diagonal included), scaling strict off-diagonal entries by
``sqrt(2)`` so that ``||svec(M)||_2 = ||M||_F``.

``vec`` is column-major: ``vec(B)[i + j*d] = B[i, j]``.  The cross regression
uses features ``vec(x_{t+1} x_t^T)`` and targets ``y_t y_{t+1}``, so its
coefficient is ``vec(M)`` with ``M`` estimating ``A Sigma_inf``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    InsufficientDataError,
    NearSingularSigmaError,
    SingularDesignError,
    ValidationError,
)
from .simulate import Trajectory

SQRT2 = math.sqrt(2.0)
SIGMA_FLOOR_REL = 1e-10


def _triu(d):
    return np.triu_indices(d)


def _svec_weights(d):
    i, j = _triu(d)
    return np.where(i == j, 1.0, SQRT2)


def svec(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"svec needs a square matrix, got {M.shape}")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > 1e-12:
        raise ValidationError(f"svec needs a symmetric matrix: max |M - M^T| = {asym:.3e}")
    return M[_triu(M.shape[0])] * _svec_weights(M.shape[0])


def svec_dim(n: int) -> int:
    """Matrix dimension ``d`` for an svec vector of length ``n = d(d+1)/2``."""
    d = int(round((math.sqrt(8 * n + 1) - 1) / 2))
    if d * (d + 1) // 2 != n:
        raise DimensionError(f"length {n} is not a triangular number")
    return d


def svec_inv(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    d = svec_dim(v.size)
    i, j = _triu(d)
    M = np.zeros((d, d))
    vals = v / _svec_weights(d)
    M[i, j] = vals
    M[j, i] = vals
    return M


def vec(B) -> np.ndarray:
    return np.asarray(B, dtype=float).reshape(-1, order="F")


def unvec(v, d) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape((d, d), order="F")


def build_sym_design(traj: Trajectory, sigma_eps_known: Optional[float] = None):
    """Rows ``svec(x_t x_t^T)`` and targets ``y_t^2`` (minus ``sigma_eps^2`` when known)."""
    xs = traj.xs
    d = xs.shape[1]
    i, j = _triu(d)
    features = xs[:, i] * xs[:, j] * _svec_weights(d)
    targets = traj.ys**2
    if sigma_eps_known is not None:
        targets = targets - float(sigma_eps_known) ** 2
    return features, targets


def build_cross_design(traj: Trajectory):
    if traj.T < 2:
        raise InsufficientDataError(f"cross design needs T >= 2, got T={traj.T}")
    xs = traj.xs
    d = xs.shape[1]
    outer = xs[1:, :, None] * xs[:-1, None, :]          # x_{t+1} x_t^T
    features = outer.transpose(0, 2, 1).reshape(-1, d * d)  # column-major vec
    targets = traj.ys[:-1] * traj.ys[1:]
    return features, targets


def least_squares_solve(features, targets, with_intercept: bool = False):
    """Ordinary least squares with a rank check on the Gram matrix.

    Returns
    -------
    coefficients : ndarray, shape (k,)
    intercept : float or None
    gram_lambda_min : float
        Smallest eigenvalue of the Gram matrix of the design actually solved
        (features plus a column of ones when ``with_intercept``).
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    z = np.asarray(targets, dtype=float).reshape(-1)
    N, k = F.shape
    if z.shape[0] != N:
        raise DimensionError(f"{N} feature rows but {z.shape[0]} targets")
    if with_intercept:
        F = np.hstack([F, np.ones((N, 1))])
    cols = F.shape[1]
    if N < cols:
        raise InsufficientDataError(f"need at least {cols} rows, got {N}")
    gram = F.T @ F
    lam = np.linalg.eigvalsh(gram)
    lam_min = float(lam[0])
    if lam_min <= 1e-12 * float(np.trace(gram)) / cols:
        raise SingularDesignError(
            f"rank-deficient design: gram lambda_min = {lam_min:.3e}, "
            f"lambda_max = {lam[-1]:.3e}"
        )
    coef, *_ = np.linalg.lstsq(F, z, rcond=None)
    if with_intercept:
        return coef[:k], float(coef[k]), lam_min
    return coef, None, lam_min


@dataclass(frozen=True)
class DesignDiagnostics:
    lambda_min_sym: float
    lambda_min_cross: float
    lambda_min_sigma_hat: float
    condition_sigma_hat: float
    residual_mean_sym: float
    residual_mean_cross: float


@dataclass(frozen=True, eq=False)
class CMEstimate:
    sigma_hat: np.ndarray
    m_hat: np.ndarray
    a_hat: np.ndarray
    sigma_eps_sq_hat: Optional[float]
    diag: DesignDiagnostics

    def to_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat.tolist(),
            "m_hat": self.m_hat.tolist(),
            "a_hat": self.a_hat.tolist(),
            "sigma_eps_sq_hat": self.sigma_eps_sq_hat,
            "diagnostics": asdict(self.diag),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def write_csvs(self, directory) -> None:
        """One CSV per matrix: ``sigma_hat.csv``, ``m_hat.csv``, ``a_hat.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("sigma_hat", "m_hat", "a_hat"):
            write_matrix_csv(getattr(self, name), directory / f"{name}.csv")


def write_matrix_csv(M, path) -> None:
    lines = [",".join(format(float(v), ".17g") for v in row) for row in np.atleast_2d(M)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def _gram_lambda_min(F):
    return float(np.linalg.eigvalsh(F.T @ F)[0])


def _solve_right(sigma_hat, m_hat):
    # A sigma = M  <=>  sigma^T A^T = M^T
    return np.linalg.solve(sigma_hat.T, m_hat.T).T


def estimate_cm(
    traj: Trajectory,
    sigma_eps_known: Optional[float] = None,
    clip_eigenvalues: bool = False,
) -> CMEstimate:
    """Covariance-method estimate of ``(Sigma_inf, A Sigma_inf, A)``.

    With ``sigma_eps_known=None`` the symmetric regression gets an intercept
    whose value estimates ``sigma_eps^2``.  ``clip_eigenvalues`` floors the
    spectrum of the estimated covariance before the final solve instead of
    failing on it.
    """
    d = traj.dim
    p = d * (d + 1) // 2
    need = p + d * d + 1
    if traj.T < need:
        raise InsufficientDataError(
            f"T={traj.T} too short for d={d}: need T >= {need} "
            f"({p} symmetric-design and {d * d} cross-design columns)"
        )
    with_intercept = sigma_eps_known is None

    F_sym, z_sym = build_sym_design(traj, sigma_eps_known)
    coef_sym, intercept, _ = least_squares_solve(F_sym, z_sym, with_intercept)
    sigma_hat = svec_inv(coef_sym)

    F_cross, z_cross = build_cross_design(traj)
    coef_cross, _, lam_cross = least_squares_solve(F_cross, z_cross)
    m_hat = unvec(coef_cross, d)

    lam = np.linalg.eigvalsh(sigma_hat)
    floor = SIGMA_FLOOR_REL * abs(float(np.trace(sigma_hat))) / d
    if clip_eigenvalues:
        w, V = np.linalg.eigh(sigma_hat)
        sigma_solve = (V * np.maximum(w, floor)) @ V.T
        sigma_solve = 0.5 * (sigma_solve + sigma_solve.T)
    else:
        if lam[0] <= floor:
            raise NearSingularSigmaError(
                f"estimated Sigma_inf is near-singular: lambda_min = {lam[0]:.6g} "
                f"<= floor {floor:.3e}",
                lambda_min=float(lam[0]),
            )
        sigma_solve = sigma_hat
    a_hat = _solve_right(sigma_solve, m_hat)

    res_sym = z_sym - F_sym @ coef_sym - (intercept or 0.0)
    res_cross = z_cross - F_cross @ coef_cross
    diag = DesignDiagnostics(
        lambda_min_sym=_gram_lambda_min(F_sym),
        lambda_min_cross=lam_cross,
        lambda_min_sigma_hat=float(lam[0]),
        condition_sigma_hat=float(abs(lam[-1]) / abs(lam[0])) if lam[0] != 0 else math.inf,
        residual_mean_sym=float(res_sym.mean()),
        residual_mean_cross=float(res_cross.mean()),
    )
    return CMEstimate(
        sigma_hat=sigma_hat,
        m_hat=m_hat,
        a_hat=a_hat,
        sigma_eps_sq_hat=intercept,
        diag=diag,
    )


def residual_autocorrelation(
    traj: Trajectory, est: CMEstimate, sigma_eps: float, max_lag: int
) -> np.ndarray:
    """Lag ``0..max_lag`` autocorrelations of the symmetric-regression residuals.

    Residuals are ``y_t^2 - x_t^T Sigma_hat x_t - sigma_eps^2``.
    """
    if max_lag < 0 or max_lag >= traj.T:
        raise DomainError(f"max_lag must lie in [0, T); got {max_lag} with T={traj.T}")
    quad = np.einsum("ti,ij,tj->t", traj.xs, est.sigma_hat, traj.xs)
    r = traj.ys**2 - quad - float(sigma_eps) ** 2
    r = r - r.mean()
    denom = float(r @ r)
    if denom == 0.0:
        raise DomainError("residuals are constant; autocorrelation undefined")
    T = r.size
    return np.array([float(r[: T - h] @ r[h:]) / denom for h in range(max_lag + 1)])
