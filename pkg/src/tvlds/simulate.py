"""Seeded trajectory generation and CSV round-tripping.

Random stream
-------------
Each trajectory uses its own ``numpy.random.Generator`` over the counter-based
Philox-4x64 bit generator, keyed by ``SeedSequence([seed, T])``.  Including
``T`` in the key makes trajectories of different lengths independent rather
than prefixes of one another.

Standard normals are consumed in this fixed order:

1. ``d`` draws for the initial state ``beta_0 ~ N(0, Sigma_inf)``;
2. for each step ``t = 0..T-1``, ``d`` draws for ``x_t``, one for ``eps_t``,
   then ``d`` for ``w_t`` (the final ``w_{T-1}`` is drawn but unused).
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import DimensionError, ValidationError
from .model import PSD_TOL, SystemParams, lyapunov_solve, validate_params


@dataclass(frozen=True, eq=False)
class Trajectory:
    xs: np.ndarray
    ys: np.ndarray
    betas: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        if xs.shape[0] != ys.shape[0]:
            raise DimensionError(f"xs has {xs.shape[0]} rows but ys has length {ys.shape[0]}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if self.betas is not None:
            betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
            if betas.shape != xs.shape:
                raise DimensionError(f"betas has shape {betas.shape}, expected {xs.shape}")
            object.__setattr__(self, "betas", betas)

    @property
    def T(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def digest(self) -> str:
        """Short SHA-256 of the observed data ``(xs, ys)``."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.xs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.ys, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def make_rng(seed: int, T: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(T)])))


def psd_factor(cov) -> np.ndarray:
    """Symmetric square root of a PSD matrix, eigenvalues clamped at zero."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    off = cov - np.diag(np.diag(cov))
    if not np.any(off):
        diag = np.diag(cov)
        if np.any(diag < -PSD_TOL):
            raise ValidationError(f"covariance is not PSD: lambda_min = {diag.min():.6g}")
        return np.diag(np.sqrt(np.clip(diag, 0.0, None)))
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam[0] < -PSD_TOL:
        raise ValidationError(f"covariance is not PSD: lambda_min = {lam[0]:.6g}")
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def gaussian_vector(cov, rng: np.random.Generator) -> np.ndarray:
    L = psd_factor(cov)
    return L @ rng.standard_normal(L.shape[0])


def simulate_trajectory(
    params: SystemParams, T: int, seed: int, keep_states: bool = False
) -> Trajectory:
    """Draw one trajectory of length ``T`` with a stationary initial state."""
    params = validate_params(params)
    if T < 1:
        raise ValidationError(f"T must be positive, got {T}")
    d = params.dim
    stat = lyapunov_solve(params.A, params.sigma_w)
    rng = make_rng(seed, T)
    beta0 = gaussian_vector(stat.sigma_inf, rng)
    block = rng.standard_normal((T, 2 * d + 1))
    xs = np.ascontiguousarray(block[:, :d])
    eps = params.sigma_eps * block[:, d]
    noise = block[: T - 1, d + 1:] @ psd_factor(params.sigma_w).T
    betas = kernels.ar_states(params.A, beta0, noise)
    ys = np.einsum("ti,ti->t", xs, betas) + eps
    return Trajectory(xs=xs, ys=ys, betas=betas if keep_states else None, seed=int(seed))


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_to_csv(traj: Trajectory, path=None) -> str:
    d = traj.dim
    header = ["t", "y"] + [f"x_{i}" for i in range(d)]
    if traj.betas is not None:
        header += [f"beta_{i}" for i in range(d)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t in range(traj.T):
        row = [str(t), _fmt(traj.ys[t])] + [_fmt(v) for v in traj.xs[t]]
        if traj.betas is not None:
            row += [_fmt(v) for v in traj.betas[t]]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def trajectory_from_csv(path) -> Trajectory:
    return parse_trajectory_csv(Path(path).read_text())


def parse_trajectory_csv(text: str) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValidationError("empty trajectory CSV")
    header = rows[0]
    if header[:2] != ["t", "y"]:
        raise ValidationError(f"trajectory CSV must start with 't,y', got {header[:2]}")
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    bcols = [i for i, h in enumerate(header) if h.startswith("beta_")]
    d = len(xcols)
    if d == 0 or (bcols and len(bcols) != d):
        raise ValidationError(f"malformed trajectory CSV header: {header}")
    if [header[i] for i in xcols] != [f"x_{i}" for i in range(d)]:
        raise ValidationError(f"feature columns out of order: {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    if not np.array_equal(data[:, 0], np.arange(data.shape[0])):
        raise ValidationError("column t must enumerate 0..T-1")
    return Trajectory(
        xs=data[:, xcols],
        ys=data[:, 1],
        betas=data[:, bcols] if bcols else None,
    )
