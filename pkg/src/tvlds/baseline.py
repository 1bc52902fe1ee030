"""Least-squares transition estimate when the states are observed."""
import numpy as np

from .errors import InsufficientDataError, SingularDesignError


def ols_full_state(betas) -> np.ndarray:
    """``(sum beta_{t+1} beta_t^T)(sum beta_t beta_t^T)^{-1}`` over ``t = 0..T-2``."""
    B = np.atleast_2d(np.asarray(betas, dtype=float))
    if B.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 states, got {B.shape[0]}")
    prev, nxt = B[:-1], B[1:]
    gram = prev.T @ prev
    cross = nxt.T @ prev
    lam = np.linalg.eigvalsh(gram)
    if not lam[0] > 1e-12 * max(abs(lam[-1]), 1e-300):
        raise SingularDesignError(f"state Gram matrix is singular: lambda_min = {lam[0]:.3e}")
    return np.linalg.solve(gram, cross.T).T
