"""Pure NumPy versions of the compiled inner loops in ``_ckernels.pyx``."""
import math

import numpy as np

from .errors import DegenerateInnovationError, DegeneratePredictionError

_LOG2PI = math.log(2.0 * math.pi)


def ar_states(A, beta0, noise):
    T = noise.shape[0] + 1
    out = np.empty((T, A.shape[0]))
    out[0] = beta0
    for t in range(T - 1):
        out[t + 1] = A @ out[t] + noise[t]
    return out


def kalman_filter(xs, ys, A, Q, r2, m0, P0):
    T, d = xs.shape
    pm = np.empty((T, d))
    pP = np.empty((T, d, d))
    fm = np.empty((T, d))
    fP = np.empty((T, d, d))
    Qs = 0.5 * (Q + Q.T)
    pm[0] = m0
    pP[0] = 0.5 * (P0 + P0.T)
    loglik = 0.0
    for t in range(T):
        x = xs[t]
        px = pP[t] @ x
        s = r2 + x @ px
        if not s > 0.0:
            raise DegenerateInnovationError(f"innovation variance {s:.3e} <= 0 at t={t}")
        innov = ys[t] - x @ pm[t]
        loglik -= 0.5 * (_LOG2PI + math.log(s) + innov * innov / s)
        fm[t] = pm[t] + px * (innov / s)
        P = pP[t] - np.outer(px, px) / s
        fP[t] = 0.5 * (P + P.T)
        if t + 1 < T:
            pm[t + 1] = A @ fm[t]
            P = A @ fP[t] @ A.T + Qs
            pP[t + 1] = 0.5 * (P + P.T)
    return pm, pP, fm, fP, loglik


def _gain_transpose(P_pred, AF):
    scale = float(np.max(np.diag(P_pred))) if P_pred.size else 0.0
    try:
        L = np.linalg.cholesky(P_pred)
    except np.linalg.LinAlgError:
        L = None
    if L is None or not np.all(np.diag(L) ** 2 > 1e-14 * scale):
        raise DegeneratePredictionError(
            "predicted covariance is singular; smoother gain undefined"
        )
    return np.linalg.solve(L.T, np.linalg.solve(L, AF))


def rts_smoother(pm, pP, fm, fP, A):
    T, d = fm.shape
    sm = np.empty((T, d))
    sP = np.empty((T, d, d))
    lag = np.empty((max(T - 1, 0), d, d))
    if T == 0:
        return sm, sP, lag
    sm[-1] = fm[-1]
    sP[-1] = fP[-1]
    for t in range(T - 2, -1, -1):
        Jt = _gain_transpose(pP[t + 1], A @ fP[t])
        J = Jt.T
        sm[t] = fm[t] + J @ (sm[t + 1] - pm[t + 1])
        P = fP[t] + J @ (sP[t + 1] - pP[t + 1]) @ Jt
        sP[t] = 0.5 * (P + P.T)
        lag[t] = sP[t + 1] @ Jt
    return sm, sP, lag
