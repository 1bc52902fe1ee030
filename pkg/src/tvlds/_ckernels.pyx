# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: state recursion, Kalman filter, RTS smoother.

Signatures and semantics mirror :mod:`tvlds._pykernels` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, M_PI

from .errors import DegenerateInnovationError, DegeneratePredictionError

cnp.import_array()


def ar_states(double[:, ::1] A, double[::1] beta0, double[:, ::1] noise):
    cdef Py_ssize_t d = A.shape[0]
    cdef Py_ssize_t T = noise.shape[0] + 1
    out_arr = np.empty((T, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, i, j
    cdef double acc
    for i in range(d):
        out[0, i] = beta0[i]
    for t in range(T - 1):
        for i in range(d):
            acc = noise[t, i]
            for j in range(d):
                acc += A[i, j] * out[t, j]
            out[t + 1, i] = acc
    return out_arr


def kalman_filter(double[:, ::1] xs, double[::1] ys, double[:, ::1] A,
                  double[:, ::1] Q, double r2, double[::1] m0, double[:, ::1] P0):
    cdef Py_ssize_t T = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    pm_arr = np.empty((T, d))
    pP_arr = np.empty((T, d, d))
    fm_arr = np.empty((T, d))
    fP_arr = np.empty((T, d, d))
    cdef double[:, ::1] pm = pm_arr
    cdef double[:, :, ::1] pP = pP_arr
    cdef double[:, ::1] fm = fm_arr
    cdef double[:, :, ::1] fP = fP_arr
    cdef double[::1] px = np.empty(d)
    cdef double[:, ::1] tmp = np.empty((d, d))
    cdef Py_ssize_t t, i, j, k
    cdef double s, innov, acc, loglik = 0.0
    cdef double log2pi = log(2.0 * M_PI)

    for i in range(d):
        pm[0, i] = m0[i]
        for j in range(d):
            pP[0, i, j] = 0.5 * (P0[i, j] + P0[j, i])

    for t in range(T):
        # innovation
        s = r2
        innov = ys[t]
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += pP[t, i, j] * xs[t, j]
            px[i] = acc
            s += xs[t, i] * acc
            innov -= xs[t, i] * pm[t, i]
        if not s > 0.0:
            raise DegenerateInnovationError(
                f"innovation variance {s:.3e} <= 0 at t={t}")
        loglik -= 0.5 * (log2pi + log(s) + innov * innov / s)
        for i in range(d):
            fm[t, i] = pm[t, i] + px[i] * innov / s
        for i in range(d):
            for j in range(i, d):
                acc = pP[t, i, j] - px[i] * px[j] / s
                fP[t, i, j] = acc
                fP[t, j, i] = acc
        if t + 1 == T:
            break
        # predict: A fP A^T + Q
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += A[i, j] * fm[t, j]
            pm[t + 1, i] = acc
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc += A[i, j] * fP[t, j, k]
                tmp[i, k] = acc
        for i in range(d):
            for j in range(i, d):
                acc = 0.0
                for k in range(d):
                    acc += tmp[i, k] * A[j, k]
                acc += 0.5 * (Q[i, j] + Q[j, i])
                pP[t + 1, i, j] = acc
                pP[t + 1, j, i] = acc
    return pm_arr, pP_arr, fm_arr, fP_arr, loglik


cdef int _chol_solve(double[:, ::1] P, double[:, ::1] L, double[:, ::1] B) except -1:
    """Overwrite B with P^{-1} B via Cholesky; raise on a non-PD pivot."""
    cdef Py_ssize_t d = P.shape[0]
    cdef Py_ssize_t n = B.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, scale = 0.0
    for i in range(d):
        if P[i, i] > scale:
            scale = P[i, i]
    for j in range(d):
        acc = P[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if not acc > 1e-14 * scale:
            raise DegeneratePredictionError(
                "predicted covariance is singular; smoother gain undefined")
        L[j, j] = sqrt(acc)
        for i in range(j + 1, d):
            acc = P[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    for k in range(n):
        for i in range(d):
            acc = B[i, k]
            for j in range(i):
                acc -= L[i, j] * B[j, k]
            B[i, k] = acc / L[i, i]
        for i in range(d - 1, -1, -1):
            acc = B[i, k]
            for j in range(i + 1, d):
                acc -= L[j, i] * B[j, k]
            B[i, k] = acc / L[i, i]
    return 0


def rts_smoother(double[:, ::1] pm, double[:, :, ::1] pP, double[:, ::1] fm,
                 double[:, :, ::1] fP, double[:, ::1] A):
    cdef Py_ssize_t T = fm.shape[0]
    cdef Py_ssize_t d = fm.shape[1]
    sm_arr = np.empty((T, d))
    sP_arr = np.empty((T, d, d))
    lag_arr = np.empty((max(T - 1, 0), d, d))
    cdef double[:, ::1] sm = sm_arr
    cdef double[:, :, ::1] sP = sP_arr
    cdef double[:, :, ::1] lag = lag_arr
    cdef double[:, ::1] L = np.zeros((d, d))
    cdef double[:, ::1] Jt = np.empty((d, d))   # holds J_t^T
    cdef double[:, ::1] D = np.empty((d, d))
    cdef double[:, ::1] E = np.empty((d, d))
    cdef double[::1] dm = np.empty(d)
    cdef Py_ssize_t t, i, j, k
    cdef double acc

    if T == 0:
        return sm_arr, sP_arr, lag_arr
    for i in range(d):
        sm[T - 1, i] = fm[T - 1, i]
        for j in range(d):
            sP[T - 1, i, j] = fP[T - 1, i, j]

    for t in range(T - 2, -1, -1):
        # J_t^T = pP[t+1]^{-1} A fP[t]
        for i in range(d):
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc += A[i, j] * fP[t, j, k]
                Jt[i, k] = acc
        _chol_solve(pP[t + 1], L, Jt)
        for i in range(d):
            dm[i] = sm[t + 1, i] - pm[t + 1, i]
            for j in range(d):
                D[i, j] = sP[t + 1, i, j] - pP[t + 1, i, j]
        # means
        for i in range(d):
            acc = fm[t, i]
            for j in range(d):
                acc += Jt[j, i] * dm[j]
            sm[t, i] = acc
        # E = D J_t^T ; sP[t] = fP[t] + J_t E
        for i in range(d):
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc += D[i, j] * Jt[j, k]
                E[i, k] = acc
        for i in range(d):
            for k in range(i, d):
                acc = fP[t, i, k]
                for j in range(d):
                    acc += Jt[j, i] * E[j, k]
                sP[t, i, k] = acc
                sP[t, k, i] = acc
        # Cov(beta_{t+1}, beta_t) = sP[t+1] J_t^T
        for i in range(d):
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc += sP[t + 1, i, j] * Jt[j, k]
                lag[t, i, k] = acc
    return sm_arr, sP_arr, lag_arr
