"""Backend selection for the sequential inner loops.

The compiled Cython module is used when it was built; otherwise the pure
NumPy fallback is imported.  Setting ``TVLDS_PURE_PYTHON=1`` in the
environment forces the fallback.

Both backends expose ``ar_states``, ``kalman_filter`` and ``rts_smoother``
with identical signatures.  Inputs must be C-contiguous float64 arrays; the
wrappers here take care of that.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("TVLDS_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _module(backend):
    if backend is None:
        return _impl
    try:
        return BACKENDS[backend]
    except KeyError:
        raise ValueError(f"backend {backend!r} not available; have {sorted(BACKENDS)}")


def ar_states(A, beta0, noise, backend=None):
    """States ``beta_{t+1} = A beta_t + noise_t`` starting at ``beta0``."""
    return _module(backend).ar_states(_c(A), _c(beta0), _c(noise))


def kalman_filter(xs, ys, A, Q, r2, m0, P0, backend=None):
    return _module(backend).kalman_filter(
        _c(xs), _c(ys), _c(A), _c(Q), float(r2), _c(m0), _c(P0)
    )


def rts_smoother(pm, pP, fm, fP, A, backend=None):
    return _module(backend).rts_smoother(_c(pm), _c(pP), _c(fm), _c(fP), _c(A))
