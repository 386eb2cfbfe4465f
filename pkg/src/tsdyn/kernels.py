"""Kernel backend selection.

The compiled extension is used when it imports; set ``TSDYN_PURE_PYTHON=1``
to force the reference implementation.  Inputs are normalized here so both
backends see C-contiguous float64 arrays and int64 indices.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("TSDYN_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    return _kernels_py


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _q(q, N, n):
    return np.zeros((N, n)) if q is None else _f(q)


def affine_forward(phi_tab, phi_idx, q, x0, backend=None):
    x0 = _f(x0)
    return _impl(backend).affine_forward(_f(phi_tab), _i(phi_idx), _q(q, len(phi_idx), x0.size), x0)


def projected_forward(phi_tab, phi_idx, proj_tab, proj_idx, q, x0, backend=None):
    x0 = _f(x0)
    return _impl(backend).projected_forward(
        _f(phi_tab), _i(phi_idx), _f(proj_tab), _i(proj_idx), _q(q, len(phi_idx), x0.size), x0
    )


def projected_backward(phiinv_tab, phi_idx, proj_tab, proj_idx, q, xN, backend=None):
    xN = _f(xN)
    return _impl(backend).projected_backward(
        _f(phiinv_tab), _i(phi_idx), _f(proj_tab), _i(proj_idx), _q(q, len(phi_idx), xN.size), xN
    )


def transition_products(phi_tab, phi_idx, X0, backend=None):
    return _impl(backend).transition_products(_f(phi_tab), _i(phi_idx), _f(X0))
