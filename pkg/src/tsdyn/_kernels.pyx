# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sweeps; same contracts as :mod:`tsdyn._kernels_py`."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _matvec(const double[:, :, ::1] tab, Py_ssize_t j,
                         const double[::1] v, double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = tab.shape[1], m = tab.shape[2], r, c
    cdef double acc
    for r in range(n):
        acc = 0.0
        for c in range(m):
            acc = acc + tab[j, r, c] * v[c]
        out[r] = acc


def affine_forward(const double[:, :, ::1] phi_tab, const cnp.int64_t[::1] phi_idx,
                   const double[:, ::1] q, const double[::1] x0):
    cdef Py_ssize_t N = phi_idx.shape[0], n = x0.shape[0], k, r, c
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.empty((N + 1, n))
    cdef double[:, ::1] x = xa
    cdef double acc
    cdef Py_ssize_t j
    for r in range(n):
        x[0, r] = x0[r]
    with nogil:
        for k in range(N):
            j = phi_idx[k]
            for r in range(n):
                acc = q[k, r]
                for c in range(n):
                    acc = acc + phi_tab[j, r, c] * x[k, c]
                x[k + 1, r] = acc
    return xa


def projected_forward(const double[:, :, ::1] phi_tab, const cnp.int64_t[::1] phi_idx,
                      const double[:, :, ::1] proj_tab, const cnp.int64_t[::1] proj_idx,
                      const double[:, ::1] q, const double[::1] x0):
    cdef Py_ssize_t N = phi_idx.shape[0], n = x0.shape[0], k, r, c, j, p
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.empty((N + 1, n))
    cdef double[:, ::1] x = xa
    cdef double[::1] tmp = np.empty(n)
    cdef double acc
    for r in range(n):
        x[0, r] = x0[r]
    with nogil:
        for k in range(N):
            j = phi_idx[k]
            p = proj_idx[k + 1]
            for r in range(n):
                acc = q[k, r]
                for c in range(n):
                    acc = acc + phi_tab[j, r, c] * x[k, c]
                tmp[r] = acc
            for r in range(n):
                acc = 0.0
                for c in range(n):
                    acc = acc + proj_tab[p, r, c] * tmp[c]
                x[k + 1, r] = acc
    return xa


def projected_backward(const double[:, :, ::1] phiinv_tab, const cnp.int64_t[::1] phi_idx,
                       const double[:, :, ::1] proj_tab, const cnp.int64_t[::1] proj_idx,
                       const double[:, ::1] q, const double[::1] xN):
    cdef Py_ssize_t N = phi_idx.shape[0], n = xN.shape[0], k, r, c, j, p
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.empty((N + 1, n))
    cdef double[:, ::1] x = xa
    cdef double[::1] diff = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef double acc
    for r in range(n):
        x[N, r] = xN[r]
    with nogil:
        for k in range(N - 1, -1, -1):
            j = phi_idx[k]
            p = proj_idx[k]
            for r in range(n):
                diff[r] = x[k + 1, r] - q[k, r]
            for r in range(n):
                acc = 0.0
                for c in range(n):
                    acc = acc + phiinv_tab[j, r, c] * diff[c]
                tmp[r] = acc
            for r in range(n):
                acc = 0.0
                for c in range(n):
                    acc = acc + proj_tab[p, r, c] * tmp[c]
                x[k, r] = acc
    return xa


def transition_products(const double[:, :, ::1] phi_tab, const cnp.int64_t[::1] phi_idx,
                        const double[:, ::1] X0):
    cdef Py_ssize_t N = phi_idx.shape[0], n = X0.shape[0], m = X0.shape[1]
    cdef Py_ssize_t k, r, c, l, j
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Xa = np.empty((N + 1, n, m))
    cdef double[:, :, ::1] X = Xa
    cdef double acc
    for r in range(n):
        for c in range(m):
            X[0, r, c] = X0[r, c]
    with nogil:
        for k in range(N):
            j = phi_idx[k]
            for r in range(n):
                for c in range(m):
                    acc = 0.0
                    for l in range(n):
                        acc = acc + phi_tab[j, r, l] * X[k, l, c]
                    X[k + 1, r, c] = acc
    return Xa
