# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels``.

Same signatures and packed layout; see that module for the conventions.
The exact-expectation enumeration is compiled for state dimension 1 and 2
only, other dimensions route to the NumPy path.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, hypot
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    STOCHASTIC = 0
    SIMPLIFIED = 1
    UNIFORM = 2


cdef inline void _weights(const double[::1] p, Py_ssize_t off, int m, double* w) noexcept nogil:
    cdef Py_ssize_t size = 1, i
    cdef int j
    cdef double pj
    w[0] = 1.0
    for j in range(m):
        pj = p[off + j]
        for i in range(size):
            w[i + size] = w[i] * pj
            w[i] = w[i] * (1.0 - pj)
        size *= 2


cdef inline double _step(double ell, double a, double b, int m,
                         const double[::1] p, Py_ssize_t poff,
                         const double[::1] c, const double[::1] d, Py_ssize_t coff,
                         int variant, double* w) noexcept nogil:
    cdef double grow = a * ell + b
    cdef double total = 0.0, miss = 1.0, cbar, dbar
    cdef Py_ssize_t s, n = (<Py_ssize_t>1) << m
    cdef int j
    if variant == STOCHASTIC:
        _weights(p, poff, m, w)
        for s in range(n):
            total += w[s] / (c[coff + s] * ell + d[coff + s])
        return grow * total
    for j in range(m):
        miss *= 1.0 - p[poff + j]
    if variant == SIMPLIFIED:
        total = miss
        for j in range(m):
            s = (<Py_ssize_t>1) << j
            total += p[poff + j] / (c[coff + s] * ell + d[coff + s])
        return grow * total
    if m == 0:
        return grow
    cbar = c[coff + 1]
    for s in range(2, n):
        if c[coff + s] < cbar:
            cbar = c[coff + s]
    dbar = b * cbar / a + 1.0
    return grow * (miss + (1.0 - miss) / (cbar * ell + dbar))


def subset_weights(p):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef int m = pv.shape[0]
    out = np.empty((<Py_ssize_t>1) << m)
    cdef double[::1] ov = out
    _weights(pv, 0, m, &ov[0])
    return out


def step_value(double ell, double a, double b, p, c, d, int variant):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef int m = pv.shape[0]
    cdef double* w = <double*> malloc(((<Py_ssize_t>1) << m) * sizeof(double))
    if w == NULL:
        raise MemoryError()
    try:
        return _step(ell, a, b, m, pv, 0, cv, dv, 0, variant, w)
    finally:
        free(w)


def fold_bound(double ell0, const double[::1] a, const double[::1] b, const cnp.int64_t[::1] m,
               const double[::1] p_flat, const cnp.int64_t[::1] p_off,
               const double[::1] c_flat, const double[::1] d_flat, const cnp.int64_t[::1] cd_off,
               int variant, double[::1] trace=None):
    cdef Py_ssize_t k, K = a.shape[0]
    cdef int mmax = 0
    cdef double ell = ell0
    cdef bint record = trace is not None
    for k in range(K):
        if m[k] > mmax:
            mmax = <int> m[k]
    cdef double* w = <double*> malloc(((<Py_ssize_t>1) << mmax) * sizeof(double))
    if w == NULL:
        raise MemoryError()
    try:
        with nogil:
            if record:
                trace[0] = ell
            for k in range(K):
                ell = _step(ell, a[k], b[k], <int> m[k], p_flat, p_off[k],
                            c_flat, d_flat, cd_off[k], variant, w)
                if record:
                    trace[k + 1] = ell
    finally:
        free(w)
    return ell


def fold_covariance(P, F, Q, M):
    cdef Py_ssize_t n = np.shape(P)[0]
    if n != 2:
        from . import _pykernels
        return _pykernels.fold_covariance(P, F, Q, M)
    cdef const double[:, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef const double[:, :, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, :, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef double p00 = P[0][0], p01 = 0.5 * (P[0][1] + P[1][0]), p11 = P[1][1]
    cdef double x00, x01, x11, det
    cdef double f00, f01, f10, f11, t00, t01, t10, t11
    cdef Py_ssize_t k
    with nogil:
        for k in range(Fv.shape[0]):
            f00 = Fv[k, 0, 0]; f01 = Fv[k, 0, 1]; f10 = Fv[k, 1, 0]; f11 = Fv[k, 1, 1]
            # F P
            t00 = f00 * p00 + f01 * p01
            t01 = f00 * p01 + f01 * p11
            t10 = f10 * p00 + f11 * p01
            t11 = f10 * p01 + f11 * p11
            # (F P) F' + Q
            x00 = t00 * f00 + t01 * f01 + Qv[k, 0, 0]
            x01 = t00 * f10 + t01 * f11 + 0.5 * (Qv[k, 0, 1] + Qv[k, 1, 0])
            x11 = t10 * f10 + t11 * f11 + Qv[k, 1, 1]
            det = x00 * x11 - x01 * x01
            t00 = x11 / det + Mv[k, 0, 0]
            t01 = -x01 / det + 0.5 * (Mv[k, 0, 1] + Mv[k, 1, 0])
            t11 = x00 / det + Mv[k, 1, 1]
            det = t00 * t11 - t01 * t01
            p00 = t11 / det
            p01 = -t01 / det
            p11 = t00 / det
    return np.array([[p00, p01], [p01, p11]])


cdef inline double _lmax2(double a, double b, double d) noexcept nogil:
    return 0.5 * (a + d) + hypot(0.5 * (a - d), b)


cdef void _enum2(int k, int T, double p00, double p01, double p11, double w,
                 const double[:, :, ::1] F, const double[:, :, ::1] Q,
                 const double[::1] W, const double[:, :, ::1] M,
                 const cnp.int64_t[::1] off, double* acc) noexcept nogil:
    cdef double f00 = F[k, 0, 0], f01 = F[k, 0, 1], f10 = F[k, 1, 0], f11 = F[k, 1, 1]
    cdef double t00, t01, t10, t11, x00, x01, x11, det, i00, i01, i11
    cdef double q00, q01, q11, wc
    cdef Py_ssize_t s
    t00 = f00 * p00 + f01 * p01
    t01 = f00 * p01 + f01 * p11
    t10 = f10 * p00 + f11 * p01
    t11 = f10 * p01 + f11 * p11
    x00 = t00 * f00 + t01 * f01 + Q[k, 0, 0]
    x01 = t00 * f10 + t01 * f11 + 0.5 * (Q[k, 0, 1] + Q[k, 1, 0])
    x11 = t10 * f10 + t11 * f11 + Q[k, 1, 1]
    det = x00 * x11 - x01 * x01
    i00 = x11 / det
    i01 = -x01 / det
    i11 = x00 / det
    for s in range(off[k], off[k + 1]):
        wc = w * W[s]
        if wc == 0.0:
            continue
        t00 = i00 + M[s, 0, 0]
        t01 = i01 + 0.5 * (M[s, 0, 1] + M[s, 1, 0])
        t11 = i11 + M[s, 1, 1]
        det = t00 * t11 - t01 * t01
        q00 = t11 / det
        q01 = -t01 / det
        q11 = t00 / det
        acc[k + 1] += wc * _lmax2(q00, q01, q11)
        if k + 1 < T:
            _enum2(k + 1, T, q00, q01, q11, wc, F, Q, W, M, off, acc)


cdef void _enum1(int k, int T, double p, double w,
                 const double[:, :, ::1] F, const double[:, :, ::1] Q,
                 const double[::1] W, const double[:, :, ::1] M,
                 const cnp.int64_t[::1] off, double* acc) noexcept nogil:
    cdef double f = F[k, 0, 0]
    cdef double pred_inv = 1.0 / (f * p * f + Q[k, 0, 0])
    cdef double q, wc
    cdef Py_ssize_t s
    for s in range(off[k], off[k + 1]):
        wc = w * W[s]
        if wc == 0.0:
            continue
        q = 1.0 / (pred_inv + M[s, 0, 0])
        acc[k + 1] += wc * q
        if k + 1 < T:
            _enum1(k + 1, T, q, wc, F, Q, W, M, off, acc)


def exact_expectation(P0, F, Q, n_sub, W_flat, M_flat, sub_off, chunk=None):
    P0 = np.asarray(P0, dtype=np.float64)
    cdef int n = P0.shape[0]
    if n > 2:
        from . import _pykernels
        return _pykernels.exact_expectation(P0, F, Q, n_sub, W_flat, M_flat, sub_off)
    cdef const double[:, :, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef const double[:, :, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[::1] Wv = np.ascontiguousarray(W_flat, dtype=np.float64)
    cdef const double[:, :, ::1] Mv = np.ascontiguousarray(M_flat, dtype=np.float64)
    cdef const cnp.int64_t[::1] ov = np.ascontiguousarray(sub_off, dtype=np.int64)
    cdef int T = Fv.shape[0]
    out = np.zeros(T + 1)
    cdef double[::1] acc = out
    cdef double p00, p01, p11
    if n == 1:
        acc[0] = P0[0, 0]
        if T > 0:
            with nogil:
                _enum1(0, T, acc[0], 1.0, Fv, Qv, Wv, Mv, ov, &acc[0])
    else:
        p00 = P0[0, 0]
        p01 = 0.5 * (P0[0, 1] + P0[1, 0])
        p11 = P0[1, 1]
        acc[0] = _lmax2(p00, p01, p11)
        if T > 0:
            with nogil:
                _enum2(0, T, p00, p01, p11, 1.0, Fv, Qv, Wv, Mv, ov, &acc[0])
    return out


def is_compiled():
    return True
