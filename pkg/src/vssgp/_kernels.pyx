# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled feature-moment kernels.

Same contract as ``vssgp._kernels_py``.  Work is split over feature columns
and each column writes a contiguous (LK, N) buffer, so every accumulation
over data points runs sequentially within its column and results do not
depend on the thread count.  One exponential and one sine/cosine pair per
entry: exp(-2v) = exp(-v/2)^4 and the double-angle terms come from the
single-angle ones.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, cos, sin, fabs

cnp.import_array()

cdef double TWO_PI = 6.283185307179586
cdef double EXP_FLOOR = -745.0


cdef inline double _sinc(double h) noexcept nogil:
    if fabs(h) < 1e-8:
        return 1.0 - h * h / 6.0
    return sin(h) / h


cdef inline double _dsinc(double h) noexcept nogil:
    if fabs(h) < 1e-4:
        return -h / 3.0 + h * h * h / 30.0
    return (h * cos(h) - sin(h)) / (h * h)


cdef inline double _clamped_exp(double a) noexcept nogil:
    if a < EXP_FLOOR:
        a = EXP_FLOOR
    return exp(a)


def moments(const double[:, ::1] X, const double[:, ::1] Z, const double[:, ::1] MU,
            const double[:, ::1] SIG, const double[:, ::1] INVL, const double[:, ::1] PBAR,
            const double[::1] scale, const double[::1] mid, const double[::1] half,
            int num_threads=1):
    cdef Py_ssize_t N = X.shape[0], LK = Z.shape[0], Q = Z.shape[1]
    XT_arr = np.ascontiguousarray(np.asarray(X).T)
    ephi_arr = np.empty((LK, N))
    ediag_arr = np.empty((LK, N))
    cdef const double[:, ::1] XT = XT_arr
    cdef double[:, ::1] ephi = ephi_arr
    cdef double[:, ::1] ediag = ediag_arr
    cdef Py_ssize_t n, k, q
    cdef double d, xb, v, c, theta, sh, sh2, e1, e4, s, s2, cs
    for k in prange(LK, nogil=True, num_threads=num_threads, schedule="static"):
        sh = _sinc(half[k])
        sh2 = _sinc(2.0 * half[k])
        s = scale[k]
        s2 = s * s
        for n in range(N):
            v = 0.0
            c = 0.0
            for q in range(Q):
                d = XT[q, n] - Z[k, q]
                xb = d * INVL[k, q]
                v = v + SIG[k, q] * xb * xb
                c = c + MU[k, q] * xb + TWO_PI * PBAR[k, q] * d
            theta = c + mid[k]
            e1 = _clamped_exp(-0.5 * v)
            e4 = e1 * e1
            e4 = e4 * e4
            cs = cos(theta)
            ephi[k, n] = s * e1 * cs * sh
            ediag[k, n] = s2 * (0.5 + 0.5 * e4 * (2.0 * cs * cs - 1.0) * sh2)
    return ephi_arr.T, ediag_arr.T


def moments_vjp(const double[:, ::1] X, const double[:, ::1] Z, const double[:, ::1] MU,
                const double[:, ::1] SIG, const double[:, ::1] INVL, const double[:, ::1] PBAR,
                const double[::1] scale, const double[::1] mid, const double[::1] half,
                g_phi, g_diag, int num_threads=1):
    cdef Py_ssize_t N = X.shape[0], LK = Z.shape[0], Q = Z.shape[1]
    XT_arr = np.ascontiguousarray(np.asarray(X).T)
    gpT_arr = np.ascontiguousarray(np.asarray(g_phi, dtype=float).T)
    gdT_arr = np.ascontiguousarray(np.asarray(g_diag, dtype=float).T)
    cdef const double[:, ::1] XT = XT_arr
    cdef const double[:, ::1] gpT = gpT_arr
    cdef const double[:, ::1] gdT = gdT_arr
    out = [np.zeros((LK, Q)) for _ in range(5)] + [np.zeros(LK) for _ in range(3)]
    cdef double[:, ::1] gZ = out[0]
    cdef double[:, ::1] gMU = out[1]
    cdef double[:, ::1] gSIG = out[2]
    cdef double[:, ::1] gINVL = out[3]
    cdef double[:, ::1] gPBAR = out[4]
    cdef double[::1] gscale = out[5]
    cdef double[::1] gmid = out[6]
    cdef double[::1] ghalf = out[7]
    cdef Py_ssize_t n, k, q
    cdef double d, xb, v, c, theta, e1, e4, s, s2
    cdef double sh, sh2, dsh, dsh2, cos1, sin1, cos2, sin2, d1, c2
    cdef double gp, gd, gD1, gC2, gv, gth, gh, gxb
    for k in prange(LK, nogil=True, num_threads=num_threads, schedule="static"):
        sh = _sinc(half[k])
        sh2 = _sinc(2.0 * half[k])
        dsh = _dsinc(half[k])
        dsh2 = _dsinc(2.0 * half[k])
        s = scale[k]
        s2 = s * s
        for n in range(N):
            gp = gpT[k, n]
            gd = gdT[k, n]
            if gp == 0.0 and gd == 0.0:
                continue
            v = 0.0
            c = 0.0
            for q in range(Q):
                d = XT[q, n] - Z[k, q]
                xb = d * INVL[k, q]
                v = v + SIG[k, q] * xb * xb
                c = c + MU[k, q] * xb + TWO_PI * PBAR[k, q] * d
            theta = c + mid[k]
            e1 = _clamped_exp(-0.5 * v)
            e4 = e1 * e1
            e4 = e4 * e4
            cos1 = cos(theta)
            sin1 = sin(theta)
            cos2 = 2.0 * cos1 * cos1 - 1.0
            sin2 = 2.0 * sin1 * cos1
            d1 = e1 * cos1 * sh
            c2 = 0.5 + 0.5 * e4 * cos2 * sh2
            gscale[k] += gp * d1 + gd * 2.0 * s * c2
            gD1 = gp * s
            gC2 = gd * s2
            gv = -0.5 * gD1 * d1 - gC2 * e4 * cos2 * sh2
            gth = -gD1 * e1 * sin1 * sh - gC2 * e4 * sin2 * sh2
            gh = gD1 * e1 * cos1 * dsh + gC2 * e4 * cos2 * dsh2
            gmid[k] += gth
            ghalf[k] += gh
            for q in range(Q):
                d = XT[q, n] - Z[k, q]
                xb = d * INVL[k, q]
                gSIG[k, q] += gv * xb * xb
                gMU[k, q] += gth * xb
                gxb = 2.0 * gv * SIG[k, q] * xb + gth * MU[k, q]
                gINVL[k, q] += gxb * d
                gPBAR[k, q] += TWO_PI * gth * d
                gZ[k, q] -= gxb * INVL[k, q] + TWO_PI * gth * PBAR[k, q]
    return tuple(out)
