# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops; see ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, sqrt

cnp.import_array()


def radiation_ratios(flags, kd):
    cdef double[::1] f = np.ascontiguousarray(flags, dtype=np.float64)
    cdef double[::1] k = np.ascontiguousarray(kd, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], l
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] b = out
    cdef double left = 1.0, s
    for l in range(n):
        if f[l] > 0:
            s = sin(k[l])
            b[l] = s * left
            s = 1.0 - s * s
            left = left * sqrt(s if s > 0 else 0.0)
    return out


def pattern_gains(coef, patterns):
    c = np.ascontiguousarray(coef, dtype=np.complex128)
    cdef double[:, ::1] cr = np.ascontiguousarray(c.real)
    cdef double[:, ::1] ci = np.ascontiguousarray(c.imag)
    cdef signed char[:, :, ::1] a = np.ascontiguousarray(patterns, dtype=np.int8)
    cdef Py_ssize_t P = a.shape[0], N = a.shape[1], L = a.shape[2], p, n, l
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    cdef double sr, si, tot
    cdef int cnt
    for p in range(P):
        tot = 0.0
        for n in range(N):
            sr = 0.0
            si = 0.0
            cnt = 0
            for l in range(L):
                if a[p, n, l]:
                    sr += cr[n, l]
                    si += ci[n, l]
                    cnt += 1
            if cnt > 0:
                tot += (sr * sr + si * si) / cnt
        o[p] = tot
    return out
