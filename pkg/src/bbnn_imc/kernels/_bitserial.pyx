# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bit-serial crossbar MVM. Mirrors ``_fallback.bitserial_core``."""
import numpy as np

from libc.math cimport ldexp, rint


cdef inline void _noisy_row(double* col, const double* gp, const double* gn, const double* z,
                            Py_ssize_t C, double sigma, double g_max) noexcept nogil:
    cdef Py_ssize_t c
    cdef double a, d
    # plain comparisons compile to min/max instructions; fmin/fmax become libm calls
    for c in range(C):
        a = gp[c] + sigma * z[2 * c]
        a = a if a > 0.0 else 0.0
        a = a if a < g_max else g_max
        d = gn[c] + sigma * z[2 * c + 1]
        d = d if d > 0.0 else 0.0
        d = d if d < g_max else g_max
        col[c] += a - d


cdef inline void _add_row(double* col, const double* w, Py_ssize_t C) noexcept nogil:
    cdef Py_ssize_t c
    for c in range(C):
        col[c] += w[c]


def bitserial_core(
    const long long[:, ::1] x,
    const double[:, ::1] gp,
    const double[:, ::1] gn,
    int nbits,
    double sigma,
    const double[::1] noise,
    double g_max,
    int adc_levels,
    double adc_step,
):
    cdef Py_ssize_t P = x.shape[0]
    cdef Py_ssize_t R = x.shape[1]
    cdef Py_ssize_t C = gp.shape[1]
    out = np.zeros((P, C), dtype=np.float64)
    col_buf = np.zeros((nbits, C), dtype=np.float64)
    diff_buf = np.subtract(gp, gn)
    cdef double[:, ::1] acc = out
    cdef double[:, ::1] cols = col_buf
    cdef double[:, ::1] diff = diff_buf
    cdef Py_ssize_t p, b, r, c
    cdef Py_ssize_t k = 0
    cdef unsigned long long mask = (1ULL << nbits) - 1 if nbits < 64 else <unsigned long long>(-1)
    cdef unsigned long long u
    cdef double coeff, v
    cdef bint noisy = sigma > 0.0
    cdef const double* zp = &noise[0] if noise.shape[0] > 0 else NULL

    with nogil:
        for p in range(P):
            for b in range(nbits):
                for c in range(C):
                    cols[b, c] = 0.0
            if noisy:
                # noise is laid out bit-cycle major, so walk bits outside rows
                for b in range(nbits):
                    for r in range(R):
                        u = (<unsigned long long>x[p, r]) & mask
                        if (u >> b) & 1:
                            _noisy_row(&cols[b, 0], &gp[r, 0], &gn[r, 0], zp + k, C, sigma, g_max)
                            k += 2 * C
            else:
                # each driven row adds its difference row once per set bit
                for r in range(R):
                    u = (<unsigned long long>x[p, r]) & mask
                    b = 0
                    while u:
                        if u & 1:
                            _add_row(&cols[b, 0], &diff[r, 0], C)
                        u >>= 1
                        b += 1
            for b in range(nbits):
                coeff = ldexp(1.0, <int>b)
                if b == nbits - 1:
                    coeff = -coeff
                for c in range(C):
                    v = cols[b, c]
                    if adc_levels > 0:
                        v = rint(v / adc_step)
                        if v > adc_levels:
                            v = adc_levels
                        elif v < -adc_levels:
                            v = -adc_levels
                        v = v * adc_step
                    acc[p, c] += coeff * v
    return out
