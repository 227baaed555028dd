# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Green's-function and Fresnel summation kernels.

Summation runs over source samples in index order, so results do not depend on
how callers batch the destinations.
"""

import numpy as np
from libc.math cimport sqrt, cos, sin, M_PI


def green_dense(const double[:, ::1] src, const double[:, ::1] dst, double k0):
    """Dense matrix G[q, n] = exp(-j k0 R) / (4 pi R); returns (G, bad_q, bad_n)."""
    cdef Py_ssize_t n_src = src.shape[0], n_dst = dst.shape[0], q, n
    cdef double dx, dy, dz, R, s
    cdef Py_ssize_t bad_q = -1, bad_n = -1
    out = np.empty((n_dst, n_src), dtype=np.complex128)
    cdef double complex[:, ::1] g = out
    with nogil:
        for q in range(n_dst):
            for n in range(n_src):
                dx = dst[q, 0] - src[n, 0]
                dy = dst[q, 1] - src[n, 1]
                dz = dst[q, 2] - src[n, 2]
                R = sqrt(dx * dx + dy * dy + dz * dz)
                if R == 0.0:
                    if bad_q < 0:
                        bad_q = q
                        bad_n = n
                    g[q, n] = 0
                    continue
                s = 1.0 / (4.0 * M_PI * R)
                g[q, n].real = s * cos(k0 * R)
                g[q, n].imag = -s * sin(k0 * R)
    return out, bad_q, bad_n


def green_matvec(const double[:, ::1] src, const double[:, ::1] dst, double k0,
                 const double complex[::1] x):
    """y = G x without storing G; returns (y, bad_q, bad_n)."""
    cdef Py_ssize_t n_src = src.shape[0], n_dst = dst.shape[0], q, n
    cdef double dx, dy, dz, R, s, c, sn, acc_re, acc_im
    cdef Py_ssize_t bad_q = -1, bad_n = -1
    out = np.empty(n_dst, dtype=np.complex128)
    cdef double complex[::1] y = out
    with nogil:
        for q in range(n_dst):
            acc_re = 0.0
            acc_im = 0.0
            for n in range(n_src):
                dx = dst[q, 0] - src[n, 0]
                dy = dst[q, 1] - src[n, 1]
                dz = dst[q, 2] - src[n, 2]
                R = sqrt(dx * dx + dy * dy + dz * dz)
                if R == 0.0:
                    if bad_q < 0:
                        bad_q = q
                        bad_n = n
                    continue
                s = 1.0 / (4.0 * M_PI * R)
                c = s * cos(k0 * R)
                sn = -s * sin(k0 * R)
                acc_re = acc_re + c * x[n].real - sn * x[n].imag
                acc_im = acc_im + c * x[n].imag + sn * x[n].real
            y[q].real = acc_re
            y[q].imag = acc_im
    return out, bad_q, bad_n


def fresnel_matvec(const double[:, ::1] src, const double[:, ::1] dst, double k0,
                   double distance, double complex prefactor, const double complex[::1] x):
    """y_q = prefactor * sum_n exp(-j k0 |r_q - r_n|^2 / 2d) x_n on transverse coordinates."""
    cdef Py_ssize_t n_src = src.shape[0], n_dst = dst.shape[0], q, n
    cdef double dx, dy, ph, c, sn, acc_re, acc_im
    cdef double a = k0 / (2.0 * distance)
    out = np.empty(n_dst, dtype=np.complex128)
    cdef double complex[::1] y = out
    with nogil:
        for q in range(n_dst):
            acc_re = 0.0
            acc_im = 0.0
            for n in range(n_src):
                dx = dst[q, 0] - src[n, 0]
                dy = dst[q, 1] - src[n, 1]
                ph = a * (dx * dx + dy * dy)
                c = cos(ph)
                sn = -sin(ph)
                acc_re = acc_re + c * x[n].real - sn * x[n].imag
                acc_im = acc_im + c * x[n].imag + sn * x[n].real
            y[q] = prefactor * (acc_re + 1j * acc_im)
    return out
