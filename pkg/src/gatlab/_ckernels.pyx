# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Signatures mirror :mod:`gatlab._pykernels` exactly."""

import numpy as np
from libc.math cimport sqrt, fabs, INFINITY


def segment_max(const double[::1] values, const long[::1] segment_ids, long num_segments):
    cdef Py_ssize_t e, n = values.shape[0]
    cdef long s
    out_arr = np.full(num_segments, -INFINITY)
    cdef double[::1] out = out_arr
    for e in range(n):
        s = segment_ids[e]
        if values[e] > out[s]:
            out[s] = values[e]
    return out_arr


def segment_sum(const double[:, ::1] values, const long[::1] segment_ids, long num_segments):
    cdef Py_ssize_t e, c, n = values.shape[0], width = values.shape[1]
    cdef long s
    out_arr = np.zeros((num_segments, width))
    cdef double[:, ::1] out = out_arr
    for e in range(n):
        s = segment_ids[e]
        for c in range(width):
            out[s, c] += values[e, c]
    return out_arr


def jacobi_orthogonalize(double[:, ::1] at, double[:, ::1] vt, double tol, int max_sweeps):
    """In-place one-sided Jacobi on the rows of ``at`` (the columns of A).

    Rotations are mirrored onto ``vt``. Returns the number of sweeps used, or
    -1 if ``max_sweeps`` passed without convergence.
    """
    cdef Py_ssize_t ncols = at.shape[0], m = at.shape[1], nv = vt.shape[1]
    cdef Py_ssize_t p, q, k
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y
    cdef int sweep
    cdef bint rotated
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(ncols - 1):
            for q in range(p + 1, ncols):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += at[p, k] * at[p, k]
                    beta += at[q, k] * at[q, k]
                    gamma += at[p, k] * at[q, k]
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    x = at[p, k]
                    y = at[q, k]
                    at[p, k] = c * x - s * y
                    at[q, k] = s * x + c * y
                for k in range(nv):
                    x = vt[p, k]
                    y = vt[q, k]
                    vt[p, k] = c * x - s * y
                    vt[q, k] = s * x + c * y
        if not rotated:
            return sweep
    return -1


def weighted_gather_sum(const double[::1] weights, const double[:, ::1] table,
                        const long[::1] gather_idx, const long[::1] scatter_idx, long n_out):
    """``out[scatter_idx[e]] += weights[e] * table[gather_idx[e]]``."""
    cdef Py_ssize_t e, c, n = weights.shape[0], width = table.shape[1]
    cdef long r, s
    cdef double w
    out_arr = np.zeros((n_out, width))
    cdef double[:, ::1] out = out_arr
    for e in range(n):
        w = weights[e]
        r = gather_idx[e]
        s = scatter_idx[e]
        for c in range(width):
            out[s, c] += w * table[r, c]
    return out_arr


def edge_dot(const double[:, ::1] x, const double[:, ::1] y,
             const long[::1] x_idx, const long[::1] y_idx):
    """``out[e] = x[x_idx[e]] . y[y_idx[e]]``."""
    cdef Py_ssize_t e, c, n = x_idx.shape[0], width = x.shape[1]
    cdef long i, j
    cdef double acc
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for e in range(n):
        i = x_idx[e]
        j = y_idx[e]
        acc = 0.0
        for c in range(width):
            acc += x[i, c] * y[j, c]
        out[e] = acc
    return out_arr


def gatv2_scores(const double[:, ::1] left, const double[:, ::1] right,
                 const double[::1] bias, const double[::1] a,
                 const long[::1] dst, const long[::1] src, double slope):
    """``e = a . LeakyReLU(left[dst] + right[src] + bias)`` per edge."""
    cdef Py_ssize_t e, c, n = dst.shape[0], width = left.shape[1]
    cdef long i, j
    cdef double z, acc
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for e in range(n):
        i = dst[e]
        j = src[e]
        acc = 0.0
        for c in range(width):
            z = left[i, c] + right[j, c] + bias[c]
            acc += a[c] * (z if z > 0.0 else slope * z)
        out[e] = acc
    return out_arr


def gatv2_scores_backward(const double[:, ::1] left, const double[:, ::1] right,
                          const double[::1] bias, const double[::1] a,
                          const long[::1] dst, const long[::1] src, double slope,
                          const double[::1] grad):
    cdef Py_ssize_t e, c, n = dst.shape[0], width = left.shape[1]
    cdef long i, j
    cdef double z, g, dz
    d_left_arr = np.zeros((left.shape[0], width))
    d_right_arr = np.zeros((right.shape[0], width))
    d_bias_arr = np.zeros(width)
    d_a_arr = np.zeros(width)
    cdef double[:, ::1] d_left = d_left_arr
    cdef double[:, ::1] d_right = d_right_arr
    cdef double[::1] d_bias = d_bias_arr
    cdef double[::1] d_a = d_a_arr
    for e in range(n):
        i = dst[e]
        j = src[e]
        g = grad[e]
        if g == 0.0:
            continue
        for c in range(width):
            z = left[i, c] + right[j, c] + bias[c]
            if z > 0.0:
                d_a[c] += g * z
                dz = g * a[c]
            else:
                d_a[c] += g * slope * z
                dz = g * a[c] * slope
            d_left[i, c] += dz
            d_right[j, c] += dz
            d_bias[c] += dz
    return d_left_arr, d_right_arr, d_bias_arr, d_a_arr
