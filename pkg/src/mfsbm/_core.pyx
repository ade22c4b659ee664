# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, M_PI, INFINITY

cnp.import_array()


def chain_weights(const long[:, :, ::1] parents, const double[:, ::1] times, double x,
                  const double[:, ::1] normals):
    cdef Py_ssize_t T = parents.shape[0], K = parents.shape[1], M = times.shape[0]
    cdef Py_ssize_t t, m, k
    cdef long pu, pv
    cdef double a, b, s, d, u, v, wt, tk
    out_pts = np.empty((T, M, K))
    out_w = np.empty((T, M))
    cdef double[:, :, ::1] pts = out_pts
    cdef double[:, ::1] w = out_w
    cdef double[::1] z = np.empty(K + 1)
    with nogil:
        for t in range(T):
            for m in range(M):
                z[0] = x
                wt = 1.0
                for k in range(1, K + 1):
                    pu = parents[t, k - 1, 0]
                    pv = parents[t, k - 1, 1]
                    tk = times[m, k]
                    a = times[m, pu] - tk
                    b = times[m, pv] - tk
                    u = z[pu]
                    v = z[pv]
                    s = a + b
                    d = u - v
                    wt = wt * (exp(-0.5 * d * d / s) / sqrt(2.0 * M_PI * s))
                    z[k] = (b * u + a * v) / s + sqrt(a * b / s) * normals[m, k - 1]
                    pts[t, m, k - 1] = z[k]
                w[t, m] = wt
    return out_pts, out_w


def advance_segments(const double[::1] pos, const double[::1] rem, const double[::1] rate,
                     const double[::1] expo, const double[::1] normals, const double[::1] coins):
    cdef Py_ssize_t n = pos.shape[0], i
    cdef double tau, dt
    out_pos = np.empty(n)
    out_dt = np.empty(n)
    out_died = np.empty(n, dtype=bool)
    out_kids = np.empty(n, dtype=np.int64)
    cdef double[::1] npos = out_pos
    cdef double[::1] ndt = out_dt
    cdef cnp.npy_bool[::1] died = out_died
    cdef long long[::1] kids = out_kids
    with nogil:
        for i in range(n):
            if rate[i] > 0:
                tau = expo[i] / rate[i]
            else:
                tau = INFINITY
            if tau < rem[i]:
                dt = tau
                died[i] = 1
                kids[i] = 0 if coins[i] < 0.5 else 2
            else:
                dt = rem[i]
                died[i] = 0
                kids[i] = 1
            ndt[i] = dt
            npos[i] = pos[i] + sqrt(dt) * normals[i]
    return out_pos, out_dt, out_died, out_kids


def power_sums(const double[::1] pos, const long[::1] replica, Py_ssize_t n_replicas,
               const double[::1] points, double delta, int max_power,
               const long[::1] lo, const long[::1] hi):
    cdef Py_ssize_t G = points.shape[0], g, i
    cdef int j
    cdef double norm = 1.0 / sqrt(2.0 * M_PI * delta), d, phi, acc
    out_arr = np.zeros((max_power, n_replicas, G))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for g in range(G):
            for i in range(lo[g], hi[g]):
                d = points[g] - pos[i]
                phi = norm * exp(-0.5 * d * d / delta)
                acc = phi
                for j in range(max_power):
                    if j:
                        acc = acc * phi
                    out[j, replica[i], g] += acc
    return out_arr
