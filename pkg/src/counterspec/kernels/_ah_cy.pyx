# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Arrow-Hurwicz loop for all-quadratic programs.

Mirrors ``_ah_py.arrow_hurwicz_qp`` line for line; the loop body runs
without the GIL.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite, NAN

cnp.import_array()

cdef enum:
    CONVERGED = 0
    ITERATION_CAP = 1
    DIVERGED = 2


def arrow_hurwicz_qp(const double[:, ::1] P0, const double[::1] q0, const double[:, :, ::1] Pc,
                     const double[:, ::1] qc, const double[::1] rc, const Py_ssize_t[::1] group,
                     Py_ssize_t m_s, double inv_scale, const double[::1] s_fixed,
                     bint counterfactual, const double[::1] x0, const double[::1] lam0,
                     double eta, long max_iter, double tol, long trace_stride):
    cdef Py_ssize_t n = x0.shape[0], m = Pc.shape[0]
    cdef Py_ssize_t cap = max_iter // trace_stride + 2
    x_arr = np.array(x0, dtype=np.float64)
    lam_arr = np.array(lam0, dtype=np.float64)
    s_arr = np.zeros(m_s)
    res_arr = np.zeros(4)
    tr_it_arr = np.empty(cap, dtype=np.int64)
    tr_x_arr = np.empty((cap, n))
    tr_lam_arr = np.empty((cap, m))
    tr_s_arr = np.empty((cap, m_s))
    tr_res_arr = np.empty((cap, 4))
    cdef double[::1] x = x_arr, lam = lam_arr, s = s_arr, res = res_arr
    cdef long long[::1] tr_it = tr_it_arr
    cdef double[:, ::1] tr_x = tr_x_arr, tr_lam = tr_lam_arr, tr_s = tr_s_arr, tr_res = tr_res_arr
    cdef double[::1] g = np.empty(n), gap = np.empty(m), px = np.empty(n)
    cdef double[::1] x_new = np.empty(n), lam_new = np.empty(m)
    cdef Py_ssize_t i, j, l, k = 0
    cdef long t = 0
    cdef int status = ITERATION_CAP
    cdef double acc, fi, worst, d
    cdef bint done, finite

    with nogil:
        while True:
            if counterfactual:
                for j in range(m_s):
                    s[j] = 0.0
                for i in range(m):
                    s[group[i]] += lam[i]
                for j in range(m_s):
                    s[j] = inv_scale * s[j]
            else:
                for j in range(m_s):
                    s[j] = s_fixed[j]
            for j in range(n):
                acc = q0[j]
                for l in range(n):
                    acc = acc + P0[j, l] * x[l]
                g[j] = acc
            res[1] = 0.0
            res[2] = 0.0
            for i in range(m):
                fi = rc[i]
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc = acc + Pc[i, j, l] * x[l]
                    px[j] = acc
                    fi = fi + (0.5 * acc + qc[i, j]) * x[j]
                    g[j] = g[j] + lam[i] * (acc + qc[i, j])
                gap[i] = fi - s[group[i]]
                if gap[i] > res[1]:
                    res[1] = gap[i]
                if fabs(lam[i] * gap[i]) > res[2]:
                    res[2] = fabs(lam[i] * gap[i])
            acc = 0.0
            for j in range(n):
                acc = acc + g[j] * g[j]
            res[0] = sqrt(acc)
            worst = res[0]
            if res[1] > worst:
                worst = res[1]
            if res[2] > worst:
                worst = res[2]
            if counterfactual:
                acc = 0.0
                for j in range(m_s):
                    d = s[j] / inv_scale
                    # subtract G^T lam
                    for i in range(m):
                        if group[i] == j:
                            d = d - lam[i]
                    acc = acc + d * d
                res[3] = sqrt(acc)
                if res[3] > worst:
                    worst = res[3]
            else:
                res[3] = NAN
            done = worst <= tol
            if done:
                status = CONVERGED
            elif t >= max_iter:
                status = ITERATION_CAP
                done = True
            if t % trace_stride == 0 or done:
                tr_it[k] = t
                for j in range(n):
                    tr_x[k, j] = x[j]
                for i in range(m):
                    tr_lam[k, i] = lam[i]
                for j in range(m_s):
                    tr_s[k, j] = s[j]
                for j in range(4):
                    tr_res[k, j] = res[j]
                k += 1
            if done:
                break
            finite = True
            for j in range(n):
                x_new[j] = x[j] - eta * g[j]
                if not isfinite(x_new[j]):
                    finite = False
            for i in range(m):
                d = lam[i] + eta * gap[i]
                lam_new[i] = d if d > 0.0 else 0.0
                if not isfinite(d):
                    finite = False
            if not finite:
                status = DIVERGED
                break
            for j in range(n):
                x[j] = x_new[j]
            for i in range(m):
                lam[i] = lam_new[i]
            t += 1

    return (x_arr, lam_arr, s_arr, res_arr, t, status,
            tr_it_arr[:k], tr_x_arr[:k], tr_lam_arr[:k], tr_s_arr[:k], tr_res_arr[:k])
