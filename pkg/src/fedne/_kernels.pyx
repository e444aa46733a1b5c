# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Contracts match :mod:`fedne._fallback` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()


def edge_forces(const double[:, ::1] Z, const long[::1] anchors,
                const long[::1] positives, const long[:, ::1] negatives,
                double attr_coef, double rep_coef, double eps):
    cdef Py_ssize_t n_edges = anchors.shape[0]
    cdef Py_ssize_t n_neg = negatives.shape[1]
    cdef Py_ssize_t e, s
    cdef long a, p, q
    cdef double dx, dy, d2, phi, c, attr = 0.0, rep = 0.0
    cdef double lo = eps, hi = 1.0 - eps
    grad_arr = np.zeros((Z.shape[0], 2), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        for e in range(n_edges):
            a = anchors[e]
            p = positives[e]
            dx = Z[a, 0] - Z[p, 0]
            dy = Z[a, 1] - Z[p, 1]
            d2 = dx * dx + dy * dy
            phi = 1.0 / (1.0 + d2)
            if phi > lo:
                attr -= log(phi)
                c = attr_coef * 2.0 * phi
                grad[a, 0] += c * dx
                grad[a, 1] += c * dy
                grad[p, 0] -= c * dx
                grad[p, 1] -= c * dy
            else:
                attr -= log(lo)
            for s in range(n_neg):
                q = negatives[e, s]
                dx = Z[a, 0] - Z[q, 0]
                dy = Z[a, 1] - Z[q, 1]
                d2 = dx * dx + dy * dy
                phi = 1.0 / (1.0 + d2)
                if phi < hi:
                    rep -= log(1.0 - phi)
                    c = -rep_coef * 2.0 * phi / d2
                    grad[a, 0] += c * dx
                    grad[a, 1] += c * dy
                    grad[q, 0] -= c * dx
                    grad[q, 1] -= c * dy
                else:
                    rep -= log(1.0 - hi)
    return attr, rep, grad_arr


def knn_indices(const double[:, ::1] X, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    cdef Py_ssize_t i, j, t, pos
    cdef double d, diff
    out_arr = np.empty((n, k), dtype=np.int64)
    cdef long[:, ::1] out = out_arr
    best_d_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] best_d = best_d_arr

    with nogil:
        for i in range(n):
            for t in range(k):
                best_d[t] = INFINITY
                out[i, t] = -1
            for j in range(n):
                if j == i:
                    continue
                d = 0.0
                for t in range(dim):
                    diff = X[i, t] - X[j, t]
                    d = d + diff * diff
                    if d > best_d[k - 1]:
                        break
                if d < best_d[k - 1]:
                    # ascending j: an equal distance already stored has a smaller index
                    pos = k - 1
                    while pos > 0 and d < best_d[pos - 1]:
                        best_d[pos] = best_d[pos - 1]
                        out[i, pos] = out[i, pos - 1]
                        pos -= 1
                    best_d[pos] = d
                    out[i, pos] = j
    return out_arr


def rank_penalty(const double[:, ::1] X, const long[:, ::1] nbrs, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1], m = nbrs.shape[1]
    cdef Py_ssize_t i, j, l, t, rank
    cdef double diff, dij, total = 0.0
    row_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] row = row_arr

    with nogil:
        for i in range(n):
            for l in range(n):
                row[l] = 0.0
                for t in range(dim):
                    diff = X[i, t] - X[l, t]
                    row[l] = row[l] + diff * diff
            for t in range(m):
                j = nbrs[i, t]
                dij = row[j]
                rank = 1
                for l in range(n):
                    if l == i or l == j:
                        continue
                    if row[l] < dij or (row[l] == dij and l < j):
                        rank += 1
                if rank > k:
                    total += rank - k
    return total
