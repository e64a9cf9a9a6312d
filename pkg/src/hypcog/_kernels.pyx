# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same contracts as ``hypcog._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log1p, INFINITY

cnp.import_array()


cdef inline double _t_to_dist(double t, double c) nogil:
    return log1p(t + sqrt(t * (t + 2.0))) / sqrt(c)


cdef inline double _quad(const double[:, ::1] d, Py_ssize_t w, Py_ssize_t x,
                         Py_ssize_t y, Py_ssize_t z) nogil:
    cdef double s1 = d[w, x] + d[y, z]
    cdef double s2 = d[w, y] + d[x, z]
    cdef double s3 = d[w, z] + d[x, y]
    cdef double tmp
    # order so that s1 >= s2 >= s3, then (largest - middle) / 2
    if s1 < s2:
        tmp = s1; s1 = s2; s2 = tmp
    if s2 < s3:
        tmp = s2; s2 = s3; s3 = tmp
    if s1 < s2:
        tmp = s1; s1 = s2; s2 = tmp
    return (s1 - s2) / 2.0


def poincare_pdist(const double[:, ::1] pts, double c):
    cdef Py_ssize_t n = pts.shape[0], dim = pts.shape[1], i, j, k
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] nrm = np.empty(n, dtype=np.float64)
    cdef double sq, diff, t, dv
    with nogil:
        for i in range(n):
            sq = 0.0
            for k in range(dim):
                sq = sq + pts[i, k] * pts[i, k]
            nrm[i] = 1.0 - c * sq
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(dim):
                    diff = pts[i, k] - pts[j, k]
                    sq = sq + diff * diff
                t = 2.0 * c * sq / (nrm[i] * nrm[j])
                if t < 0.0:
                    t = 0.0
                dv = _t_to_dist(t, c)
                out[i, j] = dv
                out[j, i] = dv
    return out_arr


def delta_exact(const double[:, ::1] dist, Py_ssize_t i_start=0, Py_ssize_t i_stop=-1):
    cdef Py_ssize_t n = dist.shape[0], i, j, k, l
    cdef double best = 0.0, v
    cdef long long count = 0
    if n < 4:
        return 0.0, 0
    if i_stop < 0 or i_stop > n - 3:
        i_stop = n - 3
    with nogil:
        for i in range(i_start, i_stop):
            for j in range(i + 1, n - 2):
                for k in range(j + 1, n - 1):
                    for l in range(k + 1, n):
                        v = _quad(dist, i, j, k, l)
                        if v > best:
                            best = v
                        count += 1
    return best, count


def delta_quadruples(const double[:, ::1] dist, const cnp.int64_t[:, ::1] quads):
    cdef Py_ssize_t m = quads.shape[0], q
    cdef double best = 0.0, v
    with nogil:
        for q in range(m):
            v = _quad(dist, quads[q, 0], quads[q, 1], quads[q, 2], quads[q, 3])
            if v > best:
                best = v
    return best


def overlap_energy_grad(const double[:, ::1] pts, double eps):
    cdef Py_ssize_t n = pts.shape[0], dim = pts.shape[1], i, j, k
    grad_arr = np.zeros((n, dim), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef double energy = 0.0, sq, d, gap, coef, diff
    cdef double eps2 = eps * eps
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(dim):
                    diff = pts[i, k] - pts[j, k]
                    sq = sq + diff * diff
                if sq >= eps2:
                    continue
                d = sqrt(sq)
                gap = eps - d
                energy += gap * gap
                if d > 0.0:
                    coef = -2.0 * gap / d
                    for k in range(dim):
                        diff = coef * (pts[i, k] - pts[j, k])
                        grad[i, k] += diff
                        grad[j, k] -= diff
    return energy, grad_arr


def min_pairwise_euclidean(const double[:, ::1] pts):
    cdef Py_ssize_t n = pts.shape[0], dim = pts.shape[1], i, j, k
    cdef double best = INFINITY, sq, diff
    if n < 2:
        return float("inf")
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(dim):
                    diff = pts[i, k] - pts[j, k]
                    sq = sq + diff * diff
                if sq < best:
                    best = sq
    return sqrt(best)


def min_pairwise_poincare(const double[:, ::1] pts, double c):
    cdef Py_ssize_t n = pts.shape[0], dim = pts.shape[1], i, j, k
    cdef double best = INFINITY, sq, diff, t
    if n < 2:
        return float("inf")
    cdef double[::1] nrm = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            sq = 0.0
            for k in range(dim):
                sq = sq + pts[i, k] * pts[i, k]
            nrm[i] = 1.0 - c * sq
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(dim):
                    diff = pts[i, k] - pts[j, k]
                    sq = sq + diff * diff
                t = 2.0 * c * sq / (nrm[i] * nrm[j])
                if t < best:
                    best = t
        if best < 0.0:
            best = 0.0
    return _t_to_dist(best, c)


def crowding_counts(const double[:, ::1] pts, const cnp.int64_t[::1] labels, double eps, double c):
    cdef Py_ssize_t n = pts.shape[0], dim = pts.shape[1], i, j, k
    cdef long long total = 0, crowded = 0
    cdef double sq, diff, t, d
    cdef double[::1] nrm = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            sq = 0.0
            for k in range(dim):
                sq = sq + pts[i, k] * pts[i, k]
            nrm[i] = 1.0 - c * sq
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j]:
                    continue
                total += 1
                sq = 0.0
                for k in range(dim):
                    diff = pts[i, k] - pts[j, k]
                    sq = sq + diff * diff
                if c > 0.0:
                    t = 2.0 * c * sq / (nrm[i] * nrm[j])
                    if t < 0.0:
                        t = 0.0
                    d = _t_to_dist(t, c)
                else:
                    d = sqrt(sq)
                if d < eps:
                    crowded += 1
    return total, crowded


def overlap_energy_grad_pairs(const double[:, ::1] pts, const cnp.int64_t[:, ::1] pairs, double eps):
    cdef Py_ssize_t m = pairs.shape[0], dim = pts.shape[1], q, i, j, k
    grad_arr = np.zeros((pts.shape[0], dim), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef double energy = 0.0, sq, d, gap, coef, diff
    cdef double eps2 = eps * eps
    with nogil:
        for q in range(m):
            i = pairs[q, 0]
            j = pairs[q, 1]
            sq = 0.0
            for k in range(dim):
                diff = pts[i, k] - pts[j, k]
                sq = sq + diff * diff
            if sq >= eps2:
                continue
            d = sqrt(sq)
            gap = eps - d
            energy += gap * gap
            if d > 0.0:
                coef = -2.0 * gap / d
                for k in range(dim):
                    diff = coef * (pts[i, k] - pts[j, k])
                    grad[i, k] += diff
                    grad[j, k] -= diff
    return energy, grad_arr
