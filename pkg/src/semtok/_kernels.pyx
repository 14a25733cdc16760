# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for k-means: nearest-centroid scan and per-cluster sums.

Summation order matches ``_kernels_py`` exactly so both backends agree bitwise.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def assign_labels(const double[:, ::1] X, const double[:, ::1] C):
    cdef Py_ssize_t n = X.shape[0], k = C.shape[0], dim = X.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double acc, diff, best
    cdef Py_ssize_t best_j
    labels_arr = np.empty(n, dtype=np.int64)
    dists_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dists = dists_arr
    with nogil:
        for i in range(n):
            best = 0.0
            best_j = 0
            for j in range(k):
                acc = 0.0
                for d in range(dim):
                    diff = X[i, d] - C[j, d]
                    acc = acc + diff * diff
                # strict < keeps the lowest index on ties
                if j == 0 or acc < best:
                    best = acc
                    best_j = j
            labels[i] = best_j
            dists[i] = best
    return labels_arr, dists_arr


def sq_dist_to_point(const double[:, ::1] X, const double[::1] c):
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    cdef Py_ssize_t i, d
    cdef double acc, diff
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            acc = 0.0
            for d in range(dim):
                diff = X[i, d] - c[d]
                acc = acc + diff * diff
            out[i] = acc
    return out_arr


def cluster_sums(const double[:, ::1] X, const cnp.int64_t[::1] labels, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    cdef Py_ssize_t i, d, j
    sums_arr = np.zeros((k, dim), dtype=np.float64)
    counts_arr = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    with nogil:
        for i in range(n):
            j = labels[i]
            counts[j] += 1
            for d in range(dim):
                sums[j, d] = sums[j, d] + X[i, d]
    return sums_arr, counts_arr
