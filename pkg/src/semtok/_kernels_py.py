"""Pure numpy versions of the compiled kernels.

Distances are accumulated one coordinate at a time and cluster sums in row
order, mirroring the loop order of ``_kernels.pyx`` so results match bitwise.
"""

import numpy as np

_CHUNK = 4096


def assign_labels(X, C):
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    n, dim = X.shape
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        block = X[start:start + _CHUNK]
        acc = np.zeros((block.shape[0], C.shape[0]))
        for d in range(dim):
            diff = block[:, d, None] - C[None, :, d]
            acc += diff * diff
        idx = np.argmin(acc, axis=1)  # first minimum on ties
        labels[start:start + _CHUNK] = idx
        dists[start:start + _CHUNK] = acc[np.arange(len(idx)), idx]
    return labels, dists


def sq_dist_to_point(X, c):
    X = np.ascontiguousarray(X, dtype=np.float64)
    acc = np.zeros(X.shape[0])
    for d in range(X.shape[1]):
        diff = X[:, d] - c[d]
        acc += diff * diff
    return acc


def cluster_sums(X, labels, k):
    X = np.ascontiguousarray(X, dtype=np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)  # unbuffered, applied in row order
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts
