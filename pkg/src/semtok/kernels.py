"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``SEMTOK_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SEMTOK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def assign_labels(X, C):
    """Nearest centroid per row: ``(labels int64, squared distances)``; ties -> lowest index."""
    return _impl.assign_labels(_f64(X), _f64(C))


def sq_dist_to_point(X, c):
    return _impl.sq_dist_to_point(_f64(X), _f64(c))


def cluster_sums(X, labels, k):
    """Per-cluster row sums (accumulated in row order) and counts."""
    return _impl.cluster_sums(_f64(X), np.ascontiguousarray(labels, dtype=np.int64), int(k))


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return found
    found["cython"] = _compiled
    return found
