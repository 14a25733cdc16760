"""Per-layer k-means codebooks.

Each feature layer gets its own independently trained codebook. Training is
k-means++ seeding followed by full-batch Lloyd iterations (or the minibatch
variant for large streams). All arithmetic runs in float64; centroids are
stored as float32 on disk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from ._binio import Reader, Writer, read_bytes, write_bytes

CODEBOOK_MAGIC = b"CBK1"
CODEBOOK_VERSION = 1


class DuplicateCentroidWarning(UserWarning):
    """k-means++ had to repeat a centroid because the data has < K distinct rows."""


@dataclass(frozen=True, eq=False)
class Codebook:
    layer_id: int
    centroids: np.ndarray
    final_inertia: float = 0.0
    iterations_run: int = 0
    seed: int = 0

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64, order="C")
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centroids must be a nonempty K x D matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        if self.final_inertia < 0:
            raise ValueError("final_inertia must be >= 0")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def D(self) -> int:
        return self.centroids.shape[1]

    def equals(self, other: "Codebook") -> bool:
        """Bitwise equality of all fields."""
        return (
            self.layer_id == other.layer_id
            and self.iterations_run == other.iterations_run
            and self.seed == other.seed
            and np.float64(self.final_inertia).tobytes() == np.float64(other.final_inertia).tobytes()
            and self.centroids.shape == other.centroids.shape
            and self.centroids.tobytes() == other.centroids.tobytes()
        )


@dataclass(frozen=True)
class KMeansConfig:
    K: int
    max_iterations: int = 300
    rel_tolerance: float = 1e-6
    seed: int = 0
    # None selects full-batch Lloyd; an int selects minibatch updates of that size
    minibatch_size: Optional[int] = field(default=None)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")


def _as_data(data, D=None) -> np.ndarray:
    X = np.ascontiguousarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"data must be an N x D matrix, got shape {X.shape}")
    if D is not None and X.shape[1] != D:
        raise ValueError(f"dimension mismatch: data has D={X.shape[1]}, codebook has D={D}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def init_kmeanspp(data, K: int, seed: int) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of K rows of ``data``.

    When fewer than K distinct rows exist, repeated centroids are returned and
    a :class:`DuplicateCentroidWarning` reports how many.
    """
    X = _as_data(data)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot seed k-means on empty data")
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    closest = kernels.sq_dist_to_point(X, X[chosen[0]])
    duplicates = 0
    for _ in range(1, K):
        total = float(closest.sum())
        if total > 0.0:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
            # guard against landing on a zero-weight row through rounding
            while closest[idx] == 0.0 and idx > 0:
                idx -= 1
        else:
            idx = int(rng.integers(n))
        if closest[idx] == 0.0:
            duplicates += 1
        chosen.append(idx)
        np.minimum(closest, kernels.sq_dist_to_point(X, X[idx]), out=closest)
    if duplicates:
        warnings.warn(
            f"k-means++ produced {duplicates} duplicate centroid(s): fewer than K={K} distinct rows",
            DuplicateCentroidWarning,
            stacklevel=2,
        )
    return X[chosen].copy()


def assign(codebook: Codebook, vector) -> tuple[int, float]:
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (codebook.D,):
        raise ValueError(f"dimension mismatch: vector shape {v.shape}, codebook D={codebook.D}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    labels, dists = kernels.assign_labels(v[None, :], codebook.centroids)
    return int(labels[0]), float(dists[0])


def assign_batch(codebook: Codebook, data) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`assign` over the rows of ``data``."""
    X = _as_data(data, codebook.D)
    return kernels.assign_labels(X, codebook.centroids)


def inertia(codebook: Codebook, data) -> float:
    X = _as_data(data, codebook.D)
    if X.shape[0] == 0:
        return 0.0
    _, dists = kernels.assign_labels(X, codebook.centroids)
    return float(np.sum(dists))


def _lloyd_update(X, centroids):
    """One Lloyd iteration on raw arrays; returns (new_centroids, inertia_before, repaired)."""
    k = centroids.shape[0]
    labels, dists = kernels.assign_labels(X, centroids)
    before = float(np.sum(dists))
    sums, counts = kernels.cluster_sums(X, labels, k)
    new = centroids.copy()
    empty = np.flatnonzero(counts == 0)
    repaired = 0
    if empty.size:
        far = dists.copy()
        for j in empty:
            movable = counts[labels] > 1
            cand = np.where(movable, far, -1.0)
            i = int(np.argmax(cand))  # lowest row index among ties
            if cand[i] <= 0.0:
                continue  # no distinct point left to donate; keep the old centroid
            old = labels[i]
            sums[old] -= X[i]
            counts[old] -= 1
            sums[j] = X[i]
            counts[j] = 1
            labels[i] = j
            far[i] = -1.0
            repaired += 1
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    return new, before, repaired


def lloyd_step(codebook: Codebook, data) -> tuple[Codebook, float]:
    """Replace each centroid by the mean of its points.

    Returns the updated codebook and the inertia of the *incoming* codebook.
    Empty clusters are re-seeded at the farthest point from its centroid.
    """
    X = _as_data(data, codebook.D)
    if X.shape[0] == 0:
        raise ValueError("lloyd_step needs nonempty data")
    new, before, _ = _lloyd_update(X, codebook.centroids)
    updated = Codebook(
        layer_id=codebook.layer_id,
        centroids=new,
        final_inertia=before,
        iterations_run=codebook.iterations_run + 1,
        seed=codebook.seed,
    )
    return updated, before


def _train_full(X, centroids, config):
    prev = None
    iterations = 0
    for _ in range(config.max_iterations):
        centroids, before, _ = _lloyd_update(X, centroids)
        iterations += 1
        if prev is not None:
            if prev <= 0.0 or (prev - before) < config.rel_tolerance * prev:
                break
        prev = before
    return centroids, iterations


def _train_minibatch(X, centroids, config):
    rng = np.random.default_rng([config.seed, 1])
    n = X.shape[0]
    k = centroids.shape[0]
    seen = np.zeros(k)
    scale = float(np.mean(np.var(X, axis=0))) or 1.0
    iterations = 0
    for _ in range(config.max_iterations):
        batch = X[rng.choice(n, size=min(config.minibatch_size, n), replace=False)]
        labels, _ = kernels.assign_labels(batch, centroids)
        sums, counts = kernels.cluster_sums(batch, labels, k)
        hit = counts > 0
        total = seen[hit] + counts[hit]
        updated = centroids.copy()
        updated[hit] = (centroids[hit] * seen[hit, None] + sums[hit]) / total[:, None]
        seen[hit] = total
        shift = float(np.max(np.sum((updated - centroids) ** 2, axis=1)))
        centroids = updated
        iterations += 1
        if shift < config.rel_tolerance * scale:
            break
    return centroids, iterations


def train_codebook(data, config: KMeansConfig, layer_id: int = 0) -> Codebook:
    """Fit a K-centroid codebook to ``data`` (N x D)."""
    X = _as_data(data)
    if X.shape[0] == 0:
        raise ValueError("cannot train a codebook on empty data")
    if X.shape[0] < config.K:
        warnings.warn(f"only {X.shape[0]} points for K={config.K} centroids", stacklevel=2)
    centroids = init_kmeanspp(X, config.K, config.seed)
    if config.minibatch_size is None:
        centroids, iterations = _train_full(X, centroids, config)
    else:
        centroids, iterations = _train_minibatch(X, centroids, config)
    _, dists = kernels.assign_labels(X, centroids)
    return Codebook(
        layer_id=layer_id,
        centroids=centroids,
        final_inertia=float(np.sum(dists)),
        iterations_run=iterations,
        seed=config.seed,
    )


def codebook_to_bytes(codebook: Codebook) -> bytes:
    w = Writer(CODEBOOK_MAGIC)
    w.u32(CODEBOOK_VERSION)
    w.u32(codebook.layer_id)
    w.u32(codebook.K)
    w.u32(codebook.D)
    w.u64(codebook.seed)
    w.f64(codebook.final_inertia)
    w.u32(codebook.iterations_run)
    w.f32_array(codebook.centroids)
    return w.getvalue()


def codebook_from_bytes(data: bytes, path=None) -> Codebook:
    r = Reader(data, CODEBOOK_MAGIC, CODEBOOK_VERSION, path)
    layer_id = r.u32()
    K = r.u32()
    D = r.u32()
    seed = r.u64()
    final_inertia = r.f64()
    iterations_run = r.u32()
    centroids = r.f32_array((K, D))
    r.finish()
    return Codebook(layer_id, centroids, final_inertia, iterations_run, seed)


def save_codebook(codebook: Codebook, path) -> None:
    write_bytes(path, codebook_to_bytes(codebook))


def load_codebook(path) -> Codebook:
    return codebook_from_bytes(read_bytes(path), path)
