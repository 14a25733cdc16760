"""Multi-layer tokenization: one codebook per layer, frame by frame.

A batch is a plain list of sequences; there is no padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from ._binio import FormatError, Reader, Writer, read_bytes, write_bytes
from .quantizer import Codebook

FEATURE_MAGIC = b"MLF1"
TOKEN_MAGIC = b"TOK1"
FORMAT_VERSION = 1

DEFAULT_LAYER_IDS = (3, 7, 12, 18, 23)


class LayerMismatchError(ValueError):
    """Codebooks and sequence disagree on which layers are present."""


@dataclass(eq=False)
class FeatureSequence:
    values: np.ndarray  # T x n_l x D
    layer_ids: tuple
    frame_rate_hz: float = 50.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"values must be T x n_l x D with T, n_l >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        self.values = v
        self.layer_ids = tuple(int(i) for i in self.layer_ids)
        if len(self.layer_ids) != v.shape[1]:
            raise ValueError(f"{len(self.layer_ids)} layer ids for {v.shape[1]} layers")

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def n_l(self):
        return self.values.shape[1]

    @property
    def D(self):
        return self.values.shape[2]

    def layer(self, layer_id: int) -> np.ndarray:
        """T x D slice for the given layer id."""
        try:
            pos = self.layer_ids.index(layer_id)
        except ValueError:
            raise LayerMismatchError(f"layer {layer_id} not in feature layers {self.layer_ids}") from None
        return self.values[:, pos, :]


@dataclass(eq=False)
class TokenSequence:
    indices: np.ndarray  # T x n_l
    layer_ids: tuple
    K_per_layer: tuple

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError(f"indices must be T x n_l, got shape {idx.shape}")
        self.indices = idx
        self.layer_ids = tuple(int(i) for i in self.layer_ids)
        self.K_per_layer = tuple(int(k) for k in self.K_per_layer)
        if not len(self.layer_ids) == len(self.K_per_layer) == idx.shape[1]:
            raise ValueError("layer_ids, K_per_layer and index columns disagree")
        bad = (idx < 0) | (idx >= np.asarray(self.K_per_layer, dtype=np.int64)[None, :])
        if bad.any():
            t, l = np.argwhere(bad)[0]
            raise IndexError(
                f"token at (t={t}, l={l}) is {idx[t, l]}, outside [0, {self.K_per_layer[l]})"
            )

    @property
    def T(self):
        return self.indices.shape[0]

    @property
    def n_l(self):
        return self.indices.shape[1]

    def select(self, positions) -> "TokenSequence":
        positions = list(positions)
        return TokenSequence(
            self.indices[:, positions],
            tuple(self.layer_ids[p] for p in positions),
            tuple(self.K_per_layer[p] for p in positions),
        )


def _check_layers(layer_ids, codebooks):
    if len(codebooks) != len(layer_ids):
        raise LayerMismatchError(f"{len(codebooks)} codebooks for {len(layer_ids)} layers")
    for pos, (lid, cb) in enumerate(zip(layer_ids, codebooks)):
        if cb.layer_id != lid:
            raise LayerMismatchError(
                f"codebook {pos} is for layer {cb.layer_id}, sequence column {pos} is layer {lid}"
            )


def codebooks_for(layer_ids, codebooks: Sequence[Codebook]) -> list:
    """Order ``codebooks`` to match ``layer_ids``; raises if any layer lacks one."""
    by_layer = {cb.layer_id: cb for cb in codebooks}
    missing = [lid for lid in layer_ids if lid not in by_layer]
    if missing:
        raise LayerMismatchError(f"no codebook for layer(s) {missing}")
    return [by_layer[lid] for lid in layer_ids]


def tokenize(features: FeatureSequence, codebooks: Sequence[Codebook]) -> TokenSequence:
    _check_layers(features.layer_ids, codebooks)
    out = np.empty((features.T, features.n_l), dtype=np.int64)
    for pos, cb in enumerate(codebooks):
        if cb.D != features.D:
            raise ValueError(f"dimension mismatch on layer {cb.layer_id}: codebook D={cb.D}, features D={features.D}")
        out[:, pos], _ = kernels.assign_labels(features.values[:, pos, :], cb.centroids)
    return TokenSequence(out, features.layer_ids, tuple(cb.K for cb in codebooks))


def detokenize_centroids(tokens: TokenSequence, codebooks: Sequence[Codebook], frame_rate_hz=50.0) -> FeatureSequence:
    """Replace every token by its centroid coordinates."""
    _check_layers(tokens.layer_ids, codebooks)
    dims = {cb.D for cb in codebooks}
    if len(dims) != 1:
        raise ValueError(f"codebooks have differing dimensions {sorted(dims)}")
    D = dims.pop()
    out = np.empty((tokens.T, tokens.n_l, D))
    for pos, cb in enumerate(codebooks):
        col = tokens.indices[:, pos]
        bad = np.flatnonzero(col >= cb.K)
        if bad.size:
            t = int(bad[0])
            raise IndexError(f"token at (t={t}, l={pos}) is {col[t]}, codebook has K={cb.K}")
        out[:, pos, :] = cb.centroids[col]
    return FeatureSequence(out, tokens.layer_ids, frame_rate_hz)


# --- files -----------------------------------------------------------------

def features_to_bytes(seq: FeatureSequence) -> bytes:
    w = Writer(FEATURE_MAGIC)
    w.u32(FORMAT_VERSION)
    w.u32(seq.T)
    w.u32(seq.n_l)
    w.u32(seq.D)
    w.f32(seq.frame_rate_hz)
    w.u32_array(seq.layer_ids)
    w.f32_array(seq.values)
    return w.getvalue()


def features_from_bytes(data: bytes, path=None) -> FeatureSequence:
    r = Reader(data, FEATURE_MAGIC, FORMAT_VERSION, path)
    T, n_l, D = r.u32(), r.u32(), r.u32()
    rate = r.f32()
    layer_ids = tuple(r.u32_array(n_l).tolist())
    values = r.f32_array((T, n_l, D))
    r.finish()
    return FeatureSequence(values, layer_ids, rate)


def tokens_to_bytes(tokens: TokenSequence) -> bytes:
    w = Writer(TOKEN_MAGIC)
    w.u32(FORMAT_VERSION)
    w.u32(tokens.T)
    w.u32(tokens.n_l)
    w.u32_array(tokens.layer_ids)
    w.u32_array(tokens.K_per_layer)
    w.u32_array(tokens.indices.ravel())
    return w.getvalue()


def tokens_from_bytes(data: bytes, path=None) -> TokenSequence:
    r = Reader(data, TOKEN_MAGIC, FORMAT_VERSION, path)
    T, n_l = r.u32(), r.u32()
    layer_ids = tuple(r.u32_array(n_l).tolist())
    ks = tuple(r.u32_array(n_l).tolist())
    indices = r.u32_array(T * n_l).reshape(T, n_l)
    r.finish()
    try:
        return TokenSequence(indices, layer_ids, ks)
    except IndexError as exc:
        raise FormatError(str(exc), path) from None


def save_features(seq: FeatureSequence, path) -> None:
    write_bytes(path, features_to_bytes(seq))


def load_features(path) -> FeatureSequence:
    return features_from_bytes(read_bytes(path), path)


def save_tokens(tokens: TokenSequence, path) -> None:
    write_bytes(path, tokens_to_bytes(tokens))


def load_tokens(path) -> TokenSequence:
    return tokens_from_bytes(read_bytes(path), path)
