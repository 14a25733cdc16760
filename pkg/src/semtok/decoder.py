"""Scalable decoder trained with layer dropout.

For every training sequence a random subset of token layers is drawn (size
uniform in 1..n_l, then a uniform subset of that size). The included layers
are merged by softmax attention, so the fused vector has the same width no
matter how many layers are present, and an MLP head reconstructs continuous
target frames. One trained model therefore serves every nonempty subset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gradengine as ge
from ._binio import Reader, Writer, read_bytes, write_bytes
from .selector import (
    CHECKPOINT_VERSION,
    LayerAttention,
    _blank,
    _read_attention_header,
    _read_attention_params,
    _write_attention,
    _write_attention_params,
)
from .tokenizer import TokenSequence

DECODER_MAGIC = b"DEC1"


@dataclass(frozen=True)
class LayerSubset:
    included: tuple

    def __post_init__(self):
        inc = tuple(sorted(int(i) for i in self.included))
        if not inc:
            raise ValueError("layer subset must be nonempty")
        if len(set(inc)) != len(inc):
            raise ValueError(f"duplicate layers in subset {self.included}")
        if inc[0] < 0:
            raise ValueError(f"negative layer position in subset {self.included}")
        object.__setattr__(self, "included", inc)

    @property
    def k(self) -> int:
        return len(self.included)

    def mask(self, n_l: int) -> np.ndarray:
        if self.included[-1] >= n_l:
            raise IndexError(f"subset {self.included} out of range for {n_l} layers")
        m = np.zeros(n_l, dtype=bool)
        m[list(self.included)] = True
        return m

    def label(self) -> str:
        return "+".join(str(i) for i in self.included)

    @classmethod
    def parse(cls, text: str) -> "LayerSubset":
        parts = text.replace("+", ",").split(",")
        return cls(tuple(int(p) for p in parts if p.strip()))


def sample_subset(n_l: int, rng: np.random.Generator) -> LayerSubset:
    """Draw k uniformly from 1..n_l, then a uniform size-k subset."""
    if n_l < 1:
        raise ValueError("n_l must be >= 1")
    k = int(rng.integers(1, n_l + 1))
    return LayerSubset(tuple(rng.choice(n_l, size=k, replace=False).tolist()))


def all_subsets(n_l: int) -> list:
    return [
        LayerSubset(c)
        for k in range(1, n_l + 1)
        for c in itertools.combinations(range(n_l), k)
    ]


class DecoderModel(LayerAttention):
    """Layer attention merger plus a reconstruction head E -> target_dim.

    ``head_hidden=0`` makes the head a single affine map.
    """

    def __init__(self, K_per_layer, target_dim: int, head_hidden: int = 128, **kwargs):
        super().__init__(K_per_layer, **kwargs)
        self.target_dim = int(target_dim)
        self.head_hidden = int(head_hidden)
        rng = np.random.default_rng([kwargs.get("seed", 0), 13])
        E, H, D = self.E, self.head_hidden, self.target_dim
        if H:
            self.head = (
                ge.Parameter("head.W1", rng.uniform(-1 / np.sqrt(E), 1 / np.sqrt(E), size=(E, H))),
                ge.Parameter("head.b1", np.zeros(H)),
                ge.Parameter("head.W2", rng.uniform(-1 / np.sqrt(H), 1 / np.sqrt(H), size=(H, D))),
                ge.Parameter("head.b2", np.zeros(D)),
            )
        else:
            self.head = (
                ge.Parameter("head.W", rng.uniform(-1 / np.sqrt(E), 1 / np.sqrt(E), size=(E, D))),
                ge.Parameter("head.b", np.zeros(D)),
            )

    def parameters(self) -> list:
        return self.attention_parameters() + list(self.head)

    def output_graph(self, indices, mask):
        fused, weights, _ = self.graph(indices, mask=mask)
        if self.head_hidden:
            W1, b1, W2, b2 = self.head
            out = ge.affine(ge.relu(ge.affine(fused, W1, b1)), W2, b2)
        else:
            out = ge.affine(fused, *self.head)
        return out, weights

    def snapshot(self) -> list:
        return [p.values.copy() for p in self.parameters()]


def decode(tokens: TokenSequence, subset: LayerSubset, model: DecoderModel) -> np.ndarray:
    """Reconstruct T x target_dim frames from the layers in ``subset`` only."""
    if tokens.n_l != model.n_l:
        raise ValueError(f"tokens have {tokens.n_l} layers, decoder expects {model.n_l}")
    mask = subset.mask(model.n_l)
    out, _ = model.output_graph(tokens.indices, mask)
    return out.value


def decode_weights(tokens: TokenSequence, subset: LayerSubset, model: DecoderModel) -> np.ndarray:
    """T x n_l merger weights for ``subset`` (zero on excluded layers)."""
    _, weights = model.output_graph(tokens.indices, subset.mask(model.n_l))
    return weights.value


@dataclass
class DecoderTrainResult:
    model: DecoderModel
    loss_curve: list = field(default_factory=list)


def train_decoder(
    model: DecoderModel,
    tokens: Sequence[TokenSequence],
    targets: Sequence[np.ndarray],
    epochs: int,
    rng: np.random.Generator,
    fixed_subset: Optional[LayerSubset] = None,
    lr: float = 0.05,
    momentum: float = 0.9,
    batch_size: int = 8,
) -> DecoderTrainResult:
    """Train on frame MSE.

    ``fixed_subset=None`` is scalable mode: every sequence in every epoch gets a
    fresh :func:`sample_subset` draw. Otherwise the given subset is always used.
    """
    if len(tokens) != len(targets):
        raise ValueError(f"{len(tokens)} token sequences but {len(targets)} targets")
    targets = [np.asarray(y, dtype=np.float64) for y in targets]
    for i, (t, y) in enumerate(zip(tokens, targets)):
        if y.shape != (t.T, model.target_dim):
            raise ValueError(
                f"sequence {i}: target shape {y.shape} misaligned with T={t.T}, D_target={model.target_dim}"
            )
    fixed_mask = None if fixed_subset is None else fixed_subset.mask(model.n_l)
    params = model.parameters()
    opt = ge.SGD(params, lr, momentum)
    curve = []
    n = len(tokens)
    for _ in range(epochs):
        order = rng.permutation(n)
        total, frames = 0.0, 0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            idx = np.concatenate([tokens[i].indices for i in batch], axis=0)
            y = np.concatenate([targets[i] for i in batch], axis=0)
            if fixed_mask is None:
                rows = [
                    np.broadcast_to(sample_subset(model.n_l, rng).mask(model.n_l), (tokens[i].T, model.n_l))
                    for i in batch
                ]
                mask = np.concatenate(rows, axis=0)
            else:
                mask = fixed_mask

            def build():
                out, _ = model.output_graph(idx, mask)
                return ge.mse(out, y)

            loss = ge.forward_backward(build, params)
            opt.step()
            total += loss * len(y)
            frames += len(y)
        curve.append(total / max(frames, 1))
    return DecoderTrainResult(model, curve)


def subset_mse(model: DecoderModel, tokens: Sequence[TokenSequence], targets, subset: LayerSubset) -> float:
    """Mean squared error over every frame and dimension of every sequence."""
    if not tokens:
        return 0.0
    # frames decode independently, so one pass over the concatenation suffices
    idx = np.concatenate([t.indices for t in tokens], axis=0)
    y = np.concatenate([np.asarray(v, dtype=np.float64) for v in targets], axis=0)
    out, _ = model.output_graph(idx, subset.mask(model.n_l))
    diff = out.value - y
    return float(np.mean(diff * diff))


def evaluate_subsets(model: DecoderModel, tokens, targets, subsets=None) -> list:
    """``[(subset, k, mse)]`` for the given subsets, default all 2^n_l - 1."""
    subsets = all_subsets(model.n_l) if subsets is None else subsets
    return [(s, s.k, subset_mse(model, tokens, targets, s)) for s in subsets]


def subset_csv(rows) -> str:
    lines = ["subset,k,mse"]
    lines += [f"{s.label()},{k},{m:.10g}" for s, k, m in rows]
    return "\n".join(lines) + "\n"


# --- checkpoint ------------------------------------------------------------------

def decoder_to_bytes(model: DecoderModel) -> bytes:
    """DEC1 layout: SEL1-style header, u32 D_target, u32 head_hidden, K_l and
    layer ids, f32 tables and scorer parameters, then head parameters."""
    w = Writer(DECODER_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    _write_attention(w, model)
    w.u32(model.target_dim)
    w.u32(model.head_hidden)
    _write_attention_params(w, model)
    for p in model.head:
        w.f32_array(p.values)
    return w.getvalue()


def decoder_from_bytes(data: bytes, path=None) -> DecoderModel:
    r = Reader(data, DECODER_MAGIC, CHECKPOINT_VERSION, path)
    n_l, E, mode, shared, hidden = _read_attention_header(r)
    target_dim, head_hidden = r.u32(), r.u32()
    ks = tuple(r.u32_array(n_l).tolist())
    layer_ids = tuple(r.u32_array(n_l).tolist())
    model = _blank(
        DecoderModel, n_l, E, mode, shared, hidden, ks, layer_ids,
        target_dim=target_dim, head_hidden=head_hidden,
    )
    _read_attention_params(r, model)
    for p in model.head:
        p.values[...] = r.f32_array(p.values.shape)
    r.finish()
    return model


def save_decoder(model: DecoderModel, path) -> None:
    write_bytes(path, decoder_to_bytes(model))


def load_decoder(path) -> DecoderModel:
    return decoder_from_bytes(read_bytes(path), path)
