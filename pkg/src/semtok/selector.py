"""Attention-based layer selection over multi-layer tokens.

Every layer has its own embedding table. A scorer MLP (shared across layers by
default) maps each layer's embedding to a scalar score, scores are
softmax-normalised across layers at every frame, and the fused frame vector is
the attention-weighted sum of the layer *embeddings*. A linear classification
head can sit on top of the fused vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import gradengine as ge
from ._binio import FormatError, Reader, Writer, read_bytes, write_bytes
from .tokenizer import TokenSequence

EMBED_MODES = ("random", "pretrained_frozen", "pretrained_finetune")
SELECTOR_MAGIC = b"SEL1"
CHECKPOINT_VERSION = 1


def normalize_embed_mode(mode: str) -> str:
    m = mode.replace("-", "_")
    if m not in EMBED_MODES:
        raise ValueError(f"unknown embed mode {mode!r}; expected one of {EMBED_MODES}")
    return m


@dataclass
class AttentionMap:
    weights: np.ndarray  # T x n_l
    scores: np.ndarray  # T x n_l
    fused: np.ndarray  # T x E


class LayerAttention:
    """Embedding tables plus the scorer MLP; the part shared by selector and decoder."""

    def __init__(
        self,
        K_per_layer: Sequence[int],
        embed_dim: int = 128,
        hidden: int = 128,
        embed_mode: str = "random",
        seed: int = 0,
        centroids: Optional[Sequence[np.ndarray]] = None,
        shared_scorer: bool = True,
        layer_ids: Optional[Sequence[int]] = None,
    ):
        self.K_per_layer = tuple(int(k) for k in K_per_layer)
        self.n_l = len(self.K_per_layer)
        self.embed_mode = normalize_embed_mode(embed_mode)
        self.hidden = int(hidden)
        self.shared_scorer = bool(shared_scorer)
        self.layer_ids = tuple(layer_ids) if layer_ids is not None else tuple(range(self.n_l))
        if len(self.layer_ids) != self.n_l:
            raise ValueError("layer_ids length must equal the number of layers")
        rng = np.random.default_rng(seed)

        if self.embed_mode == "random":
            self.E = int(embed_dim)
            bound = 1.0 / np.sqrt(self.E)
            tables = [rng.uniform(-bound, bound, size=(k, self.E)) for k in self.K_per_layer]
        else:
            if centroids is None:
                raise ValueError(f"embed mode {self.embed_mode} needs codebook centroids")
            tables = [np.array(c, dtype=np.float64) for c in centroids]
            dims = {t.shape[1] for t in tables}
            if len(dims) != 1:
                raise ValueError("pretrained tables need a common codebook dimension")
            self.E = dims.pop()
            for t, k in zip(tables, self.K_per_layer):
                if t.shape[0] != k:
                    raise ValueError(f"centroid table has {t.shape[0]} rows, expected K={k}")
        trainable = self.embed_mode != "pretrained_frozen"
        self.tables = [
            ge.Parameter(f"emb.{l}", t, trainable=trainable) for l, t in enumerate(tables)
        ]
        self.scorers = [
            self._init_scorer(rng, name)
            for name in (["scorer"] if self.shared_scorer else [f"scorer.{l}" for l in range(self.n_l)])
        ]

    def _init_scorer(self, rng, name):
        E, H = self.E, self.hidden
        return (
            ge.Parameter(f"{name}.W1", rng.uniform(-1 / np.sqrt(E), 1 / np.sqrt(E), size=(E, H))),
            ge.Parameter(f"{name}.b1", np.zeros(H)),
            ge.Parameter(f"{name}.w2", rng.uniform(-1 / np.sqrt(H), 1 / np.sqrt(H), size=H)),
            ge.Parameter(f"{name}.b2", np.zeros(1)),
        )

    def attention_parameters(self) -> list:
        return list(self.tables) + [p for s in self.scorers for p in s]

    def _check_indices(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != self.n_l:
            raise ValueError(f"expected T x {self.n_l} token indices, got shape {idx.shape}")
        for l, k in enumerate(self.K_per_layer):
            col = idx[:, l]
            bad = np.flatnonzero((col < 0) | (col >= k))
            if bad.size:
                t = int(bad[0])
                raise IndexError(f"token at (t={t}, l={l}) is {col[t]}, table has K={k}")
        return idx

    @staticmethod
    def _score(scorer, x):
        W1, b1, w2, b2 = scorer
        return ge.affine(ge.relu(ge.affine(x, W1, b1)), w2, b2)

    def graph(self, indices, mask=None):
        """Build (fused, weights, scores) nodes for a T x n_l index matrix.

        ``mask`` (T x n_l bool, or n_l bool) restricts the softmax to included layers.
        """
        idx = self._check_indices(indices)
        embs = [ge.lookup(self.tables[l], idx[:, l]) for l in range(self.n_l)]
        embedded = ge.stack(embs, axis=1)
        if self.shared_scorer:
            scores = self._score(self.scorers[0], embedded)
        else:
            scores = ge.stack([self._score(s, e) for s, e in zip(self.scorers, embs)], axis=1)
        weights = ge.softmax(scores, axis=-1, mask=mask)
        fused = ge.weighted_sum(weights, embedded)
        return fused, weights, scores

    def fuse_array(self, embedded, mask=None) -> AttentionMap:
        """Score and fuse an already embedded T x n_l x E array."""
        x = np.asarray(embedded, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.n_l or x.shape[2] != self.E:
            raise ValueError(f"expected T x {self.n_l} x {self.E} embeddings, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("embeddings must be finite")
        if self.shared_scorer:
            scores = self._score(self.scorers[0], x)
        else:
            scores = ge.stack([self._score(s, x[:, l]) for l, s in enumerate(self.scorers)], axis=1)
        weights = ge.softmax(scores, axis=-1, mask=mask)
        fused = ge.weighted_sum(weights, x)
        return AttentionMap(weights.value, scores.value, fused.value)


class SelectorModel(LayerAttention):
    """Layer attention with an optional linear classification head on the fused vector."""

    def __init__(self, K_per_layer, num_classes: int = 0, **kwargs):
        super().__init__(K_per_layer, **kwargs)
        self.num_classes = int(num_classes)
        self.head = ()
        if self.num_classes:
            rng = np.random.default_rng([kwargs.get("seed", 0), 7])
            bound = 1.0 / np.sqrt(self.E)
            self.head = (
                ge.Parameter("head.W", rng.uniform(-bound, bound, size=(self.E, self.num_classes))),
                ge.Parameter("head.b", np.zeros(self.num_classes)),
            )

    @property
    def embed_dim(self):
        return self.E

    def parameters(self) -> list:
        return self.attention_parameters() + list(self.head)

    def logits_graph(self, indices):
        if not self.num_classes:
            raise ValueError("model has no classification head")
        fused, weights, _ = self.graph(indices)
        return ge.affine(fused, *self.head), weights

    def loss_graph(self, indices, labels):
        logits, _ = self.logits_graph(indices)
        return ge.cross_entropy(logits, labels)

    def predict(self, indices) -> np.ndarray:
        logits, _ = self.logits_graph(indices)
        return np.argmax(logits.value, axis=1)

    def attention(self, tokens: TokenSequence) -> AttentionMap:
        fused, weights, scores = self.graph(tokens.indices)
        return AttentionMap(weights.value, scores.value, fused.value)


def embed_tokens(tokens: TokenSequence, model: LayerAttention) -> np.ndarray:
    """T x n_l x E array with ``out[t, l] = table_l[tokens[t, l]]``."""
    idx = model._check_indices(tokens.indices)
    return np.stack([model.tables[l].values[idx[:, l]] for l in range(model.n_l)], axis=1)


def fuse(embedded, model: LayerAttention) -> AttentionMap:
    return model.fuse_array(embedded)


def mean_attention(maps: Sequence[AttentionMap]) -> np.ndarray:
    """Per-layer mean of the attention weights over every frame of every map."""
    maps = list(maps)
    if not maps:
        raise ValueError("mean_attention needs at least one attention map")
    widths = {m.weights.shape[1] for m in maps}
    if len(widths) != 1:
        raise ValueError(f"attention maps disagree on layer count: {sorted(widths)}")
    w = np.concatenate([m.weights for m in maps], axis=0)
    return w.mean(axis=0)


def attention_csv(layer_ids, mean_weights) -> str:
    lines = ["layer_id,mean_weight"]
    lines += [f"{lid},{float(w):.10g}" for lid, w in zip(layer_ids, mean_weights)]
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    loss_curve: list


def train_selector(
    model: SelectorModel,
    tokens: Sequence[TokenSequence],
    labels: Sequence[np.ndarray],
    epochs: int,
    lr: float = 0.1,
    momentum: float = 0.9,
    batch_size: int = 256,
    seed: int = 0,
) -> TrainResult:
    """Minibatch SGD on frame-level cross-entropy. Frames are pooled across sequences."""
    idx = np.concatenate([t.indices for t in tokens], axis=0)
    y = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels])
    if len(y) != len(idx):
        raise ValueError(f"{len(y)} labels for {len(idx)} frames")
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    params = model.parameters()
    opt = ge.SGD(params, lr, momentum)
    rng = np.random.default_rng([seed, 11])
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), batch_size):
            b = order[start:start + batch_size]
            loss = ge.forward_backward(lambda: model.loss_graph(idx[b], y[b]), params)
            opt.step()
            total += loss * len(b)
        curve.append(total / max(len(y), 1))
    return TrainResult(curve)


def accuracy(model: SelectorModel, tokens: Sequence[TokenSequence], labels) -> float:
    idx = np.concatenate([t.indices for t in tokens], axis=0)
    y = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels])
    if len(y) == 0:
        return 0.0
    return float(np.mean(model.predict(idx) == y))


# --- checkpoint ------------------------------------------------------------------

def _write_attention(w: Writer, model: LayerAttention):
    w.u32(model.n_l)
    w.u32(model.E)
    w.u8(EMBED_MODES.index(model.embed_mode))
    w.u8(1 if model.shared_scorer else 0)
    w.u32(model.hidden)


def _write_attention_params(w: Writer, model: LayerAttention):
    w.u32_array(model.K_per_layer)
    w.u32_array(model.layer_ids)
    for t in model.tables:
        w.f32_array(t.values)
    for scorer in model.scorers:
        for p in scorer:
            w.f32_array(p.values)


def _read_attention_header(r: Reader):
    n_l, E = r.u32(), r.u32()
    mode_code = r.u8()
    if mode_code >= len(EMBED_MODES):
        raise FormatError(f"unknown embed mode code {mode_code}", r.path)
    shared = bool(r.u8())
    hidden = r.u32()
    return n_l, E, EMBED_MODES[mode_code], shared, hidden


def _read_attention_params(r: Reader, model: LayerAttention):
    for t in model.tables:
        t.values[...] = r.f32_array(t.values.shape)
    for scorer in model.scorers:
        for p in scorer:
            p.values[...] = r.f32_array(p.values.shape)


def _blank(cls, n_l, E, mode, shared, hidden, ks, layer_ids, **extra):
    centroids = None if mode == "random" else [np.zeros((k, E)) for k in ks]
    return cls(
        ks,
        embed_dim=E,
        hidden=hidden,
        embed_mode=mode,
        centroids=centroids,
        shared_scorer=shared,
        layer_ids=layer_ids,
        **extra,
    )


def selector_to_bytes(model: SelectorModel) -> bytes:
    """SEL1 layout: header, u32 num_classes, K_l and layer ids, then f32 tables,
    scorer (W1, b1, w2, b2 per scorer) and head (W, b)."""
    w = Writer(SELECTOR_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    _write_attention(w, model)
    w.u32(model.num_classes)
    _write_attention_params(w, model)
    for p in model.head:
        w.f32_array(p.values)
    return w.getvalue()


def selector_from_bytes(data: bytes, path=None) -> SelectorModel:
    r = Reader(data, SELECTOR_MAGIC, CHECKPOINT_VERSION, path)
    n_l, E, mode, shared, hidden = _read_attention_header(r)
    num_classes = r.u32()
    ks = tuple(r.u32_array(n_l).tolist())
    layer_ids = tuple(r.u32_array(n_l).tolist())
    model = _blank(SelectorModel, n_l, E, mode, shared, hidden, ks, layer_ids, num_classes=num_classes)
    _read_attention_params(r, model)
    for p in model.head:
        p.values[...] = r.f32_array(p.values.shape)
    r.finish()
    return model


def save_selector(model: SelectorModel, path) -> None:
    write_bytes(path, selector_to_bytes(model))


def load_selector(path) -> SelectorModel:
    return selector_from_bytes(read_bytes(path), path)
