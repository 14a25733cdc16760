"""Synthetic multi-layer feature streams with known ground truth.

Layer ``l`` draws each frame from one of ``C_l`` isotropic Gaussian components
whose centres are sampled once per seed with a guaranteed minimum separation
of ``6 * sigma_l``. Component choices are independent across layers and frames.
Frame labels come from a configurable rule, and a continuous reconstruction
target mixes every layer's features through fixed random projections, so no
single layer carries the whole target.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .tokenizer import DEFAULT_LAYER_IDS, FeatureSequence, load_features, save_features

MAX_CENTER_ATTEMPTS = 200
MIN_SEPARATION = 6.0


@dataclass(frozen=True)
class LabelRule:
    kind: str  # "from_layer", "from_mixture" or "constant"
    layer: int = 0
    weights: tuple = ()

    @classmethod
    def from_layer(cls, j: int) -> "LabelRule":
        return cls("from_layer", layer=int(j))

    @classmethod
    def from_mixture(cls, weights) -> "LabelRule":
        return cls("from_mixture", weights=tuple(float(w) for w in weights))

    @classmethod
    def constant(cls) -> "LabelRule":
        return cls("constant")

    def __str__(self):
        if self.kind == "from_layer":
            return f"from_layer({self.layer})"
        if self.kind == "from_mixture":
            return "from_mixture(" + ";".join(repr(w) for w in self.weights) + ")"
        return "constant"

    @classmethod
    def parse(cls, text: str) -> "LabelRule":
        text = text.strip()
        if text == "constant":
            return cls.constant()
        name, _, rest = text.partition("(")
        args = rest.rstrip(")")
        if name == "from_layer":
            return cls.from_layer(int(args))
        if name == "from_mixture":
            return cls.from_mixture(float(a) for a in args.replace(";", ",").split(","))
        raise ValueError(f"unknown label rule {text!r}")


def _per_layer(value, n_l, name):
    arr = np.broadcast_to(np.asarray(value), (n_l,)) if np.ndim(value) == 0 else np.asarray(value)
    if arr.shape != (n_l,):
        raise ValueError(f"{name} needs one value per layer ({n_l}), got {arr.shape}")
    return tuple(arr.tolist())


@dataclass(frozen=True)
class GeneratorSpec:
    n_l: int = 5
    D: int = 16
    T: int = 50
    num_sequences: int = 200
    clusters: Union[int, Sequence[int]] = 8
    sigma: Union[float, Sequence[float]] = 0.1
    label_rule: LabelRule = field(default_factory=lambda: LabelRule.from_layer(2))
    # per-layer weight of each layer's features in the reconstruction target;
    # None means 1/sqrt(n_l) for every layer
    target_weights: Optional[Sequence[float]] = None
    layer_ids: Optional[Sequence[int]] = None
    frame_rate_hz: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.n_l < 1 or self.D < 1 or self.T < 1 or self.num_sequences < 1:
            raise ValueError("n_l, D, T and num_sequences must all be >= 1")
        cl = tuple(int(c) for c in _per_layer(self.clusters, self.n_l, "clusters"))
        sg = tuple(float(s) for s in _per_layer(self.sigma, self.n_l, "sigma"))
        if min(cl) < 2:
            raise ValueError("every layer needs at least 2 clusters")
        if min(sg) <= 0:
            raise ValueError("sigma must be > 0")
        object.__setattr__(self, "clusters", cl)
        object.__setattr__(self, "sigma", sg)
        tw = self.target_weights
        tw = (1.0 / np.sqrt(self.n_l),) * self.n_l if tw is None else tuple(float(w) for w in tw)
        if len(tw) != self.n_l:
            raise ValueError("target_weights needs one weight per layer")
        object.__setattr__(self, "target_weights", tw)
        ids = tuple(self.layer_ids) if self.layer_ids is not None else (
            DEFAULT_LAYER_IDS if self.n_l == len(DEFAULT_LAYER_IDS) else tuple(range(self.n_l))
        )
        if len(ids) != self.n_l:
            raise ValueError("layer_ids needs one id per layer")
        object.__setattr__(self, "layer_ids", tuple(int(i) for i in ids))
        rule = self.label_rule
        if rule.kind == "from_layer" and not 0 <= rule.layer < self.n_l:
            raise ValueError(f"label layer {rule.layer} outside [0, {self.n_l})")
        if rule.kind == "from_mixture":
            w = np.asarray(rule.weights)
            if w.shape != (self.n_l,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must be nonnegative, one per layer, summing to 1")

    @property
    def num_classes(self) -> int:
        rule = self.label_rule
        if rule.kind == "from_layer":
            return self.clusters[rule.layer]
        if rule.kind == "from_mixture":
            return max(self.clusters)
        return 1


@dataclass(eq=False)
class SynthDataset:
    spec: GeneratorSpec
    features: list  # FeatureSequence per sequence
    labels: list  # length-T int arrays
    cluster_ids: list  # T x n_l int arrays
    targets: list  # T x D float arrays
    centers: list  # per layer C_l x D
    shift: np.ndarray  # n_l x D


def sample_centers(spec: GeneratorSpec) -> list:
    rng = np.random.default_rng([spec.seed, 0])
    centers = []
    for l in range(spec.n_l):
        need = MIN_SEPARATION * spec.sigma[l]
        for _ in range(MAX_CENTER_ATTEMPTS):
            c = rng.normal(size=(spec.clusters[l], spec.D))
            gaps = np.sqrt(np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1))
            gaps[np.diag_indices_from(gaps)] = np.inf
            if gaps.min() >= need:
                break
        else:
            raise RuntimeError(
                f"could not place {spec.clusters[l]} centres {need:.3g} apart in D={spec.D} "
                f"for layer {l}; use a larger D or fewer clusters"
            )
        centers.append(c)
    return centers


def target_projections(spec: GeneratorSpec) -> list:
    rng = np.random.default_rng([spec.seed, 1])
    return [rng.normal(size=(spec.D, spec.D)) / np.sqrt(spec.D) for _ in range(spec.n_l)]


def _normalize_shift(shift, spec):
    if shift is None:
        return np.zeros((spec.n_l, spec.D))
    s = np.asarray(shift, dtype=np.float64)
    if s.ndim == 1:
        s = np.repeat(s[:, None], spec.D, axis=1)
    if s.shape != (spec.n_l, spec.D):
        raise ValueError(f"shift must be n_l or n_l x D, got {s.shape}")
    return s


def generate_shifted(spec: GeneratorSpec, shift) -> SynthDataset:
    """As :func:`generate` with layer ``l`` centres translated by ``shift[l]``."""
    shift = _normalize_shift(shift, spec)
    centers = [c + shift[l] for l, c in enumerate(sample_centers(spec))]
    proj = target_projections(spec)
    rule = spec.label_rule
    features, labels, ids_all, targets = [], [], [], []
    for i in range(spec.num_sequences):
        rng = np.random.default_rng([spec.seed, 2, i])
        ids = np.stack([rng.integers(0, spec.clusters[l], size=spec.T) for l in range(spec.n_l)], axis=1)
        noise = rng.normal(size=(spec.T, spec.n_l, spec.D)) * np.asarray(spec.sigma)[None, :, None]
        x = np.stack([centers[l][ids[:, l]] for l in range(spec.n_l)], axis=1) + noise
        if rule.kind == "from_layer":
            y = ids[:, rule.layer].copy()
        elif rule.kind == "from_mixture":
            src = rng.choice(spec.n_l, size=spec.T, p=np.asarray(rule.weights))
            y = ids[np.arange(spec.T), src]
        else:
            y = np.zeros(spec.T, dtype=np.int64)
        target = np.zeros((spec.T, spec.D))
        for l in range(spec.n_l):
            target += spec.target_weights[l] * (x[:, l, :] @ proj[l])
        features.append(FeatureSequence(x, spec.layer_ids, spec.frame_rate_hz))
        labels.append(y.astype(np.int64))
        ids_all.append(ids)
        targets.append(target)
    return SynthDataset(spec, features, labels, ids_all, targets, centers, shift)


def generate(spec: GeneratorSpec) -> SynthDataset:
    return generate_shifted(spec, None)


# --- files -----------------------------------------------------------------

def sequence_path(out_dir, i):
    return os.path.join(out_dir, f"seq_{i:05d}.mlf")


def target_path(out_dir, i):
    return os.path.join(out_dir, f"target_{i:05d}.mlf")


def _fmt(values):
    return ",".join(repr(float(v)) for v in np.ravel(values))


def manifest_text(ds: SynthDataset) -> str:
    s = ds.spec
    lines = [
        "format = semtok-synth-1",
        f"seed = {s.seed}",
        f"n_l = {s.n_l}",
        f"D = {s.D}",
        f"T = {s.T}",
        f"num_sequences = {s.num_sequences}",
        f"layer_ids = {','.join(str(i) for i in s.layer_ids)}",
        f"clusters = {','.join(str(c) for c in s.clusters)}",
        f"sigma = {_fmt(s.sigma)}",
        f"label_rule = {s.label_rule}",
        f"target_weights = {_fmt(s.target_weights)}",
        f"frame_rate_hz = {s.frame_rate_hz!r}",
        f"sequence_seed = [{s.seed}, 2, i]",
    ]
    for l, lid in enumerate(s.layer_ids):
        lines.append(f"shift.{lid} = {_fmt(ds.shift[l])}")
        lines.append(f"centers.{lid} = {_fmt(ds.centers[l])}")
    return "\n".join(lines) + "\n"


def write_dataset(ds: SynthDataset, out_dir) -> list:
    """Write MLF1 features and targets, ``labels.csv`` and ``manifest.txt``. Returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (f, y) in enumerate(zip(ds.features, ds.targets)):
        save_features(f, sequence_path(out_dir, i))
        save_features(FeatureSequence(y[:, None, :], (0,), f.frame_rate_hz), target_path(out_dir, i))
        paths += [sequence_path(out_dir, i), target_path(out_dir, i)]
    labels = os.path.join(out_dir, "labels.csv")
    with open(labels, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "frame", "label"])
        for i, y in enumerate(ds.labels):
            for t, v in enumerate(y):
                w.writerow([i, t, int(v)])
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write(manifest_text(ds))
    return paths + [labels, manifest]


def list_sequences(data_dir) -> list:
    names = sorted(n for n in os.listdir(data_dir) if n.startswith("seq_") and n.endswith(".mlf"))
    if not names:
        raise FileNotFoundError(f"no seq_*.mlf files in {data_dir}")
    return [os.path.join(data_dir, n) for n in names]


def load_feature_dir(data_dir) -> list:
    return [load_features(p) for p in list_sequences(data_dir)]


def load_targets(data_dir, count) -> list:
    out = []
    for i in range(count):
        p = target_path(data_dir, i)
        if not os.path.exists(p):
            raise FileNotFoundError(p)
        out.append(load_features(p).values[:, 0, :])
    return out


def load_labels(path, count=None) -> list:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["sequence", "frame", "label"]:
            raise ValueError(f"{path}: expected header sequence,frame,label")
        for r in reader:
            rows.setdefault(int(r["sequence"]), []).append((int(r["frame"]), int(r["label"])))
    n = count if count is not None else (max(rows) + 1 if rows else 0)
    out = []
    for i in range(n):
        frames = sorted(rows.get(i, []))
        out.append(np.array([v for _, v in frames], dtype=np.int64))
    return out
