"""Desk-scale experiment grid on synthetic data.

Two proxy tasks stand in for the downstream systems: frame classification
(selector + linear head, reports accuracy) and sequence reconstruction
(decoder, reports held-out MSE). Each run generates data, splits 80/20 by
sequence, trains per-layer codebooks on the training split (or on a shifted
copy for the out-of-domain condition) and tokenizes everything.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .decoder import (
    DecoderModel,
    LayerSubset,
    decode_weights,
    evaluate_subsets,
    subset_mse,
    train_decoder,
)
from .quantizer import KMeansConfig, train_codebook
from .selector import SelectorModel, accuracy, mean_attention, normalize_embed_mode, train_selector
from .synthgen import GeneratorSpec, LabelRule, generate, generate_shifted
from .tokenizer import tokenize

TASKS = ("frame_classification", "sequence_reconstruction")
DOMAINS = ("in_domain", "shifted")
RESULT_COLUMNS = (
    "fingerprint", "task", "K", "embed_mode", "layer_mode", "decoder_mode",
    "domain", "metric_name", "metric_value", "seconds",
)

_SINGLE = re.compile(r"^single\((\d+)\)$")
_FIXED = re.compile(r"^fixed\(([\d+,]+)\)$")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "frame_classification"
    K: int = 8
    embed_mode: str = "random"
    layer_mode: str = "attention_fused"  # or "single(j)"
    decoder_mode: str = "scalable"  # or "fixed(0+2)"
    tokenizer_domain: str = "in_domain"
    epochs: int = 20
    seed: int = 0
    # generator
    n_l: int = 5
    D: int = 16
    T: int = 50
    num_sequences: int = 200
    clusters: int = 8
    sigma: float = 0.1
    label_rule: str = "from_layer(2)"
    target_scale: float = 1.0
    shift: float = 3.0
    # models
    embed_dim: int = 128
    hidden: int = 128
    head_hidden: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 256

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.tokenizer_domain not in DOMAINS:
            raise ValueError(f"unknown tokenizer domain {self.tokenizer_domain!r}")
        object.__setattr__(self, "embed_mode", normalize_embed_mode(self.embed_mode))
        if self.layer_mode != "attention_fused" and not _SINGLE.match(self.layer_mode):
            raise ValueError(f"layer_mode must be attention_fused or single(j), got {self.layer_mode!r}")
        if self.decoder_mode != "scalable" and not _FIXED.match(self.decoder_mode):
            raise ValueError(f"decoder_mode must be scalable or fixed(a+b), got {self.decoder_mode!r}")
        LabelRule.parse(self.label_rule)

    @property
    def single_layer(self) -> Optional[int]:
        m = _SINGLE.match(self.layer_mode)
        return int(m.group(1)) if m else None

    @property
    def fixed_subset(self) -> Optional[LayerSubset]:
        m = _FIXED.match(self.decoder_mode)
        return LayerSubset.parse(m.group(1)) if m else None

    def generator_spec(self) -> GeneratorSpec:
        w = self.target_scale / np.sqrt(self.n_l)
        return GeneratorSpec(
            n_l=self.n_l, D=self.D, T=self.T, num_sequences=self.num_sequences,
            clusters=self.clusters, sigma=self.sigma,
            label_rule=LabelRule.parse(self.label_rule),
            target_weights=(w,) * self.n_l, seed=self.seed,
        )

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


@dataclass
class MetricsRow:
    fingerprint: str
    config: ExperimentConfig
    metric_name: str
    metric_value: float
    mean_attention: tuple
    seconds: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_name == "accuracy" and not 0.0 <= self.metric_value <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if self.metric_name == "mse" and self.metric_value < 0:
            raise ValueError("mse must be >= 0")

    def csv_fields(self) -> list:
        c = self.config
        return [
            self.fingerprint, c.task, c.K, c.embed_mode, c.layer_mode, c.decoder_mode,
            c.tokenizer_domain, self.metric_name, repr(float(self.metric_value)), f"{self.seconds:.3f}",
        ]


@dataclass(eq=False)
class PreparedData:
    codebooks: list
    train_tokens: list
    test_tokens: list
    train_labels: list
    test_labels: list
    train_targets: list
    test_targets: list
    num_classes: int
    train_index: np.ndarray
    test_index: np.ndarray


def split_indices(n: int, seed: int, train_fraction: float = 0.8):
    """Seeded disjoint train/test split of sequence indices."""
    order = np.random.default_rng([seed, 3]).permutation(n)
    cut = int(round(train_fraction * n))
    if n > 1:
        cut = min(max(cut, 1), n - 1)
    return np.sort(order[:cut]), np.sort(order[cut:])


def prepare(config: ExperimentConfig) -> PreparedData:
    spec = config.generator_spec()
    data = generate(spec)
    train_idx, test_idx = split_indices(spec.num_sequences, config.seed)
    if config.tokenizer_domain == "shifted":
        source = generate_shifted(spec, np.full(spec.n_l, config.shift))
        fit_feats = [source.features[i] for i in train_idx]
    else:
        fit_feats = [data.features[i] for i in train_idx]
    codebooks = []
    for l, lid in enumerate(spec.layer_ids):
        X = np.concatenate([f.values[:, l, :] for f in fit_feats], axis=0)
        codebooks.append(train_codebook(X, KMeansConfig(K=config.K, seed=config.seed + l), layer_id=lid))
    tokens = [tokenize(f, codebooks) for f in data.features]
    pick = lambda xs, ix: [xs[i] for i in ix]  # noqa: E731
    return PreparedData(
        codebooks=codebooks,
        train_tokens=pick(tokens, train_idx),
        test_tokens=pick(tokens, test_idx),
        train_labels=pick(data.labels, train_idx),
        test_labels=pick(data.labels, test_idx),
        train_targets=pick(data.targets, train_idx),
        test_targets=pick(data.targets, test_idx),
        num_classes=spec.num_classes,
        train_index=train_idx,
        test_index=test_idx,
    )


def _centroids(codebooks, embed_mode):
    return None if embed_mode == "random" else [cb.centroids for cb in codebooks]


def run_discriminative(config: ExperimentConfig, data: Optional[PreparedData] = None) -> MetricsRow:
    """Train selector + linear head on frame labels; report held-out accuracy."""
    start = time.perf_counter()
    data = data if data is not None else prepare(config)
    layers = list(range(config.n_l)) if config.single_layer is None else [config.single_layer]
    if layers[-1] >= config.n_l:
        raise ValueError(f"single layer {layers[-1]} outside [0, {config.n_l})")
    books = [data.codebooks[l] for l in layers]
    train_tok = [t.select(layers) for t in data.train_tokens]
    test_tok = [t.select(layers) for t in data.test_tokens]
    model = SelectorModel(
        [cb.K for cb in books],
        num_classes=data.num_classes,
        embed_dim=config.embed_dim,
        hidden=config.hidden,
        embed_mode=config.embed_mode,
        seed=config.seed,
        centroids=_centroids(books, config.embed_mode),
        layer_ids=[cb.layer_id for cb in books],
    )
    result = train_selector(
        model, train_tok, data.train_labels, config.epochs,
        lr=config.lr, momentum=config.momentum, batch_size=config.batch_size, seed=config.seed,
    )
    acc = accuracy(model, test_tok, data.test_labels)
    att = mean_attention([model.attention(t) for t in test_tok])
    extras = {"loss_curve": result.loss_curve, "model": model}
    if config.embed_mode != "random":
        extras["tables_match_centroids"] = all(
            t.values.tobytes() == cb.centroids.tobytes() for t, cb in zip(model.tables, books)
        )
    return MetricsRow(
        config.fingerprint(), config, "accuracy", acc, tuple(att.tolist()),
        time.perf_counter() - start, extras,
    )


def run_generative(config: ExperimentConfig, data: Optional[PreparedData] = None) -> MetricsRow:
    """Train a decoder (scalable or fixed subset); report held-out MSE.

    Scalable runs report the full-subset MSE and keep every subset's MSE in
    ``extras["subset_rows"]``; fixed runs report MSE on their own subset.
    """
    start = time.perf_counter()
    data = data if data is not None else prepare(config)
    fixed = config.fixed_subset
    model = DecoderModel(
        [cb.K for cb in data.codebooks],
        target_dim=config.D,
        head_hidden=config.head_hidden,
        embed_dim=config.embed_dim,
        hidden=config.hidden,
        embed_mode=config.embed_mode,
        seed=config.seed,
        centroids=_centroids(data.codebooks, config.embed_mode),
        layer_ids=[cb.layer_id for cb in data.codebooks],
    )
    rng = np.random.default_rng([config.seed, 5])
    result = train_decoder(
        model, data.train_tokens, data.train_targets, config.epochs, rng,
        fixed_subset=fixed, lr=config.lr, momentum=config.momentum,
        batch_size=max(1, config.batch_size // config.T),
    )
    if fixed is None:
        rows = evaluate_subsets(model, data.test_tokens, data.test_targets)
        full = LayerSubset(tuple(range(config.n_l)))
        mse = next(m for s, _, m in rows if s == full)
        att = np.concatenate([decode_weights(t, full, model) for t in data.test_tokens]).mean(axis=0)
    else:
        mse = subset_mse(model, data.test_tokens, data.test_targets, fixed)
        rows = [(fixed, fixed.k, mse)]
        att = np.concatenate([decode_weights(t, fixed, model) for t in data.test_tokens]).mean(axis=0)
    extras = {"loss_curve": result.loss_curve, "model": model, "subset_rows": rows}
    return MetricsRow(
        config.fingerprint(), config, "mse", mse, tuple(att.tolist()),
        time.perf_counter() - start, extras,
    )


def run(config: ExperimentConfig) -> MetricsRow:
    if config.task == "frame_classification":
        return run_discriminative(config)
    return run_generative(config)


def _run_stripped(config):
    row = run(config)
    row.extras = {k: v for k, v in row.extras.items() if k != "model"}
    return row


@dataclass
class SweepResult:
    rows: list
    failures: list  # (config, error message)


def results_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in sorted(rows, key=lambda r: r.fingerprint):
        w.writerow(r.csv_fields())
    return buf.getvalue()


def sweep(configs: Sequence[ExperimentConfig], jobs: int = 1, out_path=None) -> SweepResult:
    """Run every config; rows sorted by fingerprint. Failed configs are listed, not fatal."""
    configs = list(configs)
    rows, failures = [], []
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(c, pool.submit(_run_stripped, c)) for c in configs]
            for c, fut in futures:
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported per config
                    failures.append((c, f"{type(exc).__name__}: {exc}"))
    else:
        for c in configs:
            try:
                rows.append(_run_stripped(c))
            except Exception as exc:  # noqa: BLE001
                failures.append((c, f"{type(exc).__name__}: {exc}"))
    rows.sort(key=lambda r: r.fingerprint)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            fh.write(results_csv(rows))
    return SweepResult(rows, failures)


def cluster_embed_grid(base: Optional[ExperimentConfig] = None, ks=(16, 64)) -> list:
    """Cluster-count x embedding-initialisation grid (2 x 3 = 6 configs)."""
    base = base or ExperimentConfig()
    return [replace(base, K=k, embed_mode=m) for k in ks for m in ("random", "pretrained_frozen", "pretrained_finetune")]
