"""Command-line front end.

    semtok gen --seed 7 --out data/
    semtok codebook train --features data/ --layer 12 --k 1000 --out cb12.cbk
    semtok tokenize --features data/ --codebooks cb3.cbk,cb7.cbk,... --out tok/
    semtok selector train --tokens tok/ --labels data/labels.csv --out sel.sel
    semtok decoder train --tokens tok/ --targets data/ --decoder-mode scalable --out dec.dec
    semtok eval --decoder dec.dec --tokens tok/ --targets data/ --out eval.csv
    semtok sweep --out results.csv --jobs 2
    semtok report attention --selector sel.sel --tokens tok/ --out att.csv

Exit codes: 0 success, 1 usage error, 2 data or validation error. Every
command writes a run manifest (JSON) next to its output. Settings resolve as
command-line flag, then ``--config`` file (``key = value`` lines), then default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from ._binio import FormatError
from .decoder import (
    DecoderModel,
    LayerSubset,
    evaluate_subsets,
    load_decoder,
    save_decoder,
    subset_csv,
    train_decoder,
)
from .harness import ExperimentConfig, sweep
from .quantizer import KMeansConfig, load_codebook, save_codebook, train_codebook
from .selector import (
    SelectorModel,
    accuracy,
    attention_csv,
    load_selector,
    mean_attention,
    normalize_embed_mode,
    save_selector,
    train_selector,
)
from .synthgen import (
    GeneratorSpec,
    LabelRule,
    generate_shifted,
    list_sequences,
    load_feature_dir,
    load_labels,
    load_targets,
    write_dataset,
)
from .tokenizer import (
    DEFAULT_LAYER_IDS,
    LayerMismatchError,
    codebooks_for,
    load_features,
    load_tokens,
    save_tokens,
    tokenize,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# --- helpers -------------------------------------------------------------------

def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use underscores."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _int_list(text):
    return [int(x) for x in str(text).replace("+", ",").split(",") if x.strip()]


class Settings:
    """Flag > config file > default lookup for one command."""

    def __init__(self, args):
        self.args = args
        self.file = read_config(args.config) if getattr(args, "config", None) else {}
        self.resolved = {}

    def get(self, name, default=None, cast=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.file.get(name, default)
        if value is not None and cast is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {name}: {value!r} ({exc})") from None
        self.resolved[name] = value
        return value

    def require(self, name, cast=None):
        value = self.get(name, None, cast)
        if value is None:
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
        return value


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _expand(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            files += sorted(os.path.join(p, n) for n in os.listdir(p) if not n.endswith(".json"))
        elif os.path.exists(p):
            files.append(p)
    return files


def write_manifest(command, settings, inputs, outputs, manifest_path):
    doc = {
        "command": command,
        "config": {k: v for k, v in sorted(settings.resolved.items())},
        "seed": settings.resolved.get("seed"),
        "tool_version": __version__,
        "inputs": [{"path": p, "sha256": _digest(p)} for p in _expand(inputs)],
        "outputs": [{"path": p, "sha256": _digest(p)} for p in _expand(outputs)],
    }
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")


def _manifest_for(out):
    if os.path.isdir(out):
        return os.path.join(out, "run_manifest.json")
    return out + ".manifest.json"


def _need(path):
    if not os.path.exists(path):
        raise DataError(f"missing input: {path}")
    return path


def _token_paths(tok_dir):
    _need(tok_dir)
    names = sorted(n for n in os.listdir(tok_dir) if n.endswith(".tok"))
    if not names:
        raise DataError(f"no .tok files in {tok_dir}")
    return [os.path.join(tok_dir, n) for n in names]


def _load_codebooks(spec):
    paths = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if os.path.isdir(part):
            paths += sorted(os.path.join(part, n) for n in os.listdir(part) if n.endswith(".cbk"))
        else:
            paths.append(_need(part))
    if not paths:
        raise DataError(f"no codebooks found in {spec!r}")
    return [load_codebook(p) for p in paths], paths


# --- commands ------------------------------------------------------------------

def cmd_gen(args):
    s = Settings(args)
    layers = s.get("layers", ",".join(map(str, DEFAULT_LAYER_IDS)), _int_list)
    shift = s.get("shift", 0.0, float)
    spec = GeneratorSpec(
        n_l=len(layers),
        D=s.get("dim", 16, int),
        T=s.get("frames", 50, int),
        num_sequences=s.get("sequences", 200, int),
        clusters=s.get("clusters", 8, int),
        sigma=s.get("sigma", 0.1, float),
        label_rule=LabelRule.parse(s.get("label_rule", "from_layer(2)")),
        layer_ids=layers,
        seed=s.get("seed", 0, int),
    )
    out = s.require("out")
    ds = generate_shifted(spec, np.full(spec.n_l, shift))
    write_dataset(ds, out)
    write_manifest("gen", s, [], [out], _manifest_for(out))
    print(f"wrote {spec.num_sequences} sequences to {out}")


def cmd_codebook_train(args):
    s = Settings(args)
    features = _need(s.require("features"))
    layer = s.require("layer", int)
    k = s.require("k", int)
    seed = s.get("seed", 0, int)
    minibatch = s.get("minibatch", None, int)
    config = KMeansConfig(
        K=k,
        max_iterations=s.get("max_iter", 300, int),
        rel_tolerance=s.get("tol", 1e-6, float),
        seed=seed,
        minibatch_size=minibatch,
    )
    seqs = load_feature_dir(features) if os.path.isdir(features) else [load_features(features)]
    X = np.concatenate([f.layer(layer) for f in seqs], axis=0)
    cb = train_codebook(X, config, layer_id=layer)
    out = s.require("out")
    save_codebook(cb, out)
    write_manifest("codebook train", s, [features], [out], _manifest_for(out))
    print(f"layer {layer}: K={cb.K} inertia={cb.final_inertia:.6g} iterations={cb.iterations_run}")


def cmd_tokenize(args):
    s = Settings(args)
    features = _need(s.require("features"))
    books, book_paths = _load_codebooks(s.require("codebooks"))
    out = s.require("out")
    paths = list_sequences(features) if os.path.isdir(features) else [features]
    seqs = [load_features(p) for p in paths]
    feature_layers = seqs[0].layer_ids
    absent = sorted({cb.layer_id for cb in books} - set(feature_layers))
    if absent:
        raise LayerMismatchError(
            f"codebook layer(s) {absent} not present in feature layers {list(feature_layers)}"
        )
    s.resolved["layers"] = list(feature_layers)
    ordered = codebooks_for(feature_layers, books)
    os.makedirs(out, exist_ok=True)
    for p, seq in zip(paths, seqs):
        name = os.path.splitext(os.path.basename(p))[0].replace("seq_", "tok_") + ".tok"
        save_tokens(tokenize(seq, ordered), os.path.join(out, name))
    write_manifest("tokenize", s, [features] + book_paths, [out], _manifest_for(out))
    print(f"tokenized {len(seqs)} sequences into {out}")


def _selector_common(s):
    tok_paths = _token_paths(s.require("tokens"))
    tokens = [load_tokens(p) for p in tok_paths]
    return tok_paths, tokens


def cmd_selector_train(args):
    s = Settings(args)
    tok_paths, tokens = _selector_common(s)
    labels_path = _need(s.require("labels"))
    labels = load_labels(labels_path, len(tokens))
    for i, (t, y) in enumerate(zip(tokens, labels)):
        if len(y) != t.T:
            raise DataError(f"sequence {i}: {len(y)} labels for {t.T} frames")
    mode = normalize_embed_mode(s.get("embed_mode", "random"))
    inputs = [s.resolved["tokens"], labels_path]
    centroids = None
    if mode != "random":
        books, book_paths = _load_codebooks(s.require("codebooks"))
        centroids = [cb.centroids for cb in codebooks_for(tokens[0].layer_ids, books)]
        inputs += book_paths
    num_classes = int(max(int(y.max()) for y in labels if len(y)) + 1)
    seed = s.get("seed", 0, int)
    model = SelectorModel(
        tokens[0].K_per_layer,
        num_classes=num_classes,
        embed_dim=s.get("embed_dim", 128, int),
        hidden=s.get("hidden", 128, int),
        embed_mode=mode,
        seed=seed,
        centroids=centroids,
        layer_ids=tokens[0].layer_ids,
    )
    result = train_selector(
        model, tokens, labels, s.get("epochs", 20, int),
        lr=s.get("lr", 0.1, float), seed=seed,
    )
    out = s.require("out")
    save_selector(model, out)
    write_manifest("selector train", s, inputs, [out], _manifest_for(out))
    print(f"final training loss {result.loss_curve[-1] if result.loss_curve else float('nan'):.6g}")


def cmd_decoder_train(args):
    s = Settings(args)
    tok_paths, tokens = _selector_common(s)
    targets_dir = _need(s.require("targets"))
    targets = load_targets(targets_dir, len(tokens))
    mode = s.get("decoder_mode", "scalable")
    fixed = None
    if mode == "fixed":
        fixed = LayerSubset(tuple(s.require("subset", _int_list)))
    elif mode != "scalable":
        raise UsageError(f"--decoder-mode must be scalable or fixed, got {mode!r}")
    embed_mode = normalize_embed_mode(s.get("embed_mode", "random"))
    inputs = [s.resolved["tokens"], targets_dir]
    centroids = None
    if embed_mode != "random":
        books, book_paths = _load_codebooks(s.require("codebooks"))
        centroids = [cb.centroids for cb in codebooks_for(tokens[0].layer_ids, books)]
        inputs += book_paths
    seed = s.get("seed", 0, int)
    model = DecoderModel(
        tokens[0].K_per_layer,
        target_dim=targets[0].shape[1],
        head_hidden=s.get("head_hidden", 128, int),
        embed_dim=s.get("embed_dim", 128, int),
        hidden=s.get("hidden", 128, int),
        embed_mode=embed_mode,
        seed=seed,
        centroids=centroids,
        layer_ids=tokens[0].layer_ids,
    )
    result = train_decoder(
        model, tokens, targets, s.get("epochs", 20, int), np.random.default_rng([seed, 5]),
        fixed_subset=fixed, lr=s.get("lr", 0.1, float),
    )
    out = s.require("out")
    save_decoder(model, out)
    write_manifest("decoder train", s, inputs, [out], _manifest_for(out))
    print(f"final training loss {result.loss_curve[-1] if result.loss_curve else float('nan'):.6g}")


def cmd_eval(args):
    s = Settings(args)
    out = s.require("out")
    tok_paths, tokens = _selector_common(s)
    decoder_path = s.get("decoder")
    selector_path = s.get("selector")
    if bool(decoder_path) == bool(selector_path):
        raise UsageError("eval needs exactly one of --decoder or --selector")
    if decoder_path:
        model = load_decoder(_need(decoder_path))
        targets_dir = _need(s.require("targets"))
        targets = load_targets(targets_dir, len(tokens))
        subset = s.get("subset", None, _int_list)
        subsets = None if subset is None else [LayerSubset(tuple(subset))]
        rows = evaluate_subsets(model, tokens, targets, subsets)
        text = subset_csv(rows)
        inputs = [decoder_path, s.resolved["tokens"], targets_dir]
    else:
        model = load_selector(_need(selector_path))
        labels_path = _need(s.require("labels"))
        labels = load_labels(labels_path, len(tokens))
        text = f"metric,value\naccuracy,{accuracy(model, tokens, labels)!r}\n"
        inputs = [selector_path, s.resolved["tokens"], labels_path]
    with open(out, "w") as fh:
        fh.write(text)
    write_manifest("eval", s, inputs, [out], _manifest_for(out))
    sys.stdout.write(text)


def cmd_sweep(args):
    s = Settings(args)
    ks = s.get("k", "16,64", _int_list)
    modes = [normalize_embed_mode(m) for m in str(s.get("embed_modes", "random,pretrained_frozen,pretrained_finetune")).split(",")]
    base = ExperimentConfig(
        task=s.get("task", "frame_classification"),
        epochs=s.get("epochs", 20, int),
        seed=s.get("seed", 0, int),
        num_sequences=s.get("sequences", 200, int),
        T=s.get("frames", 50, int),
        label_rule=s.get("label_rule", "from_layer(2)"),
        tokenizer_domain=s.get("domain", "in_domain"),
    )
    configs = [replace(base, K=k, embed_mode=m) for k in ks for m in modes]
    out = s.require("out")
    result = sweep(configs, jobs=s.get("jobs", 1, int), out_path=out)
    write_manifest("sweep", s, [], [out], _manifest_for(out))
    for cfg, err in result.failures:
        sys.stderr.write(f"failed {cfg.fingerprint()} (K={cfg.K}, {cfg.embed_mode}): {err}\n")
    print(f"{len(result.rows)} rows written to {out}")
    if result.failures:
        raise DataError(f"{len(result.failures)} sweep configuration(s) failed")


def cmd_report_attention(args):
    s = Settings(args)
    model = load_selector(_need(s.require("selector")))
    tok_paths, tokens = _selector_common(s)
    for t in tokens:
        if t.layer_ids != model.layer_ids:
            raise LayerMismatchError(f"tokens have layers {t.layer_ids}, selector expects {model.layer_ids}")
    weights = mean_attention([model.attention(t) for t in tokens])
    out = s.require("out")
    text = attention_csv(model.layer_ids, weights)
    with open(out, "w") as fh:
        fh.write(text)
    write_manifest("report attention", s, [s.resolved["selector"], s.resolved["tokens"]], [out], _manifest_for(out))
    sys.stdout.write(text)


# --- parser --------------------------------------------------------------------

def _common(p, *flags):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    for f in flags:
        p.add_argument(f)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semtok", description="Multi-layer semantic token pipeline")
    parser.add_argument("--version", action="version", version=f"semtok {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic multi-layer dataset")
    _common(p, "--layers", "--dim", "--frames", "--sequences", "--clusters", "--sigma", "--label-rule", "--shift")
    p.set_defaults(func=cmd_gen)

    cb = sub.add_parser("codebook", help="codebook commands").add_subparsers(dest="action", parser_class=_Parser)
    p = cb.add_parser("train", help="train one layer's k-means codebook")
    _common(p, "--features", "--max-iter", "--tol", "--minibatch")
    p.add_argument("--layer", type=int)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_codebook_train)

    p = sub.add_parser("tokenize", help="tokenize feature files with per-layer codebooks")
    _common(p, "--features", "--codebooks")
    p.set_defaults(func=cmd_tokenize)

    sel = sub.add_parser("selector", help="selector commands").add_subparsers(dest="action", parser_class=_Parser)
    p = sel.add_parser("train", help="train the attention selector with a classification head")
    _common(p, "--tokens", "--labels", "--codebooks", "--embed-dim", "--hidden", "--lr")
    p.add_argument("--embed-mode", choices=["random", "pretrained-frozen", "pretrained-finetune"])
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_selector_train)

    dec = sub.add_parser("decoder", help="decoder commands").add_subparsers(dest="action", parser_class=_Parser)
    p = dec.add_parser("train", help="train the layer-dropout decoder")
    _common(p, "--tokens", "--targets", "--codebooks", "--subset", "--embed-dim", "--hidden", "--head-hidden", "--lr")
    p.add_argument("--decoder-mode", choices=["scalable", "fixed"])
    p.add_argument("--embed-mode", choices=["random", "pretrained-frozen", "pretrained-finetune"])
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_decoder_train)

    p = sub.add_parser("eval", help="evaluate a decoder per subset or a selector's accuracy")
    _common(p, "--tokens", "--targets", "--labels", "--decoder", "--selector", "--subset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the cluster-count x embedding-init grid")
    _common(p, "--k", "--embed-modes", "--task", "--sequences", "--frames", "--label-rule", "--domain")
    p.add_argument("--jobs", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="reports").add_subparsers(dest="action", parser_class=_Parser)
    p = rep.add_parser("attention", help="per-layer mean attention of a trained selector")
    _common(p, "--tokens", "--selector")
    p.set_defaults(func=cmd_report_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"semtok: usage error: {exc}\n")
        return EXIT_USAGE
    except FormatError as exc:
        sys.stderr.write(f"semtok: {exc}\n")
        return EXIT_DATA
    except (DataError, LayerMismatchError, FileNotFoundError, ValueError, IndexError) as exc:
        sys.stderr.write(f"semtok: data error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
