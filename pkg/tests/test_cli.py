import hashlib
import json
import os

import numpy as np
import pytest

from semtok.cli import main
from semtok.decoder import load_decoder
from semtok.quantizer import load_codebook
from semtok.selector import load_selector
from semtok.synthgen import load_feature_dir
from semtok.tokenizer import load_tokens

SMALL_GEN = ["--sequences", "12", "--frames", "10", "--dim", "4", "--clusters", "3"]


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> codebooks for every layer -> tokenize, on a small dataset."""
    root = tmp_path_factory.mktemp("pipe")
    data = root / "data"
    assert main(["gen", "--seed", "7", "--out", str(data)] + SMALL_GEN) == 0
    books = []
    for lid in (3, 7, 12, 18, 23):
        out = root / f"cb{lid}.cbk"
        assert main(["codebook", "train", "--features", str(data), "--layer", str(lid), "--k", "3", "--out", str(out)]) == 0
        books.append(str(out))
    tok = root / "tok"
    assert main(["tokenize", "--features", str(data), "--codebooks", ",".join(books), "--out", str(tok)]) == 0
    return root, data, books, tok


def test_gen_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["gen", "--seed", "7", "--out", str(tmp_path / d)] + SMALL_GEN) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert "seq_00000.mlf" in names and "labels.csv" in names and "manifest.txt" in names
    for n in names:
        if n == "run_manifest.json":
            continue
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_codebook_train_thousand_centroids(tmp_path):
    data = tmp_path / "data"
    assert main(["gen", "--seed", "1", "--out", str(data), "--sequences", "40", "--frames", "50"]) == 0
    out = tmp_path / "cb12.cbk"
    rc = main([
        "codebook", "train", "--features", str(data), "--layer", "12", "--k", "1000",
        "--max-iter", "5", "--out", str(out),
    ])
    assert rc == 0
    cb = load_codebook(out)
    assert cb.K == 1000 and cb.layer_id == 12 and cb.D == 16
    man = json.loads((tmp_path / "cb12.cbk.manifest.json").read_text())
    assert man["command"] == "codebook train" and man["config"]["k"] == 1000 and man["seed"] == 0
    assert {o["path"]: o["sha256"] for o in man["outputs"]} == {str(out): _sha(out)}


def test_pipeline_outputs_readable(pipeline):
    root, data, books, tok = pipeline
    toks = [load_tokens(tok / n) for n in sorted(os.listdir(tok)) if n.endswith(".tok")]
    assert len(toks) == 12 and toks[0].layer_ids == (3, 7, 12, 18, 23)
    assert len(load_feature_dir(data)) == 12
    man = json.loads((tok / "run_manifest.json").read_text())
    for entry in man["inputs"] + man["outputs"]:
        assert entry["sha256"] == _sha(entry["path"])


def test_selector_train_eval_report(pipeline, tmp_path):
    root, data, books, tok = pipeline
    sel = tmp_path / "s.sel"
    args = ["selector", "train", "--tokens", str(tok), "--labels", str(data / "labels.csv"),
            "--epochs", "2", "--embed-dim", "8", "--hidden", "8", "--out", str(sel)]
    assert main(args) == 0
    assert load_selector(sel).layer_ids == (3, 7, 12, 18, 23)
    ev = tmp_path / "acc.csv"
    assert main(["eval", "--selector", str(sel), "--tokens", str(tok), "--labels", str(data / "labels.csv"), "--out", str(ev)]) == 0
    assert ev.read_text().startswith("metric,value\naccuracy,")
    rep = tmp_path / "att.csv"
    assert main(["report", "attention", "--selector", str(sel), "--tokens", str(tok), "--out", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0] == "layer_id,mean_weight" and [l.split(",")[0] for l in lines[1:]] == ["3", "7", "12", "18", "23"]
    assert abs(sum(float(l.split(",")[1]) for l in lines[1:]) - 1.0) < 1e-6


def test_frozen_selector_needs_codebooks(pipeline, tmp_path):
    root, data, books, tok = pipeline
    base = ["selector", "train", "--tokens", str(tok), "--labels", str(data / "labels.csv"),
            "--epochs", "1", "--embed-mode", "pretrained-frozen", "--out", str(tmp_path / "f.sel")]
    assert main(base) == 1
    assert main(base + ["--codebooks", ",".join(books)]) == 0
    m = load_selector(tmp_path / "f.sel")
    for t, path in zip(m.tables, books):
        np.testing.assert_array_equal(t.values, load_codebook(path).centroids.astype(np.float32))


def test_decoder_train_and_eval(pipeline, tmp_path):
    root, data, books, tok = pipeline
    dec = tmp_path / "d.dec"
    args = ["decoder", "train", "--tokens", str(tok), "--targets", str(data), "--epochs", "2",
            "--embed-dim", "8", "--hidden", "8", "--head-hidden", "8", "--out", str(dec)]
    assert main(args) == 0
    assert load_decoder(dec).target_dim == 4
    ev = tmp_path / "eval.csv"
    assert main(["eval", "--decoder", str(dec), "--tokens", str(tok), "--targets", str(data), "--out", str(ev)]) == 0
    lines = ev.read_text().splitlines()
    assert lines[0] == "subset,k,mse" and len(lines) == 32
    fixed = tmp_path / "f.dec"
    assert main(args[:-1] + [str(fixed), "--decoder-mode", "fixed", "--subset", "0,2"]) == 0
    assert main(["eval", "--decoder", str(fixed), "--tokens", str(tok), "--targets", str(data),
                 "--subset", "0,2", "--out", str(ev)]) == 0
    assert ev.read_text().splitlines()[1].startswith("0+2,2,")
    assert main(args[:-1] + [str(fixed), "--decoder-mode", "fixed"]) == 1


def test_config_file_precedence(pipeline, tmp_path):
    root, data, books, tok = pipeline
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nk = 2\nlayer = 7\nseed = 4\n")
    out = tmp_path / "cb.cbk"
    assert main(["codebook", "train", "--config", str(cfg), "--features", str(data), "--k", "3", "--out", str(out)]) == 0
    cb = load_codebook(out)
    assert cb.K == 3 and cb.layer_id == 7 and cb.seed == 4


def test_tokenize_layer_mismatch_exits_2(pipeline, tmp_path, capsys):
    root, data, books, tok = pipeline
    other = tmp_path / "other"
    assert main(["gen", "--seed", "7", "--out", str(other), "--layers", "1,2,4"] + SMALL_GEN) == 0
    capsys.readouterr()
    rc = main(["tokenize", "--features", str(other), "--codebooks", books[0], "--out", str(tmp_path / "t")])
    assert rc == 2
    assert "not present" in capsys.readouterr().err


def test_unknown_flag_exits_1(capsys):
    assert main(["gen", "--bogus", "1"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_missing_input_exits_2(tmp_path, capsys):
    rc = main(["codebook", "train", "--features", str(tmp_path / "nope"), "--layer", "3", "--k", "2", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "nope" in capsys.readouterr().err


def test_corrupt_magic_exits_2_naming_file(pipeline, tmp_path, capsys):
    root, data, books, tok = pipeline
    bad = tmp_path / "bad.cbk"
    raw = bytearray(open(books[0], "rb").read())
    raw[:4] = b"JUNK"
    bad.write_bytes(bytes(raw))
    rc = main(["tokenize", "--features", str(data), "--codebooks", str(bad), "--out", str(tmp_path / "t")])
    err = capsys.readouterr().err
    assert rc == 2
    assert str(bad) in err and "CBK1" in err


def test_sweep_cli_empty_and_small(tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["sweep", "--k", "3", "--embed-modes", "random", "--sequences", "10", "--frames", "10",
               "--epochs", "1", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("fingerprint,task,K") and len(lines) == 2
    assert os.path.exists(str(out) + ".manifest.json")
