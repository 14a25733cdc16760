import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semtok.quantizer import Codebook, KMeansConfig, assign_batch, train_codebook
from semtok.tokenizer import (
    DEFAULT_LAYER_IDS,
    FeatureSequence,
    LayerMismatchError,
    TokenSequence,
    codebooks_for,
    detokenize_centroids,
    features_from_bytes,
    features_to_bytes,
    tokenize,
    tokens_from_bytes,
    tokens_to_bytes,
)

from conftest import linear_scan


def _books(rng, layer_ids, K=16, D=4):
    return [Codebook(lid, rng.normal(size=(K, D))) for lid in layer_ids]


def test_identity_frame(rng):
    books = _books(rng, (3, 7), K=5, D=2)
    frame = np.stack([books[0].centroids[4], books[1].centroids[1]])[None]
    toks = tokenize(FeatureSequence(frame, (3, 7)), books)
    assert toks.indices.tolist() == [[4, 1]]


def test_default_layer_order_preserved(rng):
    books = _books(rng, DEFAULT_LAYER_IDS, K=4, D=3)
    seq = FeatureSequence(rng.normal(size=(6, 5, 3)), DEFAULT_LAYER_IDS)
    toks = tokenize(seq, books)
    assert toks.layer_ids == (3, 7, 12, 18, 23)
    for pos in range(5):
        assert np.array_equal(toks.indices[:, pos], assign_batch(books[pos], seq.values[:, pos])[0])


def test_tokenize_matches_linear_scan(rng):
    books = _books(rng, (0, 1, 2), K=16, D=4)
    seq = FeatureSequence(rng.normal(size=(20, 3, 4)), (0, 1, 2))
    toks = tokenize(seq, books)
    for t in range(20):
        for l in range(3):
            assert toks.indices[t, l] == linear_scan(books[l].centroids, seq.values[t, l])[0]


def test_layer_mismatch_errors(rng):
    books = _books(rng, (3, 7))
    seq = FeatureSequence(rng.normal(size=(2, 2, 4)), (3, 8))
    with pytest.raises(LayerMismatchError):
        tokenize(seq, books)
    with pytest.raises(LayerMismatchError):
        tokenize(FeatureSequence(rng.normal(size=(2, 1, 4)), (3,)), books)
    with pytest.raises(ValueError, match="dimension"):
        tokenize(FeatureSequence(rng.normal(size=(2, 2, 5)), (3, 7)), books)
    with pytest.raises(LayerMismatchError, match="no codebook"):
        codebooks_for((3, 9), books)


def test_detokenize_examples(rng):
    cb = Codebook(0, [[0.0, 0.0], [1.0, 1.0]])
    out = detokenize_centroids(TokenSequence([[1]], (0,), (2,)), [cb], frame_rate_hz=25.0)
    assert out.values.tolist() == [[[1.0, 1.0]]]
    assert out.frame_rate_hz == 25.0
    with pytest.raises(IndexError, match=r"t=0, l=0"):
        detokenize_centroids(TokenSequence([[3]], (0,), (5,)), [cb])


def test_roundtrip_exact_on_centroids(rng):
    books = _books(rng, (1, 2), K=6, D=3)
    idx = rng.integers(0, 6, size=(9, 2))
    seq = detokenize_centroids(TokenSequence(idx, (1, 2), (6, 6)), books)
    back = detokenize_centroids(tokenize(seq, books), books)
    assert back.values.tobytes() == seq.values.tobytes()


def test_reconstruction_error_bounded_by_cluster_radius(rng):
    X = rng.normal(size=(500, 3))
    cb = train_codebook(X, KMeansConfig(K=10, seed=0), layer_id=0)
    labels, dists = assign_batch(cb, X)
    radius = max(np.sqrt(dists[labels == k].max()) for k in range(cb.K) if np.any(labels == k))
    seq = FeatureSequence(X[:, None, :], (0,))
    recon = detokenize_centroids(tokenize(seq, [cb]), [cb])
    err = np.sqrt(((recon.values - seq.values) ** 2).sum(-1))
    assert err.max() <= radius + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), T1=st.integers(1, 10), T2=st.integers(1, 10))
def test_idempotence_and_framewise_independence(seed, T1, T2):
    r = np.random.default_rng(seed)
    books = _books(r, (0, 1), K=5, D=2)
    a = FeatureSequence(r.normal(size=(T1, 2, 2)), (0, 1))
    b = FeatureSequence(r.normal(size=(T2, 2, 2)), (0, 1))
    ta = tokenize(a, books)
    again = tokenize(detokenize_centroids(ta, books), books)
    assert np.array_equal(again.indices, ta.indices)
    joined = tokenize(FeatureSequence(np.concatenate([a.values, b.values]), (0, 1)), books)
    assert np.array_equal(joined.indices, np.concatenate([ta.indices, tokenize(b, books).indices]))


def test_token_bounds_validated():
    with pytest.raises(IndexError):
        TokenSequence([[3]], (0,), (3,))


def test_feature_and_token_roundtrip(rng):
    seq = FeatureSequence(rng.normal(size=(7, 3, 5)).astype(np.float32), (3, 12, 23), 49.5)
    raw = features_to_bytes(seq)
    back = features_from_bytes(raw)
    assert back.values.tobytes() == seq.values.tobytes()
    assert back.layer_ids == seq.layer_ids and back.frame_rate_hz == 49.5
    assert features_to_bytes(back) == raw
    toks = TokenSequence(rng.integers(0, 1000, size=(7, 3)), (3, 12, 23), (1000, 1000, 2000))
    raw = tokens_to_bytes(toks)
    back = tokens_from_bytes(raw)
    assert np.array_equal(back.indices, toks.indices)
    assert back.K_per_layer == toks.K_per_layer
    assert tokens_to_bytes(back) == raw
    with pytest.raises(ValueError, match="magic"):
        tokens_from_bytes(b"MLF1" + raw[4:])
