import numpy as np
import pytest
from sklearn.base import clone

from cala._validation import FormatError, ValidationError
from cala.backbone import (FrozenRandomMLP, IdentityMap, feature_map_from_bytes, feature_map_to_bytes,
                           load_feature_map, make_feature_map, save_feature_map)


def test_identity_returns_input():
    np.testing.assert_array_equal(IdentityMap().embed([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_identity_dim_mismatch():
    with pytest.raises(ValidationError):
        IdentityMap(dim=2).embed([1.0, 2.0, 3.0])


def test_random_mlp_is_deterministic():
    x = np.linspace(-1, 1, 5)
    a = FrozenRandomMLP(5, 4, hidden=7, seed=3)
    np.testing.assert_array_equal(a.embed(x), a.embed(x))
    np.testing.assert_array_equal(a.embed(x), FrozenRandomMLP(5, 4, hidden=7, seed=3).embed(x))
    np.testing.assert_array_equal(a.embed(x), clone(a).embed(x))


def test_random_mlp_matches_reference_forward_from_persisted_weights(tmp_path):
    fmap = FrozenRandomMLP(6, 3, hidden=5, seed=8)
    path = tmp_path / "fm.bin"
    save_feature_map(fmap, path)
    blob = path.read_bytes()
    assert blob[:8] == b"CALAFM01"
    header = np.frombuffer(blob[8:28], "<u4")
    np.testing.assert_array_equal(header, [1, 6, 5, 3, 8])
    w = np.frombuffer(blob[28:], "<f8")
    W1, w = w[:30].reshape(5, 6), w[30:]
    b1, w = w[:5], w[5:]
    W2, b2 = w[:15].reshape(3, 5), w[15:]
    x = np.random.default_rng(0).standard_normal(6)
    expected = np.tanh(W2 @ np.tanh(W1 @ x + b1) + b2)
    np.testing.assert_allclose(fmap.embed(x), expected, atol=1e-12)
    np.testing.assert_array_equal(load_feature_map(path).embed(x), fmap.embed(x))


def test_parameters_are_read_only():
    fmap = FrozenRandomMLP(3, 3, seed=0)
    with pytest.raises(ValueError):
        fmap.params["W1"][0, 0] = 1.0


def test_tampered_weights_are_rejected():
    blob = bytearray(feature_map_to_bytes(FrozenRandomMLP(2, 2, hidden=2, seed=1)))
    blob[-1] ^= 0xFF
    with pytest.raises(ValidationError, match="does not match"):
        feature_map_from_bytes(bytes(blob))


def test_bad_magic():
    with pytest.raises(FormatError, match="unrecognized feature-map file"):
        feature_map_from_bytes(b"XXXXXXXX" + b"\x00" * 20)


def test_identity_round_trip():
    assert feature_map_from_bytes(feature_map_to_bytes(IdentityMap(4))).dim == 4


def test_make_feature_map_variants():
    assert isinstance(make_feature_map("identity", 3), IdentityMap)
    assert make_feature_map("frozen_random_mlp", 3, 2).out_dim == 2
    with pytest.raises(ValidationError, match="unknown backbone"):
        make_feature_map("resnet", 3)
