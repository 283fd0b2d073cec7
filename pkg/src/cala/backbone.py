"""Frozen feature maps standing in for a pre-trained backbone.

Both maps are scikit-learn transformers whose ``fit`` only validates input:
their parameters are created once, from the constructor arguments, and the
arrays are marked read-only.
"""

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _binio
from ._validation import ValidationError, check_matrix, check_positive_int

FEATURE_MAP_MAGIC = b"CALAFM01"
_IDENTITY, _RANDOM_MLP = 0, 1


class IdentityMap(TransformerMixin, BaseEstimator):
    """Pass precomputed embeddings through unchanged."""

    def __init__(self, dim=None):
        self.dim = dim

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def fit(self, X=None, y=None):
        if X is not None:
            self.transform(X)
        return self

    def transform(self, X):
        return check_matrix(X, dim=self.dim, allow_empty=True)

    def embed(self, x):
        return self.transform(np.asarray(x)[None, :])[0]

    def parameter_digest(self) -> str:
        return hashlib.sha256(b"identity" + str(self.dim).encode()).hexdigest()

    def __sklearn_is_fitted__(self):
        return True


class FrozenRandomMLP(TransformerMixin, BaseEstimator):
    """Two tanh layers ``in_dim -> hidden -> out_dim`` with seeded Xavier-uniform weights.

    Weights are drawn in ``__init__`` so two instances built with the same
    arguments (including clones) compute the same function.
    """

    def __init__(self, in_dim, out_dim, hidden=64, seed=0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.seed = seed
        check_positive_int(in_dim, "in_dim")
        check_positive_int(out_dim, "out_dim")
        check_positive_int(hidden, "hidden")
        rng = np.random.default_rng(seed)
        self._params = {}
        for name, fan_in, fan_out in (("W1", in_dim, hidden), ("W2", hidden, out_dim)):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self._params[name] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        self._params["b1"] = np.zeros(hidden)
        self._params["b2"] = np.zeros(out_dim)
        for arr in self._params.values():
            arr.setflags(write=False)

    @property
    def params(self):
        return dict(self._params)

    def fit(self, X=None, y=None):
        if X is not None:
            self.transform(X)
        return self

    def transform(self, X):
        X = check_matrix(X, dim=self.in_dim, allow_empty=True)
        p = self._params
        h = np.tanh(X @ p["W1"].T + p["b1"])
        return np.tanh(h @ p["W2"].T + p["b2"])

    def embed(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValidationError(f"input has shape {x.shape}, expected ({self.in_dim},)")
        return self.transform(x[None, :])[0]

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for name in ("W1", "b1", "W2", "b2"):
            h.update(self._params[name].tobytes())
        return h.hexdigest()

    def __sklearn_is_fitted__(self):
        return True


def make_feature_map(variant="identity", in_dim=None, out_dim=None, hidden=64, seed=0):
    if variant == "identity":
        return IdentityMap(dim=in_dim)
    if variant == "frozen_random_mlp":
        return FrozenRandomMLP(in_dim, out_dim if out_dim is not None else in_dim, hidden, seed)
    raise ValidationError(f"unknown backbone variant {variant!r}")


def feature_map_to_bytes(fmap) -> bytes:
    """Layout: magic, u32 variant, u32 in_dim, u32 hidden, u32 out_dim, u32 seed, f64 W1 b1 W2 b2."""
    if isinstance(fmap, IdentityMap):
        dim = fmap.dim or 0
        return FEATURE_MAP_MAGIC + _binio.u32(_IDENTITY, dim, 0, dim, 0)
    p = fmap.params
    head = _binio.u32(_RANDOM_MLP, fmap.in_dim, fmap.hidden, fmap.out_dim, fmap.seed)
    body = b"".join(_binio.f64(p[k]) for k in ("W1", "b1", "W2", "b2"))
    return FEATURE_MAP_MAGIC + head + body


def feature_map_from_bytes(data: bytes):
    r = _binio.Reader(data, "feature-map file")
    r.magic(FEATURE_MAP_MAGIC)
    variant, in_dim, hidden, out_dim, seed = r.u32(5)
    if variant == _IDENTITY:
        r.done()
        return IdentityMap(dim=in_dim or None)
    if variant != _RANDOM_MLP:
        raise ValidationError(f"unknown feature-map variant code {variant}")
    fmap = FrozenRandomMLP(in_dim, out_dim, hidden, seed)
    stored = {
        "W1": r.f64(hidden * in_dim).reshape(hidden, in_dim),
        "b1": r.f64(hidden),
        "W2": r.f64(out_dim * hidden).reshape(out_dim, hidden),
        "b2": r.f64(out_dim),
    }
    r.done()
    for name, arr in stored.items():
        if not np.array_equal(arr, fmap.params[name]):
            raise ValidationError(f"stored {name} does not match the weights regenerated from seed {seed}")
    return fmap


def save_feature_map(fmap, path) -> None:
    _binio.atomic_write_bytes(path, feature_map_to_bytes(fmap))


def load_feature_map(path):
    with open(path, "rb") as fh:
        return feature_map_from_bytes(fh.read())
