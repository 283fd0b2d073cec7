"""Class prototypes, the append-only prototype classifier and raw logits."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _binio
from ._validation import FormatError, ValidationError, check_labels, check_matrix

PROTOTYPE_MAGIC = b"CALAPRT1"
LOGIT_MODES = ("dot", "cosine")


def compute_prototype(features) -> np.ndarray:
    """Mean feature vector of one class."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValidationError("cannot form prototype of empty class")
    return F.mean(axis=0)


def class_prototypes(F, y, classes) -> np.ndarray:
    """Stack the prototype of every class in ``classes`` (in that order)."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y)
    out = []
    for c in classes:
        sel = y == c
        if not sel.any():
            raise ValidationError(f"cannot form prototype of empty class {c}")
        out.append(compute_prototype(F[sel]))
    return np.vstack(out) if out else np.empty((0, F.shape[1]))


@dataclass(frozen=True, eq=False)
class PrototypeClassifier:
    """Prototype bank; row ``j`` is the weight vector of class ``j``.

    The first ``base_count`` rows belong to base classes. Instances are
    immutable: :func:`extend_classifier` returns a new bank.
    """

    prototypes: np.ndarray
    base_count: int

    def __post_init__(self):
        P = np.array(self.prototypes, dtype=np.float64)
        if P.ndim != 2:
            raise ValidationError("prototype bank must be 2-D (n_classes, dim)")
        if not np.all(np.isfinite(P)):
            raise ValidationError("prototypes must be finite")
        if not 0 <= self.base_count <= P.shape[0]:
            raise ValidationError(f"base_count {self.base_count} outside 0..{P.shape[0]}")
        P.setflags(write=False)
        object.__setattr__(self, "prototypes", P)

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_novel(self) -> int:
        return self.n_classes - self.base_count

    @property
    def class_ids(self) -> np.ndarray:
        return np.arange(self.n_classes)

    @property
    def base_prototypes(self) -> np.ndarray:
        return self.prototypes[: self.base_count]

    def __eq__(self, other):
        if not isinstance(other, PrototypeClassifier):
            return NotImplemented
        return (self.base_count == other.base_count
                and self.prototypes.shape == other.prototypes.shape
                and np.array_equal(self.prototypes, other.prototypes))


def extend_classifier(W: PrototypeClassifier, new_protos) -> PrototypeClassifier:
    """Append prototypes as new columns; existing columns are copied untouched."""
    new = np.asarray(new_protos, dtype=np.float64)
    if new.size == 0:
        return W
    if new.ndim == 1:
        new = new[None, :]
    if new.shape[1] != W.dim:
        raise ValidationError(f"new prototypes have dim {new.shape[1]}, classifier has {W.dim}")
    return PrototypeClassifier(np.vstack([W.prototypes, new]), W.base_count)


def _l2_normalize(A):
    norms = np.linalg.norm(A, axis=-1, keepdims=True)
    return np.divide(A, norms, out=np.zeros_like(A), where=norms > 0)


def logits(features, W: PrototypeClassifier, mode="dot", scale=1.0) -> np.ndarray:
    """Raw class scores; a single vector in gives a single vector out.

    ``dot`` is the plain inner product with every prototype. ``cosine``
    L2-normalises both sides first (zero vectors score 0 against everything).
    Scores are multiplied by ``scale`` (an inverse temperature).
    """
    F = np.asarray(features, dtype=np.float64)
    single = F.ndim == 1
    F = np.atleast_2d(F)
    if F.shape[1] != W.dim:
        raise ValidationError(f"features have dim {F.shape[1]}, classifier has {W.dim}")
    if mode == "dot":
        Z = F @ W.prototypes.T
    elif mode == "cosine":
        Z = _l2_normalize(F) @ _l2_normalize(W.prototypes).T
    else:
        raise ValidationError(f"unknown logit mode {mode!r}; choose from {LOGIT_MODES}")
    if scale != 1.0:
        Z = scale * Z
    return Z[0] if single else Z


def prototypes_to_bytes(W: PrototypeClassifier) -> bytes:
    parts = [PROTOTYPE_MAGIC, _binio.u32(W.dim, W.n_classes)]
    for cid, proto in zip(W.class_ids, W.prototypes):
        parts.append(_binio.u32(int(cid)))
        parts.append(_binio.f32(proto))
    return b"".join(parts)


def prototypes_from_bytes(data: bytes, base_count=None) -> PrototypeClassifier:
    """Parse a prototype bank; ``base_count`` defaults to every stored column."""
    r = _binio.Reader(data, "prototype file")
    r.magic(PROTOTYPE_MAGIC)
    dim, cols = r.u32(2)
    P = np.empty((cols, dim))
    for j in range(cols):
        cid = r.u32()
        if cid != j:
            raise FormatError(f"prototype column {j} carries class id {cid}; ids must be contiguous from 0")
        P[j] = r.f32(dim)
    r.done()
    return PrototypeClassifier(P, cols if base_count is None else base_count)


def save_prototypes(W: PrototypeClassifier, path) -> None:
    _binio.atomic_write_bytes(path, prototypes_to_bytes(W))


def load_prototypes(path, base_count=None) -> PrototypeClassifier:
    with open(path, "rb") as fh:
        return prototypes_from_bytes(fh.read(), base_count)


class IncrementalPrototypeClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-prototype classifier that grows one few-shot session at a time.

    ``fit`` builds the base bank from base-session data; each ``partial_fit``
    appends the prototypes of a new session's classes. An optional
    ``corrector`` supplies additive offsets for novel columns (see
    :class:`cala.adapter.ClassAwareLogitAdapter` and
    :class:`cala.la_agnostic.AgnosticLogitAdjuster`); offsets for a session are
    computed once, when the session arrives, and then kept.

    Parameters
    ----------
    logit_mode : {"dot", "cosine"}
    logit_scale : float, multiplies raw logits before offsets are added
    corrector : object with ``novel_offsets(bank, new_classes)`` or None
    feature_map : transformer applied to raw inputs, or None for identity
    """

    def __init__(self, logit_mode="dot", corrector=None, feature_map=None, logit_scale=1.0):
        self.logit_mode = logit_mode
        self.logit_scale = logit_scale
        self.corrector = corrector
        self.feature_map = feature_map

    def _features(self, X):
        X = check_matrix(X)
        if self.feature_map is None:
            return X
        return self.feature_map.transform(X)

    def _check_new_classes(self, y, start):
        classes = np.unique(y)
        if not np.array_equal(classes, np.arange(start, start + classes.size)):
            raise ValidationError(f"new classes must continue the id range from {start}, got {classes.tolist()}")
        return classes

    def fit(self, X, y):
        if self.logit_mode not in LOGIT_MODES:
            raise ValidationError(f"unknown logit mode {self.logit_mode!r}")
        F = self._features(X)
        y = check_labels(y, F.shape[0])
        classes = self._check_new_classes(y, 0)
        self.bank_ = PrototypeClassifier(class_prototypes(F, y, classes), classes.size)
        self.offsets_ = np.zeros(0)
        self.classes_ = classes
        self.n_features_in_ = F.shape[1]
        return self

    def partial_fit(self, X, y):
        """Append the classes in ``(X, y)`` as a new incremental session."""
        if not hasattr(self, "bank_"):
            return self.fit(X, y)
        F = self._features(X)
        y = check_labels(y, F.shape[0])
        classes = self._check_new_classes(y, self.bank_.n_classes)
        bank = extend_classifier(self.bank_, class_prototypes(F, y, classes))
        if self.corrector is None:
            new_offsets = np.zeros(classes.size)
        else:
            new_offsets = np.asarray(self.corrector.novel_offsets(bank, classes), dtype=np.float64)
        self.bank_ = bank
        self.offsets_ = np.concatenate([self.offsets_, new_offsets])
        self.classes_ = np.arange(bank.n_classes)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "bank_")
        Z = logits(self._features(X), self.bank_, self.logit_mode, self.logit_scale)
        if self.offsets_.size:
            Z = Z.copy()
            Z[:, self.bank_.base_count:] += self.offsets_
        return Z

    def predict(self, X):
        # argmax returns the first maximum, i.e. the lowest class id on ties
        return np.argmax(self.decision_function(X), axis=1)
