"""Exception types and small input-validation helpers shared by the package."""

import numpy as np


class CalaError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CalaError, ValueError):
    """Input or configuration does not satisfy a documented contract."""


class FormatError(ValidationError):
    """A persisted file is malformed or carries an unexpected magic header."""


class DivergenceError(CalaError, ArithmeticError):
    """Training produced a non-finite loss."""


def check_matrix(X, name="X", dim=None, allow_empty=False):
    """Return ``X`` as a 2-D float64 array, checking finiteness and width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {X.shape}")
    if not allow_empty and X.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    if dim is not None and X.shape[1] != dim:
        raise ValidationError(f"{name} has {X.shape[1]} features, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return X


def check_vector(x, name="x", dim=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValidationError(f"{name} has length {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return x


def check_labels(y, n_samples=None, name="y"):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"{name} must be 1-D")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError(f"{name} must hold integer class ids")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValidationError(f"{name} contains negative class ids")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValidationError(f"{name} has {y.shape[0]} entries, expected {n_samples}")
    return y


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
