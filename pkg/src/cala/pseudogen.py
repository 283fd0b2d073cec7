"""Fake novel classes built by mixing pairs of base classes.

A pseudo-run is ``pseudo_sessions`` sessions of ``ways`` fake classes each.
Every fake class comes from its own unordered pair of base classes, and no
pair is reused anywhere in the run.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from ._validation import ValidationError

LAMBDA_LOW, LAMBDA_HIGH = 0.4, 0.6


def mixup_instance(x_i, x_j, lam):
    """Convex combination ``lam * x_i + (1 - lam) * x_j`` in input space."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValidationError(f"cannot mix inputs of shapes {x_i.shape} and {x_j.shape}")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValidationError("mixing weight must lie in [0, 1]")
    if lam.ndim == 1 and x_i.ndim == 2:
        lam = lam[:, None]
    return lam * x_i + (1.0 - lam) * x_j


def sample_class_pairs(base_class_ids, count, seed=None):
    """Draw ``count`` distinct unordered pairs ``(i, j)``, ``i < j``, uniformly.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    ids = np.asarray(sorted(base_class_ids))
    n_pairs = comb(ids.size, 2)
    if count > n_pairs:
        raise ValidationError(f"requested {count} class pairs but only {n_pairs} exist among {ids.size} classes")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n_pairs, size=count, replace=False)
    rows, cols = np.triu_indices(ids.size, k=1)
    return [(int(ids[rows[k]]), int(ids[cols[k]])) for k in chosen]


def fake_label(base_classes, ways, shots, session, k):
    """Label of the ``k``-th (1-based) instance of pseudo-session ``session``."""
    return base_classes + ways * (session - 1) + (k - 1) // shots


@dataclass(frozen=True, eq=False)
class PseudoSession:
    index: int
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    pairs: list
    lambdas_train: np.ndarray
    lambdas_test: np.ndarray
    # True if some source class was too small for disjoint train/test draws
    resampled: bool = False

    @property
    def classes(self):
        return np.unique(self.y_train)


def _draw_sources(idx, n_train, n_test, rng):
    if idx.size >= n_train + n_test:
        pick = rng.choice(idx, size=n_train + n_test, replace=False)
        return pick[:n_train], pick[n_train:], False
    return rng.choice(idx, size=n_train, replace=True), rng.choice(idx, size=n_test, replace=True), True


def build_pseudo_session(X, y, session, schedule, seed=None, test_per_class=15, pairs=None):
    """Mix ``schedule.ways`` base-class pairs into one pseudo-session.

    Parameters
    ----------
    X, y : base-session inputs and labels (labels ``< schedule.base_classes``)
    session : 1-based pseudo-session index
    pairs : the session's class pairs; sampled from ``seed`` when omitted
    """
    if session < 1:
        raise ValidationError("pseudo-session indices start at 1")
    rng = np.random.default_rng(seed)
    B, N, K = schedule.base_classes, schedule.ways, schedule.shots
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if pairs is None:
        pairs = sample_class_pairs(range(B), N, rng)
    if len(pairs) != N:
        raise ValidationError(f"pseudo-session needs {N} class pairs, got {len(pairs)}")

    train_parts, test_parts, lam_tr, lam_te = [], [], [], []
    resampled = False
    for a, b in pairs:
        idx_a, idx_b = np.flatnonzero(y == a), np.flatnonzero(y == b)
        if idx_a.size == 0 or idx_b.size == 0:
            raise ValidationError(f"base class pair ({a}, {b}) has an empty class")
        tr_a, te_a, ra = _draw_sources(idx_a, K, test_per_class, rng)
        tr_b, te_b, rb = _draw_sources(idx_b, K, test_per_class, rng)
        resampled |= ra or rb
        lt = rng.uniform(LAMBDA_LOW, LAMBDA_HIGH, size=K)
        le = rng.uniform(LAMBDA_LOW, LAMBDA_HIGH, size=test_per_class)
        train_parts.append(mixup_instance(X[tr_a], X[tr_b], lt))
        test_parts.append(mixup_instance(X[te_a], X[te_b], le))
        lam_tr.append(lt)
        lam_te.append(le)

    y_train = np.array([fake_label(B, N, K, session, k) for k in range(1, N * K + 1)])
    first = fake_label(B, N, K, session, 1)
    y_test = np.repeat(np.arange(first, first + N), test_per_class)
    dim = X.shape[1]
    return PseudoSession(
        index=session,
        X_train=np.vstack(train_parts) if train_parts else np.empty((0, dim)),
        y_train=y_train,
        X_test=np.vstack(test_parts) if test_parts else np.empty((0, dim)),
        y_test=y_test,
        pairs=list(pairs),
        lambdas_train=np.concatenate(lam_tr),
        lambdas_test=np.concatenate(lam_te),
        resampled=resampled,
    )


def build_pseudo_run(X, y, schedule, seed=None, test_per_class=15):
    """All ``schedule.pseudo_sessions`` pseudo-sessions of one run, with run-wide distinct pairs."""
    rng = np.random.default_rng(seed)
    N, T = schedule.ways, schedule.pseudo_sessions
    pairs = sample_class_pairs(range(schedule.base_classes), N * T, rng)
    return [
        build_pseudo_session(X, y, t, schedule, rng, test_per_class, pairs[(t - 1) * N: t * N])
        for t in range(1, T + 1)
    ]
