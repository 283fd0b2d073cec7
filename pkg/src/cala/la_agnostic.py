"""Class-agnostic logit adjustment: one scalar added to every novel logit."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import DivergenceError, ValidationError, check_labels, check_matrix
from .adapter import AdapterConfig, build_episode, log_softmax
from .data import SessionSchedule
from .metrics import harmonic_mean
from .protonet import PrototypeClassifier, class_prototypes

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(np.round(np.arange(0.0, 0.505, 0.005), 3))


def apply_uniform_adjustment(z, alpha, base_count):
    """Add ``alpha`` to entries ``base_count:`` of the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] <= base_count:
        raise ValidationError(f"logit vector of length {z.shape[-1]} has no novel entries after {base_count}")
    out = z.copy()
    out[..., base_count:] += alpha
    return out


def agnostic_loss(Z, labels, alpha, base_count):
    """Mean cross-entropy of ``Z + [0, alpha]`` and its derivative in ``alpha``.

    The derivative is the mean over instances of (softmax mass on novel
    classes) - 1{true class is novel}.
    """
    Zh = apply_uniform_adjustment(Z, alpha, base_count)
    logp = log_softmax(Zh)
    n = Z.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    novel_mass = np.exp(logp[:, base_count:]).sum(axis=1)
    grad = np.mean(novel_mass - (labels >= base_count))
    return float(loss), float(grad)


@dataclass
class AgnosticFactor:
    alpha: float
    trace: list = field(default_factory=list)
    # (alpha, pseudo-test metrics) for every grid value, in grid mode
    grid: list = field(default_factory=list)
    mode: str = "gd"

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValidationError("alpha must be finite")


def _score(ep, alpha, B):
    pred = np.argmax(apply_uniform_adjustment(ep.Z, alpha, B), axis=1)
    base = ep.labels < B
    acc_base = float(np.mean(pred[base] == ep.labels[base]))
    acc_novel = float(np.mean(pred[~base] == ep.labels[~base]))
    return {"acc": float(np.mean(pred == ep.labels)), "acc_base": acc_base, "acc_novel": acc_novel,
            "hm": harmonic_mean(acc_base, acc_novel), "fpr": float(np.mean(pred[~base] < B))}


def train_alpha(X_base, y_base, schedule: SessionSchedule, feature_map=None, config=None, seed=0,
                mode="gd", grid=DEFAULT_GRID, base_prototypes=None, pseudo_seed=None) -> AgnosticFactor:
    """Fit the scalar ``alpha`` on pseudo-incremental runs drawn from base data.

    ``mode="gd"`` runs plain gradient descent from ``alpha = 0`` on the mean
    class-agnostic cross-entropy over fake-novel and base instances.
    ``mode="grid"`` instead picks the grid value with the best harmonic mean
    of base and fake-novel accuracy on a held-out pseudo-run. Pseudo-runs
    are seeded by ``pseudo_seed`` (default ``seed``); ``seed`` drives shuffling.
    """
    cfg = (config or AdapterConfig()).validate()
    if mode not in ("gd", "grid"):
        raise ValidationError(f"unknown alpha training mode {mode!r}")
    X_base = check_matrix(X_base, "X_base")
    y_base = check_labels(y_base, X_base.shape[0], "y_base")
    B = schedule.base_classes
    F_base = feature_map.transform(X_base) if feature_map is not None else X_base
    W0 = base_prototypes if base_prototypes is not None else PrototypeClassifier(
        class_prototypes(F_base, y_base, range(B)), B)

    _, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    test_ss, episode_ss = np.random.SeedSequence(seed if pseudo_seed is None else pseudo_seed).spawn(2)
    if mode == "grid":
        ep = build_episode(X_base, F_base, y_base, W0, schedule, feature_map, cfg,
                           np.random.default_rng(test_ss), "test")
        scored = [(float(a), _score(ep, float(a), B)) for a in grid]
        best_alpha, _ = max(scored, key=lambda item: item[1]["hm"])
        return AgnosticFactor(best_alpha, grid=scored, mode="grid")

    alpha, trace = 0.0, []
    episode_seeds = episode_ss.spawn(cfg.epochs)
    shuffle_seeds = shuffle_ss.spawn(cfg.epochs)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        pairs = zip(episode_seeds[epoch - 1].spawn(cfg.episodes_per_epoch),
                    shuffle_seeds[epoch - 1].spawn(cfg.episodes_per_epoch))
        for e_idx, (ep_ss, sh_ss) in enumerate(pairs):
            ep = build_episode(X_base, F_base, y_base, W0, schedule, feature_map, cfg,
                               np.random.default_rng(ep_ss), "train")
            order = np.random.default_rng(sh_ss).permutation(ep.labels.size)
            for b_idx, start in enumerate(range(0, order.size, cfg.batch_size)):
                sel = order[start:start + cfg.batch_size]
                loss, grad = agnostic_loss(ep.Z[sel], ep.labels[sel], alpha, B)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, episode {e_idx}, batch {b_idx}")
                alpha -= cfg.lr * grad
                losses.append(loss)
        trace.append((epoch, float(np.mean(losses))))
        log.info("epoch %d alpha %.5f loss %.5f", epoch, alpha, trace[-1][1])
    return AgnosticFactor(alpha, trace, mode="gd")


class AgnosticLogitAdjuster(BaseEstimator):
    """Scikit-learn style wrapper around :func:`train_alpha`.

    ``alpha`` given explicitly skips training: ``fit`` then only records it.
    """

    def __init__(self, ways=5, shots=5, pseudo_sessions=1, mode="gd", alpha=None, lr=0.001, epochs=20,
                 batch_size=128, test_per_class=15, query_per_class=15, episodes_per_epoch=25, base_per_class=None,
                 logit_mode="dot", logit_scale=1.0, feature_map=None, random_state=0, pseudo_random_state=None):
        self.ways = ways
        self.shots = shots
        self.pseudo_sessions = pseudo_sessions
        self.mode = mode
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.test_per_class = test_per_class
        self.query_per_class = query_per_class
        self.episodes_per_epoch = episodes_per_epoch
        self.base_per_class = base_per_class
        self.logit_mode = logit_mode
        self.logit_scale = logit_scale
        self.feature_map = feature_map
        self.random_state = random_state
        self.pseudo_random_state = pseudo_random_state

    def fit(self, X=None, y=None, base_prototypes=None):
        if self.alpha is not None:
            self.factor_ = AgnosticFactor(float(self.alpha), mode="fixed")
        else:
            X = check_matrix(X)
            y = check_labels(y, X.shape[0])
            n_base = int(y.max()) + 1
            schedule = SessionSchedule(n_base, self.pseudo_sessions, self.ways, self.shots, self.pseudo_sessions)
            cfg = AdapterConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                                test_per_class=self.test_per_class, query_per_class=self.query_per_class,
                                episodes_per_epoch=self.episodes_per_epoch,
                                base_per_class=self.base_per_class, logit_mode=self.logit_mode,
                                logit_scale=self.logit_scale)
            self.factor_ = train_alpha(X, y, schedule, self.feature_map, cfg, self.random_state, self.mode,
                                       base_prototypes=base_prototypes, pseudo_seed=self.pseudo_random_state)
        self.alpha_ = self.factor_.alpha
        return self

    def novel_offsets(self, bank, classes):
        check_is_fitted(self, "alpha_")
        return np.full(len(classes), self.alpha_)
