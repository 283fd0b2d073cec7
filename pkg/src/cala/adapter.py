"""Class-aware logit adapter.

For each novel class the adapter looks at the cosine similarities between its
prototype and every base prototype, softmax-normalises that row and feeds it
through a small ReLU MLP (``B -> H -> H -> 1``). The scalar output ``beta_c``,
scaled by ``gamma``, is added to the class's logit. The MLP is trained on
pseudo-incremental sessions whose novel classes are mixups of base classes
(:mod:`cala.pseudogen`) and is frozen afterwards.

Gradients are derived by hand; the test suite checks them
against central finite differences.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _binio
from ._validation import DivergenceError, ValidationError, check_labels, check_matrix
from .data import SessionSchedule
from .metrics import harmonic_mean
from .protonet import PrototypeClassifier, class_prototypes, extend_classifier, logits
from .pseudogen import build_pseudo_run

log = logging.getLogger(__name__)

ADAPTER_MAGIC = b"CALAMLP1"
PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")
REG_SCALES = ("instance", "batch")


def softmax(A, axis=-1):
    A = np.asarray(A, dtype=np.float64)
    shifted = A - A.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(A, axis=-1):
    A = np.asarray(A, dtype=np.float64)
    shifted = A - A.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------

class AdapterMlp:
    """ReLU perceptron ``B -> H -> H -> 1`` with an identity output unit.

    Weight matrices are stored ``(fan_out, fan_in)``. Once :meth:`freeze` is
    called every parameter array becomes read-only.
    """

    def __init__(self, params):
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_ORDER}
        H, B = self.params["W1"].shape
        expected = {"W1": (H, B), "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (1, H), "b3": (1,)}
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise ValidationError(f"adapter parameter {k} has shape {self.params[k].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[k])):
                raise ValidationError(f"adapter parameter {k} is not finite")
        self.frozen = False

    @classmethod
    def initialize(cls, n_base, hidden=64, seed=None):
        """Hidden layers drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer zero.

        The zero output layer makes an untrained adapter produce ``beta = 0``.
        """
        rng = np.random.default_rng(seed)
        p = {}
        for w, b, fan_in, fan_out in (("W1", "b1", n_base, hidden), ("W2", "b2", hidden, hidden)):
            bound = 1.0 / np.sqrt(fan_in)
            p[w] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            p[b] = rng.uniform(-bound, bound, size=fan_out)
        p["W3"] = np.zeros((1, hidden))
        p["b3"] = np.zeros(1)
        return cls(p)

    @property
    def n_base(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def layer_sizes(self):
        return (self.n_base, self.hidden, self.hidden, 1)

    def freeze(self):
        for arr in self.params.values():
            arr.setflags(write=False)
        self.frozen = True
        return self

    def copy(self):
        return AdapterMlp({k: v.copy() for k, v in self.params.items()})

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in PARAM_ORDER:
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    def forward(self, A, return_cache=False):
        """Map softmax-normalised rows ``A`` of shape (M, B) to ``beta`` of shape (M,)."""
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[1] != self.n_base:
            raise ValidationError(f"adapter expects rows of width {self.n_base}, got {A.shape[1]}")
        p = self.params
        pre1 = A @ p["W1"].T + p["b1"]
        h1 = np.maximum(pre1, 0.0)
        pre2 = h1 @ p["W2"].T + p["b2"]
        h2 = np.maximum(pre2, 0.0)
        beta = (h2 @ p["W3"].T + p["b3"])[:, 0]
        if return_cache:
            return beta, {"A": A, "pre1": pre1, "h1": h1, "pre2": pre2, "h2": h2}
        return beta

    def backward(self, cache, dbeta):
        """Gradients of a scalar loss w.r.t. every parameter and the input rows.

        ``dbeta`` is dL/dbeta with shape (M,). Returns a dict keyed like
        :attr:`params` plus ``"A"`` for the input.
        """
        if cache is None:
            raise ValidationError("backward called without a forward cache")
        dbeta = np.asarray(dbeta, dtype=np.float64).reshape(-1, 1)
        p = self.params
        grads = {"W3": dbeta.T @ cache["h2"], "b3": dbeta.sum(axis=0)}
        d_pre2 = (dbeta @ p["W3"]) * (cache["pre2"] > 0)
        grads["W2"] = d_pre2.T @ cache["h1"]
        grads["b2"] = d_pre2.sum(axis=0)
        d_pre1 = (d_pre2 @ p["W2"]) * (cache["pre1"] > 0)
        grads["W1"] = d_pre1.T @ cache["A"]
        grads["b1"] = d_pre1.sum(axis=0)
        grads["A"] = d_pre1 @ p["W1"]
        return grads


def softmax_backward(A, dA):
    """Pull dL/dsoftmax(S) back to dL/dS, given the softmax output ``A``."""
    return A * (dA - (dA * A).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# similarity rows and balance factors
# --------------------------------------------------------------------------

def similarity_rows(novel_protos, base_protos):
    """Cosine similarity of each novel prototype (rows) to each base prototype (columns)."""
    P = np.atleast_2d(np.asarray(novel_protos, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(base_protos, dtype=np.float64))
    if P.shape[1] != Q.shape[1]:
        raise ValidationError(f"prototype dims differ: {P.shape[1]} vs {Q.shape[1]}")
    pn = np.linalg.norm(P, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    if np.any(pn == 0):
        raise ValidationError("cosine similarity undefined for a zero novel prototype")
    if np.any(qn == 0):
        raise ValidationError("cosine similarity undefined for a zero base prototype")
    S = (P / pn[:, None]) @ (Q / qn[:, None]).T
    return np.clip(S, -1.0, 1.0)


def similarity_row(novel_proto, base_protos):
    return similarity_rows(novel_proto, base_protos)[0]


def beta_for_class(mlp: AdapterMlp, row) -> float:
    return float(mlp.forward(softmax(np.asarray(row, dtype=np.float64)[None, :]))[0])


def betas(mlp: AdapterMlp, rows) -> np.ndarray:
    return mlp.forward(softmax(np.atleast_2d(rows)))


@dataclass(frozen=True, eq=False)
class BalanceFactors:
    """Per-novel-class factors in session order; entry ``m`` belongs to class ``B + m``."""

    vector: np.ndarray
    gamma: float = 10.0
    mu: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValidationError("balance factors must be finite")
        object.__setattr__(self, "vector", v)

    def __len__(self):
        return self.vector.size

    def index_of(self, class_id, base_count) -> int:
        return int(class_id) - int(base_count)


def assemble_beta(per_session, gamma=10.0, mu=1.0, ways=None) -> BalanceFactors:
    """Concatenate per-session factor lists in session order.

    All sessions must have the same length (``ways`` when given).
    """
    per_session = [np.asarray(s, dtype=np.float64).ravel() for s in per_session]
    lengths = {s.size for s in per_session}
    if len(lengths) > 1 or (ways is not None and lengths and lengths != {ways}):
        raise ValidationError(f"ragged session list: lengths {[s.size for s in per_session]}")
    vec = np.concatenate(per_session) if per_session else np.zeros(0)
    return BalanceFactors(vec, gamma, mu)


def apply_class_aware_adjustment(z, beta: BalanceFactors, base_count):
    """Return ``z`` with ``gamma * beta`` added to the novel entries (last axis)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != base_count + len(beta):
        raise ValidationError(
            f"logit length {z.shape[-1]} != base_count {base_count} + {len(beta)} balance factors"
        )
    out = z.copy()
    out[..., base_count:] += beta.gamma * beta.vector
    return out


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

@dataclass
class LossParts:
    total: float
    ce: float
    reg: float


def cala_loss(z_hat, true_label, beta_terms, mu=1.0) -> LossParts:
    """Cross-entropy of one adjusted logit vector plus ``sum(beta_c - mu * ||S_c||)``.

    ``beta_terms`` is a sequence of ``(beta_c, norm_of_similarity_row)`` pairs.
    """
    z_hat = np.asarray(z_hat, dtype=np.float64)
    ce = float(-log_softmax(z_hat)[int(true_label)])
    terms = np.asarray(beta_terms, dtype=np.float64).reshape(-1, 2)
    reg = float(np.sum(terms[:, 0] - mu * terms[:, 1]))
    return LossParts(ce + reg, ce, reg)


def batch_loss(mlp, S, Z, labels, gamma, mu, reg_scale="instance", with_grad=True):
    """Loss of one mini-batch and, optionally, its parameter gradients.

    Parameters
    ----------
    S : (M, B) similarity rows of the novel classes (pre-softmax)
    Z : (n, B + M) raw logits of the batch instances
    labels : (n,) true classes
    reg_scale : ``"instance"`` divides summed cross-entropy and the once-per-batch
        regulariser together by ``n``; ``"batch"`` adds the full regulariser to
        the mean cross-entropy.

    Returns
    -------
    parts : LossParts (``ce`` is the batch mean, ``reg`` the raw class sum)
    grads : dict or None
    beta : (M,) balance factors used
    """
    if reg_scale not in REG_SCALES:
        raise ValidationError(f"reg_scale must be one of {REG_SCALES}")
    n = Z.shape[0]
    B = S.shape[1]
    A = softmax(S)
    beta, cache = mlp.forward(A, return_cache=True)
    Zh = Z.copy()
    Zh[:, B:] += gamma * beta
    logp = log_softmax(Zh)
    ce_sum = -logp[np.arange(n), labels].sum()
    reg = float(np.sum(beta - mu * np.linalg.norm(S, axis=1)))
    reg_weight = 1.0 / n if reg_scale == "instance" else 1.0
    total = ce_sum / n + reg_weight * reg
    parts = LossParts(float(total), float(ce_sum / n), reg)
    if not with_grad:
        return parts, None, beta
    P = np.exp(logp)
    P[np.arange(n), labels] -= 1.0
    dbeta = gamma * P[:, B:].sum(axis=0) / n + reg_weight
    grads = mlp.backward(cache, dbeta)
    grads.pop("A")
    return parts, grads, beta


def backward(mlp, cache, dbeta):
    return mlp.backward(cache, dbeta)


# --------------------------------------------------------------------------
# pseudo-training
# --------------------------------------------------------------------------

@dataclass
class AdapterConfig:
    hidden: int = 64
    gamma: float = 10.0
    mu: float = 1.0
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 128
    test_per_class: int = 15
    query_per_class: int = 15
    episodes_per_epoch: int = 25
    base_per_class: int | None = None
    logit_mode: str = "dot"
    logit_scale: float = 1.0
    reg_scale: str = "instance"

    def validate(self):
        if self.hidden < 1:
            raise ValidationError("hidden must be >= 1")
        if self.gamma < 0 or self.mu < 0:
            raise ValidationError("gamma and mu must be non-negative")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        for name in ("epochs", "batch_size", "test_per_class", "query_per_class", "episodes_per_epoch"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.base_per_class is not None and self.base_per_class < 1:
            raise ValidationError("base_per_class must be >= 1")
        if self.logit_mode not in ("dot", "cosine"):
            raise ValidationError(f"unknown logit mode {self.logit_mode!r}")
        if not self.logit_scale > 0:
            raise ValidationError("logit_scale must be positive")
        if self.reg_scale not in REG_SCALES:
            raise ValidationError(f"reg_scale must be one of {REG_SCALES}")
        return self


@dataclass
class PseudoEpisode:
    """Everything the loss needs for one pseudo-run, precomputed once."""

    S: np.ndarray
    Z: np.ndarray
    labels: np.ndarray
    bank: PrototypeClassifier


@dataclass
class TrainingReport:
    config: dict
    seed: int
    pseudo_seed: int
    selected_epoch: int
    pseudo_test_hm: float
    untrained: dict
    history: list = field(default_factory=list)
    beta_drift_negative: bool = False

    def to_dict(self):
        return asdict(self)


def _sample_per_class(y, classes, count, rng):
    picked = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        picked.append(rng.choice(idx, size=count, replace=idx.size < count))
    return np.concatenate(picked)


def build_episode(X_base, F_base, y_base, W0, schedule, fmap, cfg, rng, split):
    """Build the pseudo-run for one episode.

    Fake prototypes come from each fake class's ``shots`` train mixes. The
    instances scored by the loss are held-out mixes of the same class pairs
    (``query_per_class`` for ``split="train"``, ``test_per_class`` for
    ``"test"``) plus the same number of instances per base class.
    """
    per_class = cfg.query_per_class if split == "train" else cfg.test_per_class
    run = build_pseudo_run(X_base, y_base, schedule, rng, test_per_class=per_class)
    Xq = np.vstack([s.X_test for s in run])
    yq = np.concatenate([s.y_test for s in run])
    Xp = np.vstack([s.X_train for s in run])
    yp = np.concatenate([s.y_train for s in run])
    Fq = fmap.transform(Xq) if fmap is not None else Xq
    Fp = fmap.transform(Xp) if fmap is not None else Xp
    bank = extend_classifier(W0, class_prototypes(Fp, yp, np.unique(yp)))
    S = similarity_rows(bank.prototypes[W0.base_count:], W0.prototypes)

    per_base = (cfg.base_per_class or per_class) if split == "train" else per_class
    base_idx = _sample_per_class(y_base, range(W0.base_count), per_base, rng)
    F_inst = np.vstack([Fq, F_base[base_idx]])
    labels = np.concatenate([yq, y_base[base_idx]])
    Z = logits(F_inst, bank, cfg.logit_mode, cfg.logit_scale)
    return PseudoEpisode(S, Z, labels, bank)


def _evaluate(mlp, ep: PseudoEpisode, gamma):
    B = ep.S.shape[1]
    beta = betas(mlp, ep.S)
    Zh = ep.Z.copy()
    Zh[:, B:] += gamma * beta
    pred = np.argmax(Zh, axis=1)
    base = ep.labels < B
    acc_base = float(np.mean(pred[base] == ep.labels[base]))
    acc_novel = float(np.mean(pred[~base] == ep.labels[~base]))
    return {
        "acc": float(np.mean(pred == ep.labels)),
        "acc_base": acc_base,
        "acc_novel": acc_novel,
        "hm": harmonic_mean(acc_base, acc_novel),
        "fpr": float(np.mean(pred[~base] < B)),
        "mean_beta": float(beta.mean()),
    }


def pseudo_train(X_base, y_base, schedule: SessionSchedule, feature_map=None, config=None, seed=0,
                 base_prototypes=None, pseudo_seed=None):
    """Train the adapter on pseudo-incremental sessions mixed from base data.

    Each epoch draws ``episodes_per_epoch`` fresh pseudo-runs whose seeds derive
    from ``pseudo_seed`` (default ``seed``), the epoch and the episode. ``seed``
    itself drives weight initialisation and mini-batch shuffling. For every run the fake prototypes
    extend the base bank, similarity rows and ``beta`` are computed, and SGD
    with momentum takes steps on shuffled mini-batches of fake and base
    instances. After each epoch the adapter is scored on a fixed held-out
    pseudo-run; the epoch with the best harmonic mean of base and fake-novel
    accuracy is returned, frozen.

    Returns
    -------
    mlp : AdapterMlp (frozen)
    report : TrainingReport
    """
    cfg = (config or AdapterConfig()).validate()
    X_base = check_matrix(X_base, "X_base")
    y_base = check_labels(y_base, X_base.shape[0], "y_base")
    B = schedule.base_classes
    if set(np.unique(y_base).tolist()) != set(range(B)):
        raise ValidationError(f"base data must contain exactly the classes 0..{B - 1}")
    F_base = feature_map.transform(X_base) if feature_map is not None else X_base
    W0 = base_prototypes if base_prototypes is not None else PrototypeClassifier(
        class_prototypes(F_base, y_base, range(B)), B)
    if W0.base_count != B or W0.n_classes != B:
        raise ValidationError(f"base bank has {W0.n_classes} columns, expected {B}")

    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    test_ss, episode_ss = np.random.SeedSequence(seed if pseudo_seed is None else pseudo_seed).spawn(2)
    mlp = AdapterMlp.initialize(B, cfg.hidden, np.random.default_rng(init_ss))
    test_ep = build_episode(X_base, F_base, y_base, W0, schedule, feature_map, cfg,
                       np.random.default_rng(test_ss), "test")
    untrained = _evaluate(mlp, test_ep, cfg.gamma)
    velocity = {k: np.zeros_like(v) for k, v in mlp.params.items()}

    history, best, best_hm, best_epoch = [], None, -np.inf, 0
    episode_seeds = episode_ss.spawn(cfg.epochs)
    shuffle_seeds = shuffle_ss.spawn(cfg.epochs)
    for epoch in range(1, cfg.epochs + 1):
        losses, ces, regs = [], [], []
        pairs = zip(episode_seeds[epoch - 1].spawn(cfg.episodes_per_epoch),
                    shuffle_seeds[epoch - 1].spawn(cfg.episodes_per_epoch))
        for e_idx, (ep_ss, sh_ss) in enumerate(pairs):
            ep = build_episode(X_base, F_base, y_base, W0, schedule, feature_map, cfg,
                               np.random.default_rng(ep_ss), "train")
            order = np.random.default_rng(sh_ss).permutation(ep.labels.size)
            for b_idx, start in enumerate(range(0, order.size, cfg.batch_size)):
                sel = order[start:start + cfg.batch_size]
                parts, grads, _ = batch_loss(mlp, ep.S, ep.Z[sel], ep.labels[sel],
                                             cfg.gamma, cfg.mu, cfg.reg_scale)
                if not np.isfinite(parts.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, episode {e_idx}, batch {b_idx} "
                        f"(ce={parts.ce}, reg={parts.reg})"
                    )
                for k, g in grads.items():
                    velocity[k] = cfg.momentum * velocity[k] + g
                    mlp.params[k] -= cfg.lr * velocity[k]
                losses.append(parts.total)
                ces.append(parts.ce)
                regs.append(parts.reg)
        metrics = _evaluate(mlp, test_ep, cfg.gamma)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "ce": float(np.mean(ces)),
                        "reg": float(np.mean(regs)), "pseudo_test": metrics})
        log.info("epoch %d loss %.5f pseudo-test hm %.4f fpr %.4f", epoch, history[-1]["loss"],
                 metrics["hm"], metrics["fpr"])
        if metrics["hm"] > best_hm:
            best_hm, best_epoch, best = metrics["hm"], epoch, mlp.copy()

    mean_betas = [h["pseudo_test"]["mean_beta"] for h in history]
    drift = len(mean_betas) > 1 and mean_betas[-1] < 0 and all(np.diff(mean_betas) < 0)
    if drift:
        log.warning("beta decreased monotonically to %.4g during pseudo-training", mean_betas[-1])
    report = TrainingReport(asdict(cfg), int(seed), int(seed if pseudo_seed is None else pseudo_seed), best_epoch, float(best_hm), untrained, history, bool(drift))
    return best.freeze(), report


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def adapter_to_bytes(mlp: AdapterMlp) -> bytes:
    head = ADAPTER_MAGIC + _binio.u32(*mlp.layer_sizes)
    return head + b"".join(_binio.f64(mlp.params[k]) for k in PARAM_ORDER)


def adapter_from_bytes(data: bytes) -> AdapterMlp:
    r = _binio.Reader(data, "adapter file")
    r.magic(ADAPTER_MAGIC)
    B, H, H2, out = r.u32(4)
    if H != H2 or out != 1 or B < 1 or H < 1:
        raise ValidationError(f"unsupported adapter layer sizes {(B, H, H2, out)}")
    shapes = {"W1": (H, B), "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (1, H), "b3": (1,)}
    params = {k: r.f64(int(np.prod(shapes[k]))).reshape(shapes[k]) for k in PARAM_ORDER}
    r.done()
    return AdapterMlp(params).freeze()


def save_adapter(mlp: AdapterMlp, path, sidecar=None) -> None:
    """Write the weights and, when ``sidecar`` is given, ``<path>.json`` next to them."""
    _binio.atomic_write_bytes(path, adapter_to_bytes(mlp))
    if sidecar is not None:
        _binio.atomic_write_text(f"{path}.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_adapter(path) -> AdapterMlp:
    with open(path, "rb") as fh:
        return adapter_from_bytes(fh.read())


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------

class ClassAwareLogitAdapter(BaseEstimator):
    """Scikit-learn style wrapper: ``fit`` runs pseudo-training on base data.

    After fitting, :meth:`novel_offsets` gives the ``gamma * beta`` offsets for
    the newest classes of a prototype bank, which is the hook
    :class:`cala.protonet.IncrementalPrototypeClassifier` uses.

    Parameters
    ----------
    ways, shots : shape of each pseudo-session
    pseudo_sessions : number of pseudo-sessions per run
    hidden, gamma, mu, lr, momentum, epochs, batch_size, test_per_class,
    query_per_class, episodes_per_epoch, base_per_class, logit_mode, logit_scale,
    reg_scale :
        see :class:`AdapterConfig`
    feature_map : frozen transformer applied to raw inputs before prototypes
    random_state : int, seeds weight initialisation and shuffling
    pseudo_random_state : int or None, seeds pseudo-session sampling
        (defaults to ``random_state``)
    """

    def __init__(self, ways=5, shots=5, pseudo_sessions=1, hidden=64, gamma=10.0, mu=1.0, lr=0.001,
                 momentum=0.9, epochs=20, batch_size=128, test_per_class=15, query_per_class=15,
                 episodes_per_epoch=25, base_per_class=None, logit_mode="dot", logit_scale=1.0,
                 reg_scale="instance", feature_map=None, random_state=0, pseudo_random_state=None):
        self.ways = ways
        self.shots = shots
        self.pseudo_sessions = pseudo_sessions
        self.hidden = hidden
        self.gamma = gamma
        self.mu = mu
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.test_per_class = test_per_class
        self.query_per_class = query_per_class
        self.episodes_per_epoch = episodes_per_epoch
        self.base_per_class = base_per_class
        self.logit_mode = logit_mode
        self.logit_scale = logit_scale
        self.reg_scale = reg_scale
        self.feature_map = feature_map
        self.random_state = random_state
        self.pseudo_random_state = pseudo_random_state

    def _config(self):
        return AdapterConfig(
            hidden=self.hidden, gamma=self.gamma, mu=self.mu, lr=self.lr, momentum=self.momentum,
            epochs=self.epochs, batch_size=self.batch_size, test_per_class=self.test_per_class,
            query_per_class=self.query_per_class, episodes_per_epoch=self.episodes_per_epoch,
            base_per_class=self.base_per_class, logit_mode=self.logit_mode, logit_scale=self.logit_scale,
            reg_scale=self.reg_scale,
        )

    def fit(self, X, y, base_prototypes=None):
        X = check_matrix(X)
        y = check_labels(y, X.shape[0])
        n_base = int(y.max()) + 1
        schedule = SessionSchedule(n_base, self.pseudo_sessions, self.ways, self.shots, self.pseudo_sessions)
        self.mlp_, self.report_ = pseudo_train(X, y, schedule, self.feature_map, self._config(),
                                               self.random_state, base_prototypes, self.pseudo_random_state)
        self.n_base_ = n_base
        return self

    @classmethod
    def from_mlp(cls, mlp: AdapterMlp, **params):
        """Wrap an already trained (e.g. loaded) MLP."""
        est = cls(**params)
        est.mlp_ = mlp if mlp.frozen else mlp.copy().freeze()
        est.n_base_ = mlp.n_base
        return est

    def balance_factors(self, bank: PrototypeClassifier, classes) -> np.ndarray:
        """Raw ``beta`` for the given novel classes of ``bank``."""
        check_is_fitted(self, "mlp_")
        if bank.base_count != self.mlp_.n_base:
            raise ValidationError(
                f"adapter input width {self.mlp_.n_base} does not match {bank.base_count} base classes"
            )
        classes = np.asarray(classes)
        if classes.size == 0:
            return np.zeros(0)
        rows = similarity_rows(bank.prototypes[classes], bank.base_prototypes)
        return betas(self.mlp_, rows)

    def novel_offsets(self, bank: PrototypeClassifier, classes) -> np.ndarray:
        return self.gamma * self.balance_factors(bank, classes)
