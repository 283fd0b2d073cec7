"""Embedding datasets, the synthetic generator and N-way K-shot session streams."""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _binio
from ._validation import FormatError, ValidationError, check_positive_int

DATASET_MAGIC = b"CALAEMB1"


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """Labelled feature vectors with a train/test tag per instance.

    Parameters
    ----------
    X : ndarray of shape (n_samples, dim)
    y : ndarray of shape (n_samples,)
        Class ids; must cover ``0 .. n_classes - 1`` without gaps.
    train_mask : ndarray of shape (n_samples,), dtype bool
        True for ``train`` instances, False for ``test``.
    """

    X: np.ndarray
    y: np.ndarray
    train_mask: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        mask = np.asarray(self.train_mask, dtype=bool)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValidationError(f"features must be a 2-D array with dim >= 1, got shape {X.shape}")
        if not (X.shape[0] == y.shape[0] == mask.shape[0]):
            raise ValidationError("features, labels and split tags disagree in length")
        if X.shape[0] == 0:
            raise ValidationError("dataset has no instances")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain NaN or Inf")
        present = np.unique(y)
        if present[0] < 0 or not np.array_equal(present, np.arange(present[-1] + 1)):
            missing = sorted(set(range(int(present[-1]) + 1)) - set(present.tolist()))
            raise ValidationError(f"non-contiguous labels: missing class ids {missing[:10]}")
        for c in present:
            sel = y == c
            if not mask[sel].any():
                raise ValidationError(f"class {c} has no train instances")
            if mask[sel].all():
                raise ValidationError(f"class {c} has no test instances")
        for arr in (X, y, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "train_mask", mask)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_count(self) -> int:
        return int(self.y.max()) + 1

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.train_mask, other.train_mask)
        )

    def train(self):
        return self.X[self.train_mask], self.y[self.train_mask]

    def test(self):
        return self.X[~self.train_mask], self.y[~self.train_mask]


@dataclass(frozen=True)
class SessionSchedule:
    """``base_classes`` base classes, then ``sessions`` sessions of ``ways`` x ``shots``.

    ``pseudo_sessions`` defaults to ``sessions`` (at least 1).
    """

    base_classes: int
    sessions: int
    ways: int
    shots: int
    pseudo_sessions: int | None = None

    def __post_init__(self):
        check_positive_int(self.base_classes, "base_classes")
        check_positive_int(self.sessions, "sessions", minimum=0)
        check_positive_int(self.ways, "ways")
        check_positive_int(self.shots, "shots")
        if self.pseudo_sessions is None:
            object.__setattr__(self, "pseudo_sessions", max(self.sessions, 1))
        check_positive_int(self.pseudo_sessions, "pseudo_sessions")

    @property
    def total_classes(self) -> int:
        return self.base_classes + self.sessions * self.ways

    def session_classes(self, t: int) -> range:
        if t == 0:
            return range(self.base_classes)
        start = self.base_classes + (t - 1) * self.ways
        return range(start, start + self.ways)

    def validate_against(self, ds: EmbeddingDataset) -> None:
        if self.total_classes > ds.class_count:
            raise ValidationError(
                f"schedule needs {self.total_classes} classes (B={self.base_classes} + "
                f"T={self.sessions} x N={self.ways}) but the dataset has {ds.class_count}"
            )


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters around unit-norm base means; novel means sit ``novel_offset`` away.

    ``novel_offset`` is either one distance for every novel class or a sequence
    with one distance per novel class.
    """

    dim: int = 32
    base_classes: int = 20
    novel_classes: int = 10
    per_class_train: int = 100
    per_class_test: int = 50
    cluster_std: float = 0.15
    novel_offset: float | tuple = 0.3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.novel_offset, (list, np.ndarray)):
            object.__setattr__(self, "novel_offset", tuple(float(v) for v in self.novel_offset))
        check_positive_int(self.base_classes, "base_classes")
        check_positive_int(self.novel_classes, "novel_classes", minimum=0)
        check_positive_int(self.per_class_train, "per_class_train")
        check_positive_int(self.per_class_test, "per_class_test")
        if not self.cluster_std > 0:
            raise ValidationError("cluster_std must be positive")
        if np.any(np.asarray(self.offsets()) < 0):
            raise ValidationError("novel_offset must be non-negative")

    def offsets(self) -> np.ndarray:
        if isinstance(self.novel_offset, tuple):
            if len(self.novel_offset) != self.novel_classes:
                raise ValidationError(
                    f"novel_offset has {len(self.novel_offset)} entries for {self.novel_classes} novel classes"
                )
            return np.asarray(self.novel_offset, dtype=np.float64)
        return np.full(self.novel_classes, float(self.novel_offset))


@dataclass(frozen=True, eq=False)
class Session:
    index: int
    classes: tuple
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


@dataclass(frozen=True, eq=False)
class SessionStream:
    schedule: SessionSchedule
    sessions: list = field(default_factory=list)

    def __len__(self):
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)

    def __getitem__(self, t) -> Session:
        return self.sessions[t]

    @property
    def base(self) -> Session:
        return self.sessions[0]


def make_synthetic(spec: SyntheticSpec, return_centers=False):
    """Sample a synthetic embedding dataset.

    Classes ``0 .. base_classes-1`` are base classes, the rest are novel. Each
    novel mean is placed at exactly its offset from a seed-chosen base mean.
    Instances are laid out class by class, train before test.

    Returns
    -------
    ds : EmbeddingDataset
    centers : ndarray of shape (n_classes, dim)
        Only when ``return_centers`` is True.
    anchors : ndarray of shape (novel_classes,)
        Base class each novel mean was placed next to; only with ``return_centers``.
    """
    if spec.dim < 2:
        raise ValidationError("synthetic data needs dim >= 2")
    rng = np.random.default_rng(spec.seed)
    base = rng.standard_normal((spec.base_classes, spec.dim))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    anchors = rng.integers(0, spec.base_classes, size=spec.novel_classes)
    directions = rng.standard_normal((spec.novel_classes, spec.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    novel = base[anchors] + spec.offsets()[:, None] * directions
    centers = np.vstack([base, novel])

    n_per = spec.per_class_train + spec.per_class_test
    n_classes = centers.shape[0]
    noise = spec.cluster_std * rng.standard_normal((n_classes, n_per, spec.dim))
    X = (centers[:, None, :] + noise).reshape(-1, spec.dim)
    y = np.repeat(np.arange(n_classes), n_per)
    train_mask = np.tile(np.arange(n_per) < spec.per_class_train, n_classes)
    ds = EmbeddingDataset(X, y, train_mask)
    if return_centers:
        return ds, centers, anchors
    return ds


def split_sessions(ds: EmbeddingDataset, schedule: SessionSchedule, seed=0) -> SessionStream:
    """Cut ``ds`` into a base session plus ``schedule.sessions`` few-shot sessions.

    Novel classes are assigned to sessions in ascending label order and ``shots``
    train instances per novel class are drawn uniformly without replacement.
    Every session's test set holds all test instances of classes seen so far.
    """
    schedule.validate_against(ds)
    rng = np.random.default_rng(seed)
    X_tr, y_tr = ds.train()
    X_te, y_te = ds.test()

    base_sel = y_tr < schedule.base_classes
    test_sel = y_te < schedule.base_classes
    sessions = [Session(0, tuple(schedule.session_classes(0)), X_tr[base_sel], y_tr[base_sel],
                        X_te[test_sel], y_te[test_sel])]
    for t in range(1, schedule.sessions + 1):
        classes = schedule.session_classes(t)
        picked = []
        for c in classes:
            idx = np.flatnonzero(y_tr == c)
            if idx.size < schedule.shots:
                raise ValidationError(
                    f"class {c} has {idx.size} train instances, fewer than shots={schedule.shots}"
                )
            picked.append(np.sort(rng.choice(idx, size=schedule.shots, replace=False)))
        picked = np.concatenate(picked)
        test_sel = y_te < classes.stop
        sessions.append(Session(t, tuple(classes), X_tr[picked], y_tr[picked],
                                X_te[test_sel], y_te[test_sel]))
    return SessionStream(schedule, sessions)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _split_name(flag):
    return "train" if flag else "test"


def dataset_to_csv(ds: EmbeddingDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label"] + [f"f{i}" for i in range(ds.dim)] + ["split"])
    for row, label, flag in zip(ds.X, ds.y, ds.train_mask):
        writer.writerow([int(label)] + [repr(float(v)) for v in row] + [_split_name(flag)])
    return buf.getvalue()


def _record_dtype(dim):
    return np.dtype([("label", "<u4"), ("split", "u1"), ("x", "<f4", (dim,))])


def dataset_to_binary(ds: EmbeddingDataset) -> bytes:
    records = np.empty(len(ds), dtype=_record_dtype(ds.dim))
    records["label"] = ds.y
    records["split"] = ds.train_mask
    records["x"] = ds.X
    return DATASET_MAGIC + _binio.u32(ds.dim, len(ds)) + records.tobytes()


def _infer_format(path: Path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValidationError(f"unknown dataset format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def save_dataset(ds: EmbeddingDataset, path, format=None) -> None:
    """Write ``ds`` as CSV (exact decimal round trip) or binary (float32 features)."""
    path = Path(path)
    if _infer_format(path, format) == "csv":
        _binio.atomic_write_text(path, dataset_to_csv(ds))
    else:
        _binio.atomic_write_bytes(path, dataset_to_binary(ds))


def _parse_csv(text: str) -> EmbeddingDataset:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise FormatError("empty CSV file") from None
    dim = len(header) - 2
    expected = ["label"] + [f"f{i}" for i in range(dim)] + ["split"]
    if dim < 1 or header != expected:
        raise FormatError("CSV header must be label,f0,...,f{d-1},split")
    X, y, mask = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != dim + 2:
            raise FormatError(f"row {lineno}: expected {dim + 2} fields, got {len(row)}")
        try:
            label = int(row[0])
            feats = [float(v) for v in row[1:-1]]
        except ValueError as exc:
            raise FormatError(f"row {lineno}: non-numeric field ({exc})") from None
        if label < 0:
            raise FormatError(f"row {lineno}: negative label {label}")
        if row[-1] not in ("train", "test"):
            raise FormatError(f"row {lineno}: split must be train or test, got {row[-1]!r}")
        X.append(feats)
        y.append(label)
        mask.append(row[-1] == "train")
    if not X:
        raise FormatError("CSV has no data rows")
    return EmbeddingDataset(np.array(X), np.array(y), np.array(mask))


def _parse_binary(data: bytes) -> EmbeddingDataset:
    r = _binio.Reader(data, "dataset file")
    r.magic(DATASET_MAGIC)
    dim, count = r.u32(2)
    if dim < 1:
        raise FormatError("dataset file declares dim 0")
    dtype = _record_dtype(dim)
    records = np.frombuffer(r.take(dtype.itemsize * count), dtype=dtype)
    r.done()
    bad = np.flatnonzero(records["split"] > 1)
    if bad.size:
        raise FormatError(f"instance {bad[0]}: split flag {records['split'][bad[0]]} is not 0 or 1")
    return EmbeddingDataset(records["x"].astype(np.float64), records["label"].astype(np.int64),
                            records["split"] == 1)


def load_dataset(path, format=None) -> EmbeddingDataset:
    """Read a dataset written by :func:`save_dataset` (format inferred from suffix)."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "csv":
        return _parse_csv(path.read_text(encoding="utf-8"))
    return _parse_binary(path.read_bytes())
