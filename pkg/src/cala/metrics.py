"""Session metrics: accuracy, base-vs-novel FPR, harmonic mean, confusion matrices.

Rates are fractions in [0, 1]; percentages only appear when rendering.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError


def fpr_base_vs_novel(preds, labels, base_count) -> float:
    """Fraction of novel-class instances predicted into any base class.

    Base classes are the positive label, so a novel instance predicted as
    base is a false positive and one predicted as any novel class a true
    negative.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    novel = labels >= base_count
    if not novel.any():
        raise ValidationError("FPR undefined before session 1: no novel instances")
    fp = int(np.count_nonzero(preds[novel] < base_count))
    tn = int(np.count_nonzero(preds[novel] >= base_count))
    return fp / (fp + tn)


def harmonic_mean(a, b) -> float:
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def confusion_matrix(preds, labels, n_classes) -> np.ndarray:
    """Counts ``M[i, j]`` of true class ``i`` predicted as ``j``."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValidationError("preds and labels differ in length")
    for name, arr in (("label", labels), ("prediction", preds)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"{name} outside 0..{n_classes - 1}")
    flat = np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def row_normalize(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


def accuracy_from_confusion(cm) -> float:
    total = int(cm.sum())
    return int(np.trace(cm)) / total if total else 0.0


def fpr_from_confusion(cm, base_count) -> float:
    novel_rows = cm[base_count:]
    total = int(novel_rows.sum())
    if total == 0:
        raise ValidationError("FPR undefined before session 1: no novel instances")
    return int(novel_rows[:, :base_count].sum()) / total


@dataclass
class SessionReport:
    session: int
    acc: float
    acc_base: float
    acc_novel: float | None
    fpr: float | None
    hm: float | None
    confusion: np.ndarray
    per_class_acc: np.ndarray
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_base: int = 0

    def row(self):
        return {"session": self.session, "acc": self.acc, "acc_base": self.acc_base,
                "acc_novel": self.acc_novel, "fpr": self.fpr, "hm": self.hm}


def session_report(session, preds, labels, n_classes, base_count, offsets=None) -> SessionReport:
    """Score one session's predictions over every class seen so far."""
    cm = confusion_matrix(preds, labels, n_classes)
    support = cm.sum(axis=1)
    diag = np.diag(cm)
    per_class = np.divide(diag, support, out=np.zeros(n_classes), where=support > 0)
    base_total = int(support[:base_count].sum())
    acc_base = int(diag[:base_count].sum()) / base_total if base_total else 0.0
    novel_total = int(support[base_count:].sum())
    if novel_total:
        acc_novel = int(diag[base_count:].sum()) / novel_total
        fpr = fpr_from_confusion(cm, base_count)
        hm = harmonic_mean(acc_base, acc_novel)
    else:
        acc_novel = fpr = hm = None
    return SessionReport(session, accuracy_from_confusion(cm), acc_base, acc_novel, fpr, hm, cm,
                         per_class, np.zeros(0) if offsets is None else np.asarray(offsets, dtype=np.float64),
                         base_count)


def summarize(reports, baseline=None, pooled_novel=False) -> dict:
    """Average and last-session accuracy, plus ``delta_last`` and ``avg_novel`` when defined.

    ``baseline`` is another list of reports over the same schedule. With
    ``pooled_novel`` the novel average pools every novel test instance across
    sessions instead of averaging per-session novel accuracies.
    """
    if not reports:
        raise ValidationError("cannot summarize an empty report list")
    accs = [r.acc for r in reports]
    out = {"avg": float(np.mean(accs)), "last": float(accs[-1])}
    novel_reports = [r for r in reports if r.acc_novel is not None]
    if novel_reports:
        if pooled_novel:
            hits = sum(int(np.diag(r.confusion)[r.n_base:].sum()) for r in novel_reports)
            total = sum(int(r.confusion[r.n_base:].sum()) for r in novel_reports)
            out["avg_novel"] = hits / total
        else:
            out["avg_novel"] = float(np.mean([r.acc_novel for r in novel_reports]))
    if baseline is not None:
        if [r.confusion.shape for r in baseline] != [r.confusion.shape for r in reports]:
            raise ValidationError("baseline reports come from a different schedule")
        out["delta_last"] = float(accs[-1] - baseline[-1].acc)
    return out


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("session", "acc", "acc_base", "acc_novel", "fpr", "hm")


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def reports_to_csv(reports, header_comment=None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([row["session"]] + [_fmt(row[k]) for k in REPORT_COLUMNS[1:]])
    return buf.getvalue()


def confusion_to_csv(cm, normalized=False, header_comment=None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    n = cm.shape[0]
    w.writerow([str(j) for j in range(n)])
    data = row_normalize(cm) if normalized else cm
    for row in data:
        w.writerow([f"{v:.6f}" for v in row] if normalized else [str(int(v)) for v in row])
    return buf.getvalue()


def percent(v) -> str:
    return "-" if v is None else f"{100.0 * v:.2f}"


def summary_json(summary, config=None, seeds=None, config_hash=None) -> str:
    payload = dict(summary)
    if config is not None:
        payload["config"] = config
    if seeds is not None:
        payload["seeds"] = seeds
    if config_hash is not None:
        payload["config_sha256"] = config_hash
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
