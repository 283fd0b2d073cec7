"""The real few-shot class-incremental protocol over a session stream."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError
from .metrics import SessionReport, session_report, summarize
from .protonet import IncrementalPrototypeClassifier, PrototypeClassifier, logits


@dataclass
class RunConfig:
    """``corrector`` is None, a fitted :class:`~cala.la_agnostic.AgnosticLogitAdjuster`
    or a fitted :class:`~cala.adapter.ClassAwareLogitAdapter`."""

    logit_mode: str = "dot"
    corrector: object = None
    logit_scale: float = 1.0
    name: str = "none"


@dataclass
class RunResult:
    reports: list
    predictions: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    classifier: IncrementalPrototypeClassifier | None = None

    def summary(self, baseline=None, pooled_novel=False):
        base_reports = baseline.reports if isinstance(baseline, RunResult) else baseline
        return summarize(self.reports, base_reports, pooled_novel)


def predict(feature, bank: PrototypeClassifier, offsets=None, mode="dot", scale=1.0) -> int:
    """Argmax of the corrected logits of one feature; ties go to the lowest class id."""
    z = logits(np.asarray(feature, dtype=np.float64), bank, mode, scale)
    if offsets is not None and len(offsets):
        z = z.copy()
        z[bank.base_count:] += offsets
    return int(np.argmax(z))


def _check_corrector(corrector, n_base):
    mlp = getattr(corrector, "mlp_", None)
    if mlp is not None and mlp.n_base != n_base:
        raise ValidationError(f"adapter input width {mlp.n_base} does not match {n_base} base classes")


def run_fscil(stream, feature_map=None, config: RunConfig | None = None, base_prototypes=None) -> RunResult:
    """Walk the sessions of ``stream``, growing the classifier and scoring each session.

    Session 0 is scored without correction. Each later session appends the
    prototypes of its K-shot classes, asks the corrector for offsets of those
    classes once, and scores every test instance of the classes seen so far.
    """
    config = config or RunConfig()
    B = stream.schedule.base_classes
    _check_corrector(config.corrector, B)
    clf = IncrementalPrototypeClassifier(config.logit_mode, config.corrector, feature_map, config.logit_scale)
    base = stream.base
    clf.fit(base.X_train, base.y_train)
    if base_prototypes is not None:
        if base_prototypes.n_classes != B or base_prototypes.dim != clf.bank_.dim:
            raise ValidationError("supplied base prototypes do not match the base session")
        clf.bank_ = PrototypeClassifier(base_prototypes.prototypes, B)

    result = RunResult([], classifier=clf)
    for session in stream:
        if session.index > 0:
            clf.partial_fit(session.X_train, session.y_train)
            assert clf.offsets_.size == stream.schedule.ways * session.index
        pred = clf.predict(session.X_test)
        n_classes = clf.bank_.n_classes
        result.reports.append(session_report(session.index, pred, session.y_test, n_classes, B,
                                             clf.offsets_.copy()))
        result.predictions.append(pred)
        result.labels.append(np.asarray(session.y_test))
    return result
