import numpy as np
import pytest
from oracles import dot_logits_oracle

from cala._validation import ValidationError
from cala.adapter import AdapterMlp, ClassAwareLogitAdapter
from cala.la_agnostic import AgnosticLogitAdjuster
from cala.protonet import PrototypeClassifier
from cala.runner import RunConfig, predict, run_fscil


def _zero_adapter(B):
    mlp = AdapterMlp.initialize(B, 4, seed=0)
    return ClassAwareLogitAdapter.from_mlp(mlp)


def _trained_like_adapter(B, seed=3):
    rng = np.random.default_rng(seed)
    mlp = AdapterMlp.initialize(B, 4, seed=seed)
    mlp.params["W3"][...] = rng.normal(0, 1, (1, 4))
    mlp.params["b3"][...] = 0.05
    return ClassAwareLogitAdapter.from_mlp(mlp, gamma=10.0)


def test_report_count_and_offset_lengths(small_stream):
    result = run_fscil(small_stream)
    assert len(result.reports) == len(small_stream) == 3
    for t, r in enumerate(result.reports):
        assert len(r.offsets) == small_stream.schedule.ways * t


def test_zero_adapter_equals_no_corrector(small_stream):
    plain = run_fscil(small_stream)
    cala = run_fscil(small_stream, config=RunConfig(corrector=_zero_adapter(8), name="cala"))
    for a, b in zip(plain.predictions, cala.predictions):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(plain.reports, cala.reports):
        assert (a.acc, a.fpr, a.hm) == (b.acc, b.fpr, b.hm)


def test_session_zero_identical_across_correctors(small_stream):
    runs = [run_fscil(small_stream, config=RunConfig(corrector=c)) for c in
            (None, _trained_like_adapter(8), AgnosticLogitAdjuster(alpha=0.4).fit())]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.predictions[0], runs[0].predictions[0])
        np.testing.assert_array_equal(r.reports[0].confusion, runs[0].reports[0].confusion)


def test_base_columns_identical_between_correctors(small_stream):
    plain = run_fscil(small_stream).classifier
    cala = run_fscil(small_stream, config=RunConfig(corrector=_trained_like_adapter(8))).classifier
    X = small_stream[2].X_test
    za, zb = plain.decision_function(X), cala.decision_function(X)
    assert za[:, :8].tobytes() == zb[:, :8].tobytes()
    assert not np.array_equal(za[:, 8:], zb[:, 8:])


def test_adapter_width_mismatch_rejected(small_stream):
    with pytest.raises(ValidationError, match="does not match 8 base classes"):
        run_fscil(small_stream, config=RunConfig(corrector=_zero_adapter(7)))


def test_offsets_of_earlier_sessions_are_retained(small_stream):
    result = run_fscil(small_stream, config=RunConfig(corrector=_trained_like_adapter(8)))
    first, second = result.reports[1].offsets, result.reports[2].offsets
    np.testing.assert_array_equal(second[:first.size], first)


def test_single_class_always_zero(rng):
    bank = PrototypeClassifier(rng.standard_normal((1, 3)), 1)
    assert all(predict(f, bank) == 0 for f in rng.standard_normal((20, 3)))


def test_tie_goes_to_base():
    bank = PrototypeClassifier(np.array([[1.0, 0.0], [1.0, 0.0]]), 1)
    assert predict([2.0, 1.0], bank, offsets=[0.0]) == 0


def test_predict_matches_oracle(rng):
    bank = PrototypeClassifier(rng.standard_normal((15, 6)), 10)
    offsets = rng.normal(0, 0.5, 5)
    for f in rng.standard_normal((1000, 6)):
        z = dot_logits_oracle(f, bank.prototypes)
        z[10:] += offsets
        assert predict(f, bank, offsets) == int(np.argmax(z))


def test_summary_against_self(small_stream):
    result = run_fscil(small_stream)
    summary = result.summary(baseline=result)
    assert summary["delta_last"] == 0.0
    assert summary["last"] == result.reports[-1].acc
