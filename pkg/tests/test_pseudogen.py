import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cala._validation import ValidationError
from cala.data import SessionSchedule
from cala.pseudogen import (LAMBDA_HIGH, LAMBDA_LOW, build_pseudo_run, build_pseudo_session, fake_label,
                            mixup_instance, sample_class_pairs)


def _base_data(B=10, per_class=30, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(B), per_class)
    return rng.standard_normal((y.size, dim)) + y[:, None], y


def test_mix_of_equal_inputs_is_the_input():
    v = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(mixup_instance(v, v, 0.47), v)


def test_lambda_one_returns_first():
    np.testing.assert_array_equal(mixup_instance([1.0, 2.0], [5.0, 6.0], 1.0), [1.0, 2.0])


def test_hand_mix():
    np.testing.assert_allclose(mixup_instance([1.0, 0.0], [0.0, 1.0], 0.4), [0.4, 0.6], atol=1e-15)


def test_mix_dim_mismatch():
    with pytest.raises(ValidationError):
        mixup_instance([1.0, 2.0], [1.0, 2.0, 3.0], 0.5)


def test_two_classes_one_pair():
    assert sample_class_pairs(range(2), 1, seed=0) == [(0, 1)]


def test_pairs_distinct_and_reproducible():
    a = sample_class_pairs(range(60), 40, seed=17)
    assert len(set(a)) == 40
    assert all(i < j for i, j in a)
    assert a == sample_class_pairs(range(60), 40, seed=17)


def test_too_many_pairs():
    with pytest.raises(ValidationError, match="only 3 exist"):
        sample_class_pairs(range(3), 4, seed=0)


def test_fake_labels_first_and_second_session():
    assert {fake_label(60, 5, 5, 1, k) for k in range(1, 26)} == set(range(60, 65))
    assert {fake_label(60, 5, 5, 2, k) for k in range(1, 26)} == set(range(65, 70))


def test_fake_label_single_shot():
    for k in range(1, 6):
        assert fake_label(60, 5, 1, 3, k) == 60 + 5 * 2 + (k - 1)


def test_session_labels_and_counts():
    X, y = _base_data(B=60, per_class=25)
    s = build_pseudo_session(X, y, 1, SessionSchedule(60, 8, 5, 5), seed=0)
    np.testing.assert_array_equal(np.bincount(s.y_train)[60:], [5] * 5)
    assert set(s.y_test) == set(range(60, 65))
    assert not s.resampled


def test_small_source_class_falls_back_to_resampling():
    X, y = _base_data(B=4, per_class=3)
    s = build_pseudo_session(X, y, 1, SessionSchedule(4, 1, 2, 2), seed=0, test_per_class=5)
    assert s.resampled
    assert s.X_test.shape[0] == 10


def test_mixes_are_convex_combinations_of_the_sources():
    X, y = _base_data(B=5, per_class=40, dim=1, seed=3)
    X = np.abs(X)
    s = build_pseudo_session(X, y, 1, SessionSchedule(5, 1, 2, 2), seed=4)
    for k, (a, b) in enumerate(s.pairs):
        lo = min(X[y == a].min(), X[y == b].min())
        hi = max(X[y == a].max(), X[y == b].max())
        block = s.X_train[k * 2:(k + 1) * 2]
        assert np.all((block >= lo) & (block <= hi))


@settings(max_examples=25, deadline=None)
@given(B=st.integers(4, 12), N=st.integers(1, 3), K=st.integers(1, 4), T=st.integers(1, 3), seed=st.integers(0, 999))
def test_pseudo_run_invariants(B, N, K, T, seed):
    if N * T > B * (B - 1) // 2:
        return
    X, y = _base_data(B=B, per_class=12)
    run = build_pseudo_run(X, y, SessionSchedule(B, T, N, K, T), seed=seed, test_per_class=3)
    pairs = [p for s in run for p in s.pairs]
    assert len(set(pairs)) == N * T
    for s in run:
        lam = np.concatenate([s.lambdas_train, s.lambdas_test])
        assert np.all((lam >= LAMBDA_LOW) & (lam <= LAMBDA_HIGH))
        first = B + N * (s.index - 1)
        np.testing.assert_array_equal(np.bincount(s.y_train - first), [K] * N)
        assert s.X_train.shape[0] == N * K
