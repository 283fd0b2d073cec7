import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import central_difference, cosine_oracle, max_relative_error, mlp_forward_oracle, softmax_oracle

from cala._validation import FormatError, ValidationError
from cala.adapter import (PARAM_ORDER, AdapterConfig, AdapterMlp, ClassAwareLogitAdapter, adapter_from_bytes,
                          adapter_to_bytes, apply_class_aware_adjustment, assemble_beta, batch_loss, beta_for_class,
                          cala_loss, load_adapter, pseudo_train, save_adapter, similarity_row, similarity_rows,
                          softmax)
from cala.data import SessionSchedule, SyntheticSpec, make_synthetic, split_sessions


def _random_mlp(B, H, seed):
    rng = np.random.default_rng(seed)
    p = {"W1": rng.normal(0, 0.5, (H, B)), "b1": rng.normal(0, 0.3, H), "W2": rng.normal(0, 0.5, (H, H)),
         "b2": rng.normal(0, 0.3, H), "W3": rng.normal(0, 0.5, (1, H)), "b3": rng.normal(0, 0.3, 1)}
    return AdapterMlp(p)


# similarity rows -----------------------------------------------------------

def test_self_similarity_is_one():
    base = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    assert similarity_row(base[1], base)[1] == pytest.approx(1.0, abs=1e-15)


def test_orthogonal_rows_are_zero():
    np.testing.assert_array_equal(similarity_row([0.0, 0.0, 3.0], np.array([[1.0, 0, 0], [0, 2.0, 0]])), [0.0, 0.0])


def test_similarity_matches_cosine_oracle(rng):
    P, Q = rng.standard_normal((6, 5)), rng.standard_normal((9, 5))
    S = similarity_rows(P, Q)
    for i in range(6):
        for j in range(9):
            assert abs(S[i, j] - cosine_oracle(P[i], Q[j])) <= 1e-12


def test_zero_novel_prototype_rejected():
    with pytest.raises(ValidationError, match="zero novel prototype"):
        similarity_row(np.zeros(2), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-1, 1, allow_nan=False)))
def test_adapter_input_sums_to_one(row):
    assert abs(softmax(row).sum() - 1.0) <= 1e-12


# forward pass --------------------------------------------------------------

def test_uniform_row_softmax():
    np.testing.assert_allclose(softmax(np.full(7, 0.3)), np.full(7, 1 / 7), atol=1e-15)


def test_constant_network():
    mlp = AdapterMlp.initialize(4, 3, seed=0)
    for k in PARAM_ORDER:
        mlp.params[k][...] = 0.0
    mlp.params["b3"][0] = 0.7
    for row in (np.zeros(4), np.array([1.0, -1.0, 0.5, 0.2])):
        assert beta_for_class(mlp, row) == 0.7


def test_forward_matches_oracle(rng):
    mlp = _random_mlp(10, 8, seed=42)
    row = rng.uniform(-1, 1, 10)
    expected = mlp_forward_oracle(mlp.params, softmax_oracle(list(row)))
    assert abs(beta_for_class(mlp, row) - expected) <= 1e-12


def test_untrained_adapter_outputs_zero(rng):
    mlp = AdapterMlp.initialize(6, 64, seed=1)
    assert beta_for_class(mlp, rng.uniform(-1, 1, 6)) == 0.0


def test_forward_width_mismatch():
    with pytest.raises(ValidationError, match="width 4"):
        AdapterMlp.initialize(4, 2, seed=0).forward(np.ones((1, 5)))


def test_frozen_parameters_are_immutable():
    mlp = AdapterMlp.initialize(3, 2, seed=0).freeze()
    with pytest.raises(ValueError):
        mlp.params["W1"][0, 0] = 1.0


def test_non_finite_parameters_rejected():
    p = AdapterMlp.initialize(3, 2, seed=0).params
    p["b2"][0] = np.nan
    with pytest.raises(ValidationError, match="not finite"):
        AdapterMlp(p)


# assembly and adjustment ---------------------------------------------------

def test_assemble_single_session():
    np.testing.assert_array_equal(assemble_beta([[0.1, 0.2]]).vector, [0.1, 0.2])


def test_assemble_preserves_order():
    np.testing.assert_array_equal(assemble_beta([[1.0], [2.0], [3.0]]).vector, [1.0, 2.0, 3.0])


def test_assemble_eight_sessions_index():
    beta = assemble_beta([np.arange(5) + 5 * t for t in range(8)], ways=5)
    assert len(beta) == 40
    assert beta.index_of(77, 60) == 17
    assert beta.vector[17] == 17


def test_ragged_sessions_rejected():
    with pytest.raises(ValidationError, match="ragged"):
        assemble_beta([[0.1, 0.2], [0.3]])


def test_zero_beta_is_identity():
    z = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(apply_class_aware_adjustment(z, assemble_beta([[0.0, 0.0]]), 1), z)


def test_zero_gamma_is_identity():
    z = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(apply_class_aware_adjustment(z, assemble_beta([[3.0, -4.0]], gamma=0.0), 1), z)


def test_hand_adjustment():
    out = apply_class_aware_adjustment([1.0, 1.0, 1.0], assemble_beta([[0.2, 0.5]], gamma=10.0), 1)
    np.testing.assert_allclose(out, [1.0, 3.0, 6.0], atol=1e-15)


def test_adjustment_length_mismatch():
    with pytest.raises(ValidationError, match="logit length"):
        apply_class_aware_adjustment(np.ones(4), assemble_beta([[0.1, 0.2]]), 1)


def test_base_logits_bit_identical(rng):
    Z = rng.standard_normal((100, 12)) * 5
    out = apply_class_aware_adjustment(Z, assemble_beta([rng.standard_normal(4)], gamma=7.3), 8)
    assert out[:, :8].tobytes() == Z[:, :8].tobytes()


# loss ----------------------------------------------------------------------

def test_loss_reduces_to_cross_entropy():
    z = np.array([0.2, 1.5, -0.3])
    parts = cala_loss(z, 1, [(0.0, 0.8), (0.0, 1.2)], mu=0.0)
    expected = -np.log(np.exp(1.5) / np.exp(z).sum())
    assert parts.total == pytest.approx(expected, abs=1e-14)
    assert parts.reg == 0.0


def test_saturated_true_logit_leaves_regulariser():
    parts = cala_loss([0.0, 800.0, 0.0], 1, [(0.4, 1.0), (0.1, 2.0)], mu=0.5)
    assert parts.ce == pytest.approx(0.0, abs=1e-300)
    assert parts.total == pytest.approx(0.4 - 0.5 + 0.1 - 1.0)


def test_cross_entropy_decreasing_in_true_logit():
    others = np.array([0.3, -0.2, 1.1])
    ces = [cala_loss(np.r_[others[:1], v, others[1:]], 1, [], 1.0).ce for v in np.linspace(-10, 10, 100)]
    assert np.all(np.diff(ces) < 0)


# gradients -----------------------------------------------------------------

def _problem(seed, B=6, M=4, n=20, H=5):
    rng = np.random.default_rng(seed)
    mlp = _random_mlp(B, H, seed + 100)
    S = rng.uniform(-1, 1, (M, B))
    Z = rng.standard_normal((n, B + M))
    labels = rng.integers(0, B + M, n)
    return mlp, S, Z, labels


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("reg_scale", ["instance", "batch"])
def test_gradients_match_central_differences(seed, reg_scale):
    mlp, S, Z, labels = _problem(seed)
    _, grads, _ = batch_loss(mlp, S, Z, labels, 10.0, 1.0, reg_scale)
    for k in PARAM_ORDER:
        def f():
            return batch_loss(mlp, S, Z, labels, 10.0, 1.0, reg_scale, with_grad=False)[0].total
        numeric = central_difference(f, mlp.params[k], 1e-5)
        assert max_relative_error(grads[k], numeric) < 1e-4, k


def test_dead_network_only_output_bias_gets_gradient():
    mlp = AdapterMlp.initialize(4, 3, seed=0)
    for k in PARAM_ORDER:
        mlp.params[k][...] = 0.0
    S = np.tile([0.2, 0.4, 0.1, 0.3], (2, 1))
    Z = np.zeros((4, 6))
    _, grads, _ = batch_loss(mlp, S, Z, np.array([0, 1, 4, 5]), 10.0, 1.0)
    np.testing.assert_array_equal(grads["W3"], np.zeros((1, 3)))
    assert grads["b3"][0] != 0.0


def test_doubling_gamma_doubles_cross_entropy_gradient_wrt_beta():
    # with the output layer only (W3=0), dL/db3 = dL/dbeta summed over classes
    mlp, S, Z, labels = _problem(3)
    mlp.params["W3"][...] = 0.0
    mlp.params["b3"][...] = 0.0
    g1 = batch_loss(mlp, S, Z, labels, 5.0, 0.0)[1]["b3"] - 1.0 * S.shape[0] / Z.shape[0]
    g2 = batch_loss(mlp, S, Z, labels, 10.0, 0.0)[1]["b3"] - 1.0 * S.shape[0] / Z.shape[0]
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12)


def test_mu_does_not_change_gradients():
    mlp, S, Z, labels = _problem(1)
    grads = [batch_loss(mlp, S, Z, labels, 10.0, mu)[1] for mu in (0.0, 0.5, 1.0)]
    for k in PARAM_ORDER:
        np.testing.assert_array_equal(grads[0][k], grads[1][k])
        np.testing.assert_array_equal(grads[0][k], grads[2][k])


def test_unknown_reg_scale():
    mlp, S, Z, labels = _problem(0)
    with pytest.raises(ValidationError, match="reg_scale"):
        batch_loss(mlp, S, Z, labels, 10.0, 1.0, "sample")


# persistence ---------------------------------------------------------------

def test_adapter_round_trip(tmp_path):
    mlp = _random_mlp(7, 4, seed=2)
    path = tmp_path / "a.bin"
    save_adapter(mlp, path, sidecar={"B": 7})
    blob = path.read_bytes()
    assert blob[:8] == b"CALAMLP1"
    np.testing.assert_array_equal(np.frombuffer(blob[8:24], "<u4"), [7, 4, 4, 1])
    assert len(blob) == 24 + 8 * (4 * 7 + 4 + 16 + 4 + 4 + 1)
    back = load_adapter(path)
    assert back.frozen and back.digest() == mlp.digest()
    assert (tmp_path / "a.bin.json").exists()


def test_adapter_bad_magic():
    with pytest.raises(FormatError, match="unrecognized adapter file"):
        adapter_from_bytes(b"CALAPRT1" + b"\x00" * 40)


def test_adapter_truncated():
    with pytest.raises(FormatError):
        adapter_from_bytes(adapter_to_bytes(_random_mlp(3, 2, 0))[:-5])


# pseudo-training -----------------------------------------------------------

@pytest.fixture(scope="module")
def small_base():
    ds = make_synthetic(SyntheticSpec(dim=8, base_classes=10, novel_classes=4, per_class_train=20,
                                      per_class_test=5, seed=1))
    stream = split_sessions(ds, SessionSchedule(10, 2, 2, 3))
    return stream.base.X_train, stream.base.y_train


def _quick_config(**kw):
    base = dict(hidden=8, epochs=2, episodes_per_epoch=2, test_per_class=4, query_per_class=4,
                logit_mode="cosine", logit_scale=16.0)
    base.update(kw)
    return AdapterConfig(**base)


def test_default_config_values():
    cfg = AdapterConfig()
    assert (cfg.hidden, cfg.lr, cfg.epochs, cfg.gamma, cfg.momentum, cfg.batch_size) == (64, 0.001, 20, 10.0, 0.9, 128)


def test_same_seed_bit_identical(small_base):
    X, y = small_base
    sched = SessionSchedule(10, 2, 2, 3, 2)
    a, ra = pseudo_train(X, y, sched, config=_quick_config(), seed=5)
    b, rb = pseudo_train(X, y, sched, config=_quick_config(), seed=5)
    assert adapter_to_bytes(a) == adapter_to_bytes(b)
    assert ra.to_dict() == rb.to_dict()
    assert a.frozen


def test_mu_leaves_trained_weights_unchanged(small_base):
    X, y = small_base
    sched = SessionSchedule(10, 2, 2, 3, 2)
    blobs = {adapter_to_bytes(pseudo_train(X, y, sched, config=_quick_config(mu=mu), seed=0)[0])
             for mu in (0.0, 0.5, 1.0)}
    assert len(blobs) == 1


def test_base_labels_must_be_contiguous(small_base):
    X, y = small_base
    with pytest.raises(ValidationError, match="exactly the classes"):
        pseudo_train(X, y, SessionSchedule(12, 1, 2, 3, 1), config=_quick_config())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(small_base):
    from cala._validation import DivergenceError
    X, y = small_base
    cfg = _quick_config(lr=1e308, gamma=1e300, epochs=1)
    with pytest.raises(DivergenceError, match="non-finite loss at epoch 1"):
        pseudo_train(X * 1e300, y, SessionSchedule(10, 1, 2, 3, 1), config=cfg)


def test_report_contents(small_base):
    X, y = small_base
    _, report = pseudo_train(X, y, SessionSchedule(10, 1, 2, 3, 1), config=_quick_config(epochs=3))
    assert len(report.history) == 3
    assert 1 <= report.selected_epoch <= 3
    assert report.pseudo_test_hm == max(h["pseudo_test"]["hm"] for h in report.history)
    assert set(report.untrained) >= {"hm", "fpr", "acc"}


def test_estimator_params_and_offsets(small_base):
    X, y = small_base
    est = ClassAwareLogitAdapter(ways=2, shots=3, hidden=8, epochs=1, episodes_per_epoch=1,
                                 test_per_class=3, query_per_class=3, random_state=2)
    assert est.get_params()["gamma"] == 10.0
    est.fit(X, y)
    from cala.protonet import PrototypeClassifier, extend_classifier
    protos = np.vstack([X[y == c].mean(axis=0) for c in range(10)])
    bank = extend_classifier(PrototypeClassifier(protos, 10), X[:2] + 0.1)
    off = est.novel_offsets(bank, [10, 11])
    np.testing.assert_allclose(off, 10.0 * est.balance_factors(bank, [10, 11]))


def test_adapter_width_must_match_bank():
    est = ClassAwareLogitAdapter.from_mlp(AdapterMlp.initialize(3, 2, seed=0))
    from cala.protonet import PrototypeClassifier
    with pytest.raises(ValidationError, match="does not match 4 base classes"):
        est.balance_factors(PrototypeClassifier(np.eye(5), 4), [4])
