import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_for, rows_from
from dbpred.ccnn import (
    CcnnConfig,
    CcnnModel,
    candidate_correlation,
    candidate_score_and_grad,
    forward,
    load_ccnn,
    output_loss_and_grad,
    predict_ccnn,
    save_ccnn,
    train_ccnn,
)
from dbpred.errors import DimensionError, ModelFormatError, SchemaError, SingleClassError
from oracles import ccnn_forward_loops, central_difference

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = [-1, 1, 1, -1]


def xor_rows():
    return rows_from(XOR_X, XOR_Y)


def train_accuracy(model, rows):
    return np.mean([predict_ccnn(model, r)[0] == r.label for r in rows])


def blobs(seed, n=20):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-3, 0.5, (n, 2)), rng.normal(3, 0.5, (n, 2))])
    return rows_from(X, [-1] * n + [1] * n)


# -- correlation -------------------------------------------------------------------


def test_constant_candidate_scores_zero():
    assert candidate_correlation([0.3] * 5, [1, -2, 3, 0, 1]) == 0.0


def test_self_correlation():
    e = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.isclose(candidate_correlation(e, e), np.sum((e - e.mean()) ** 2), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_correlation_two_pass(n, seed):
    rng = np.random.default_rng(seed)
    v, e = rng.normal(size=n), rng.normal(size=n)
    vbar = sum(v) / n
    ebar = sum(e) / n
    expected = abs(sum((vi - vbar) * (ei - ebar) for vi, ei in zip(v, e)))
    assert abs(candidate_correlation(v, e) - expected) <= 1e-12 * max(1.0, expected)


def test_correlation_length_mismatch():
    with pytest.raises(DimensionError):
        candidate_correlation([1, 2, 3], [1, 2])


# -- gradients ---------------------------------------------------------------------


def _relative_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


@pytest.mark.parametrize("seed", range(10))
def test_output_gradient(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(int(rng.integers(3, 10)), int(rng.integers(2, 6))))
    t = rng.integers(0, 2, len(Z)).astype(float)
    w = rng.normal(size=Z.shape[1])
    _, g = output_loss_and_grad(w, Z, t)
    fd = central_difference(lambda u: output_loss_and_grad(u, Z, t)[0], w)
    assert _relative_error(g, fd) <= 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_candidate_gradient(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(int(rng.integers(3, 10)), int(rng.integers(2, 6))))
    e = rng.normal(size=len(Z))
    w = rng.normal(size=Z.shape[1])
    _, g = candidate_score_and_grad(w, Z, e)
    fd = central_difference(lambda u: candidate_score_and_grad(u, Z, e)[0], w)
    assert _relative_error(g, fd) <= 1e-5


# -- training behaviour ---------------------------------------------------------------


def test_xor_solved_in_most_seeds():
    solved = 0
    for seed in range(10):
        m = train_ccnn(xor_rows(), CcnnConfig(max_hidden_units=8, seed=seed), identity_for(2))
        solved += train_accuracy(m, xor_rows()) == 1.0 and m.n_hidden <= 8
    assert solved >= 9


def test_xor_without_hidden_units():
    m = train_ccnn(xor_rows(), CcnnConfig(max_hidden_units=0), identity_for(2))
    assert m.n_hidden == 0
    assert train_accuracy(m, xor_rows()) <= 0.75


@pytest.mark.parametrize("seed", range(3))
def test_separable_blobs_need_no_hidden_units(seed):
    rows = blobs(seed)
    m = train_ccnn(rows, CcnnConfig(max_hidden_units=10, seed=seed))
    assert m.n_hidden == 0
    assert train_accuracy(m, rows) == 1.0


def test_single_class():
    with pytest.raises(SingleClassError):
        train_ccnn(rows_from(XOR_X, [1, 1, 1, 1]), normalizer=identity_for(2))


@pytest.mark.parametrize("topology", ["flat", "cascade"])
def test_frozen_weights_through_trace(topology):
    cfg = CcnnConfig(max_hidden_units=4, topology=topology, fixed_budget=True, seed=3)
    m = train_ccnn(xor_rows(), cfg, identity_for(2))
    assert m.n_hidden == 4
    installs = [p for p in m.trace if p.phase == "install"]
    for k, phase in enumerate(installs):
        assert len(phase.hidden_weights) == k + 1
        for later in installs[k:]:
            for a, b in zip(phase.hidden_weights, later.hidden_weights):
                assert a.tobytes() == b.tobytes()
    for a, b in zip(installs[-1].hidden_weights, m.hidden_weights):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("seed", range(4))
def test_error_never_increases_on_install(seed):
    cfg = CcnnConfig(max_hidden_units=5, topology="cascade", fixed_budget=True, seed=seed)
    m = train_ccnn(blobs(seed, 8) + xor_rows(), cfg, identity_for(2))
    errors = [p.error for p in m.trace]
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))


def test_deterministic():
    cfg = CcnnConfig(max_hidden_units=3, topology="cascade", fixed_budget=True, seed=9)
    a = train_ccnn(xor_rows(), cfg, identity_for(2))
    b = train_ccnn(xor_rows(), cfg, identity_for(2))
    assert save_ccnn(a) == save_ccnn(b)
    assert [p.error for p in a.trace] == [p.error for p in b.trace]


@pytest.mark.parametrize("topology", ["flat", "cascade"])
def test_weight_counts(topology):
    cfg = CcnnConfig(max_hidden_units=4, topology=topology, fixed_budget=True)
    m = train_ccnn(xor_rows(), cfg, identity_for(2))
    for k, w in enumerate(m.hidden_weights, start=1):
        assert len(w) == (2 + 1 if topology == "flat" else 2 + k)
    assert len(m.output_weights) == 2 + 1 + 4


def test_structural_validation():
    with pytest.raises(ModelFormatError):
        CcnnModel(2, "flat", (np.zeros(4),), np.zeros(4), identity_for(2), ("x0", "x1"))


def test_defaults():
    assert CcnnConfig().max_hidden_units == 5


# -- prediction -------------------------------------------------------------------------


def test_zero_model_ties_to_binding():
    m = CcnnModel(3, "flat", (), np.zeros(4), identity_for(3), ("x0", "x1", "x2"))
    assert predict_ccnn(m, [1.0, -2.0, 3.0]) == ("binding", 0.5)


def test_schema_mismatch():
    m = CcnnModel(3, "flat", (), np.zeros(4), identity_for(3), ("x0", "x1", "x2"))
    with pytest.raises(SchemaError):
        predict_ccnn(m, [1.0, 2.0])


@pytest.mark.parametrize("topology", ["flat", "cascade"])
def test_forward_matches_loop_implementation(topology):
    rng = np.random.default_rng(21)
    X = rng.normal(size=(30, 3))
    rows = rows_from(X, np.where(X[:, 0] * X[:, 1] > 0, 1, -1))
    m = train_ccnn(rows, CcnnConfig(max_hidden_units=3, topology=topology, fixed_budget=True))
    Z = m.normalizer.transform(X)
    hidden = [(w.tolist(), topology == "cascade") for w in m.hidden_weights]
    expected = [ccnn_forward_loops(hidden, m.output_weights.tolist(), z) for z in Z.tolist()]
    assert np.allclose(forward(m, X), expected, rtol=0, atol=1e-12)


def test_save_load_round_trip():
    m = train_ccnn(xor_rows(), CcnnConfig(max_hidden_units=2, topology="cascade", fixed_budget=True),
                   identity_for(2))
    back = load_ccnn(save_ccnn(m))
    assert np.array_equal(forward(back, XOR_X), forward(m, XOR_X))
    assert back.topology == "cascade" and back.max_hidden_units == 2
    with pytest.raises(ModelFormatError):
        load_ccnn(save_ccnn(m).replace('"cascade"', '"flat"'))
