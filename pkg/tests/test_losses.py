"""Huber, intervention and uniformity losses, and the combined objective."""

import math

import numpy as np
import pytest

from prism.autodiff import Parameter, Tensor, backward
from prism.gradcheck import finite_diff_gradient, max_relative_error
from prism.losses import (
    LossBreakdown,
    huber,
    huber_mean,
    intervention_loss,
    total_loss,
    uniform_loss,
    uniform_loss_batched,
)
from prism.model import ModelConfig, PrismModel, make_batch
from prism.synth import ScmConfig, generate


def _model_and_batch(states=2, genes=4, hidden=8, seed=3, dtype="float64"):
    records = generate(ScmConfig(genes=genes, length=96, tracks=3, seed=5))[0]
    model = PrismModel(
        ModelConfig(tracks=3, hidden=hidden, states=states, aux_dim=2, seed=seed, dtype=dtype)
    )
    X, S, aux, y = make_batch(records, model.config.np_dtype)
    return model, Tensor(X), Tensor(S), Tensor(aux), Tensor(y)


# ---------------------------------------------------------------------------
# Huber
# ---------------------------------------------------------------------------


def test_huber_zero_at_match():
    assert huber(1.7, 1.7, 1.0) == 0.0


def test_huber_quadratic_inside():
    assert huber(1.5, 1.0, 1.0) == pytest.approx(0.125, abs=1e-15)


def test_huber_linear_outside():
    assert huber(3.0, 1.0, 1.0) == pytest.approx(1.5, abs=1e-15)


def test_huber_rejects_bad_delta():
    with pytest.raises(ValueError):
        huber(1.0, 0.0, 0.0)


def test_huber_mean_is_batch_mean():
    pred = Tensor(np.array([1.0, 1.5, 3.0]))
    targ = Tensor(np.array([1.0, 1.0, 1.0]))
    assert float(huber_mean(pred, targ, 1.0).data) == pytest.approx(
        (0.0 + 0.125 + 1.5) / 3, abs=1e-15
    )


# ---------------------------------------------------------------------------
# uniformity loss
# ---------------------------------------------------------------------------


def test_uniform_single_vector_is_exactly_zero():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.uniform(0.1, 1.0, (1, 16))
        assert float(uniform_loss(a, t=2.0).data) == 0.0


def test_uniform_orthogonal_pair():
    val = float(uniform_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), t=1.0).data)
    assert val == pytest.approx(math.log(2 + 2 * math.exp(-2)), abs=1e-10)


def test_uniform_identical_pair_is_log4():
    a = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    for t in (0.5, 1.0, 2.0, 7.0):
        assert float(uniform_loss(a, t=t).data) == pytest.approx(math.log(4.0), abs=1e-10)


def test_uniform_lower_bounds():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        a = rng.standard_normal((n, 8))
        t = float(rng.uniform(0.5, 4.0))
        val = float(uniform_loss(a, t).data)
        assert val >= math.log(n)
        assert val >= math.log(n + n * (n - 1) * math.exp(-4 * t)) - 1e-12


def test_uniform_bound_met_at_antipodal_pair():
    # one-hot vectors make the normalized dot products exact
    a = np.zeros((2, 8))
    a[0, 3] = 1.0
    a[1, 3] = -1.0
    for t in (1.0, 2.0):
        val = float(uniform_loss(a, t).data)
        assert val == pytest.approx(math.log(2 + 2 * math.exp(-4 * t)), abs=1e-12)


def test_uniform_positive_rescaling_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = rng.standard_normal((3, 12))
        base = float(uniform_loss(a, 2.0).data)
        scaled = a.copy()
        scaled[1] *= float(rng.uniform(0.01, 100.0))
        assert float(uniform_loss(scaled, 2.0).data) == pytest.approx(base, abs=1e-12)


def test_uniform_monotone_in_pairwise_cosine():
    # rotate one vector of an orthogonal pair toward/away from the other
    def val(angle):
        a = np.array([[1.0, 0.0], [math.cos(angle), math.sin(angle)]])
        return float(uniform_loss(a, 2.0).data)

    angles = np.linspace(0.1, math.pi - 0.1, 12)  # cosine decreasing
    values = [val(t) for t in angles]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_uniform_rejects_zero_vector_and_bad_t():
    with pytest.raises(ValueError, match="nonzero"):
        uniform_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0)
    with pytest.raises(ValueError, match="temperature"):
        uniform_loss(np.eye(2), 0.0)


def test_uniform_batched_is_mean_of_per_gene():
    rng = np.random.default_rng(3)
    A = rng.uniform(0.1, 1.0, (5, 2, 8))
    per_gene = [float(uniform_loss(A[i], 2.0).data) for i in range(5)]
    batched = float(uniform_loss_batched(Tensor(A), 2.0).data)
    assert batched == pytest.approx(np.mean(per_gene), rel=1e-12)


# ---------------------------------------------------------------------------
# intervention loss
# ---------------------------------------------------------------------------


def test_intervention_with_unit_weights_reduces_to_prediction_loss():
    model, X, S, aux, y = _model_and_batch(states=2)
    ones = np.ones((4, 2, model.config.hidden))
    l2 = float(intervention_loss(model, X, S, aux, y, 1.0, A=ones).data)
    l1 = float(huber_mean(model.predict(X, S, aux), y, 1.0).data)
    assert l2 == l1


def test_intervention_zero_for_perfect_model():
    model, X, S, aux, y = _model_and_batch(states=2)
    pred = model.predict_interventional(X, S, aux).data
    assert float(intervention_loss(model, X, S, aux, Tensor(pred.copy()), 1.0).data) == 0.0


def test_intervention_two_equal_states_match_single_state():
    model, X, S, aux, y = _model_and_batch(states=2)
    rng = np.random.default_rng(0)
    w = rng.uniform(0.2, 0.8, (4, 1, model.config.hidden))
    both = np.concatenate([w, w], axis=1)
    l2_two = float(intervention_loss(model, X, S, aux, y, 1.0, A=both).data)

    single = PrismModel(
        ModelConfig(tracks=3, hidden=model.config.hidden, states=1, aux_dim=2,
                    seed=model.config.seed, dtype="float64")
    )
    l2_one = float(intervention_loss(single, X, S, aux, y, 1.0, A=w).data)
    assert l2_two == pytest.approx(l2_one, rel=1e-14)


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------


def test_total_reduces_to_l1_when_coefficients_zero():
    model, X, S, aux, y = _model_and_batch(states=2)
    loss, bd = total_loss(model, X, S, aux, y, alpha=0.0, beta=0.0, t=2.0, delta=1.0)
    l1 = float(huber_mean(model.predict(X, S, aux), y, 1.0).data)
    assert float(loss.data) == l1
    assert bd.l2 == 0.0 and bd.l3 == 0.0 and bd.total == bd.l1 == l1


def test_breakdown_arithmetic_identity():
    model, X, S, aux, y = _model_and_batch(states=2)
    _, bd = total_loss(model, X, S, aux, y, alpha=0.7, beta=1.3, t=2.0, delta=1.0,
                       training=True)
    assert bd.total == bd.l1 + 0.7 * bd.l2 + 1.3 * bd.l3
    assert bd.l1 >= 0 and bd.l2 >= 0


def test_breakdown_hand_arithmetic():
    bd = LossBreakdown(l1=0.5, l2=0.3, l3=0.1, total=0.5 + 1.0 * 0.3 + 1.0 * 0.1,
                       alpha=1.0, beta=1.0, t=2.0, delta=1.0)
    assert bd.total == pytest.approx(0.9, abs=1e-15)


def test_total_rejects_negative_coefficients():
    model, X, S, aux, y = _model_and_batch(states=2)
    with pytest.raises(ValueError):
        total_loss(model, X, S, aux, y, alpha=-1.0, beta=0.0, t=2.0, delta=1.0)


def test_total_loss_gradcheck_all_three_owners():
    model, X, S, aux, y = _model_and_batch(states=2, dtype="float64")

    def f():
        loss, _ = total_loss(model, X, S, aux, y, alpha=1.0, beta=1.0, t=2.0,
                             delta=1.0, training=True)
        return float(loss.data)

    loss, _ = total_loss(model, X, S, aux, y, alpha=1.0, beta=1.0, t=2.0,
                         delta=1.0, training=True)
    params = model.params()
    for p in params:
        p.zero_grad()
    backward(loss)
    owners = {p.owner for p in params}
    assert owners == {"theta", "omega", "phi"}
    numeric = finite_diff_gradient(f, params)
    analytic = {p.name: p.grad for p in params}
    assert max_relative_error(analytic, numeric) < 1e-4
    # gradient reached every owner
    for owner in ("theta", "omega", "phi"):
        assert any(np.any(p.grad != 0) for p in params if p.owner == owner)
