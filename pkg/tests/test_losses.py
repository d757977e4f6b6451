import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asmlab import losses as L
from asmlab.errors import ConfigError, LabelError, NumericFault, ShapeError
from asmlab.numerics import DenseNet
from conftest import random_probs
from oracles import central_difference, max_relative_error


def prob_vectors(k):
    return arrays(np.float64, k, elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum())


# -- cross entropy / supervised ------------------------------------------------

def test_cross_entropy_examples():
    assert L.cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    assert L.cross_entropy(np.array([0.5, 0.5]), 0) == pytest.approx(math.log(2), abs=1e-15)
    assert L.cross_entropy(np.array([0.7, 0.3]), 1) == pytest.approx(1.2039728043259361, abs=1e-12)


def test_cross_entropy_clamps_zero_probability():
    assert L.cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_label_errors():
    with pytest.raises(LabelError):
        L.cross_entropy(np.array([0.5, 0.5]), 2)
    with pytest.raises(LabelError):
        L.cross_entropy(np.array([[0.5, 0.5]]), np.array([-1]))


def test_cross_entropy_batch():
    p = np.array([[0.7, 0.3], [0.2, 0.8]])
    assert np.allclose(L.cross_entropy(p, np.array([0, 1])), [-math.log(0.7), -math.log(0.8)])


def test_supervised_examples():
    one = np.array([0.0, 0.0, 1.0])
    assert L.supervised_loss(one, one, 2) == 0.0
    p = np.array([0.25, 0.75])
    assert L.supervised_loss(p, p, 0) == 2 * L.cross_entropy(p, 0)
    v = L.supervised_loss(np.array([0.7, 0.3]), np.array([0.6, 0.4]), 0)
    assert v == pytest.approx(0.8675005677047231, abs=1e-12)


# -- symmetric KL ----------------------------------------------------------------

def test_symmetric_kl_examples():
    p = np.array([0.2, 0.5, 0.3])
    assert L.symmetric_kl(p, p) == 0.0
    v = L.symmetric_kl(np.array([0.7, 0.3]), np.array([0.3, 0.7]))
    assert v == pytest.approx(0.8 * math.log(7 / 3), abs=1e-12)
    assert v == pytest.approx(0.6778, abs=1e-4)


@settings(max_examples=100)
@given(prob_vectors(4), prob_vectors(4))
def test_symmetric_kl_symmetric_and_nonnegative(p, q):
    a, b = L.symmetric_kl(p, q), L.symmetric_kl(q, p)
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= -1e-15


@settings(max_examples=100)
@given(prob_vectors(3), prob_vectors(3))
def test_symmetric_kl_zero_iff_equal(p, q):
    assume(np.max(np.abs(p - q)) > 1e-6)
    assert L.symmetric_kl(p, q) > 0
    assert L.symmetric_kl(p, p.copy()) == 0.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        L.symmetric_kl(np.ones(2) / 2, np.ones(3) / 3)
    with pytest.raises(ShapeError):
        L.consistency_loss(np.ones(2) / 2, np.ones(2) / 2, np.ones(3) / 3, np.ones(3) / 3)


# -- ramp --------------------------------------------------------------------------

def test_ramp_examples():
    s = L.RampSchedule(0.9, 0.65, 90)
    assert L.ramp_lambda(90, s) == 0.9
    assert L.ramp_lambda(0, s) == pytest.approx(0.4699, abs=1e-4)
    assert L.ramp_lambda(0, s) == 0.9 * math.exp(-0.65)
    assert L.ramp_lambda(150, s) == 0.9


@settings(max_examples=50)
@given(lmax=st.floats(0.0, 1.0), beta=st.floats(0.01, 20.0), e_r=st.integers(1, 200))
def test_ramp_bounded_and_monotone(lmax, beta, e_r):
    s = L.RampSchedule(lmax, beta, e_r)
    vals = [L.ramp_lambda(e, s) for e in range(e_r + 20)]
    assert all(0 <= v <= lmax for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[e_r] == lmax and all(v == lmax for v in vals[e_r:])


def test_ramp_config_errors():
    with pytest.raises(ConfigError):
        L.RampSchedule(1.5, 0.65, 90)
    with pytest.raises(ConfigError):
        L.RampSchedule(0.9, 0.0, 90)
    with pytest.raises(ConfigError):
        L.ramp_lambda(-1, L.RampSchedule())


# -- mutual --------------------------------------------------------------------------

def test_mutual_examples():
    p1, p2 = np.array([0.7, 0.3]), np.array([0.3, 0.7])
    assert L.mutual_loss(p1, p2, 0, 0.0) == L.supervised_loss(p1, p2, 0)
    assert L.mutual_loss(p1, p1, 1, 1.0) == 0.0
    expected = 0.5 * (-math.log(0.7) - math.log(0.3)) + 0.5 * 0.8 * math.log(7 / 3)
    assert L.mutual_loss(p1, p2, 0, 0.5) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.1193, abs=1e-4)


def test_mutual_rejects_bad_lambda():
    with pytest.raises(ConfigError):
        L.mutual_loss(np.ones(2) / 2, np.ones(2) / 2, 0, 1.2)


# -- consistency --------------------------------------------------------------------

def test_consistency_examples():
    a = np.array([0.3, 0.7])
    assert L.consistency_loss(a, a, a, a) == 0.0
    assert L.consistency_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]), a, a) == 1.0


def test_consistency_matches_componentwise_sum(rng):
    for _ in range(20):
        k = int(rng.integers(2, 7))
        ps = random_probs(rng, 4, k)
        expected = 0.0
        for a, b in ((ps[0], ps[1]), (ps[2], ps[3])):
            acc = 0.0
            for j in range(k):
                acc += (float(a[j]) - float(b[j])) ** 2
            expected += acc / k
        assert abs(L.consistency_loss(*ps) - expected) < 1e-12


def test_consistency_stop_weak():
    ps = [np.array([0.2, 0.8]), np.array([0.6, 0.4])] * 2
    gw1, gs1, gw2, gs2 = L.consistency_grad(*ps, stop_weak=True)
    assert np.all(gw1 == 0) and np.all(gw2 == 0) and np.any(gs1 != 0)


# -- total ---------------------------------------------------------------------------

def test_total_loss():
    w = L.LossWeights(0.5, 0.25)
    assert L.total_loss(0.0, 0.0, 0.0, w) == 0.0
    assert L.total_loss(1.3, 5.0, 7.0, L.LossWeights(0.0, 0.0)) == 1.3
    assert L.total_loss(1.0, 2.0, 3.0, w) == 2.75
    with pytest.raises(NumericFault):
        L.total_loss(float("nan"), 0.0, 0.0, w)
    with pytest.raises(ConfigError):
        L.LossWeights(-1.0, 0.0)


@settings(max_examples=100)
@given(prob_vectors(3), prob_vectors(3), prob_vectors(3), prob_vectors(3),
       st.integers(0, 2), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5))
def test_all_losses_nonnegative(p1, p2, p3, p4, y, lam, om, ga):
    sup = L.supervised_loss(p1, p2, y)
    mut = L.mutual_loss(p1, p2, y, lam)
    usc = L.consistency_loss(p1, p2, p3, p4)
    assert min(sup, mut, usc) >= 0
    assert L.total_loss(sup, mut, usc, L.LossWeights(om, ga)) >= 0


# -- gradients -------------------------------------------------------------------------

def _probability_grad_check(value, grad, probs):
    probs = [p.copy() for p in probs]
    analytic = grad(*probs)
    numeric = central_difference(lambda: float(np.sum(value(*probs))), probs)
    return max_relative_error(analytic, numeric)


@pytest.mark.parametrize("seed", range(5))
def test_probability_gradients(seed):
    rng = np.random.default_rng(seed)
    p = [random_probs(rng, 6, 4, sharpness=1.0) for _ in range(4)]
    y = rng.integers(0, 4, 6)
    checks = [
        (lambda a: L.cross_entropy(a, y), lambda a: [L.cross_entropy_grad(a, y)], p[:1]),
        (lambda a, b: L.supervised_loss(a, b, y), lambda a, b: L.supervised_grad(a, b, y), p[:2]),
        (L.symmetric_kl, L.symmetric_kl_grad, p[:2]),
        (lambda a, b: L.mutual_loss(a, b, y, 0.3), lambda a, b: L.mutual_grad(a, b, y, 0.3), p[:2]),
        (L.consistency_loss, L.consistency_grad, p),
    ]
    for value, grad, probs in checks:
        assert _probability_grad_check(value, grad, probs) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_logit_gradients_through_softmax(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = DenseNet.init([3, 4], seed), DenseNet.init([3, 4], seed + 100)
    x = rng.normal(size=(5, 3))
    xs = rng.normal(size=(5, 3))
    y = rng.integers(0, 4, 5)
    lam = 0.6

    def value():
        a, b = n1.forward(x), n2.forward(x)
        c, d = n1.forward(xs), n2.forward(xs)
        return float(np.sum(L.mutual_loss(a, b, y, lam)) + np.sum(L.consistency_loss(a, c, b, d)))

    a, b = n1.forward(x), n2.forward(x)
    c, d = n1.forward(xs), n2.forward(xs)
    m1, m2 = L.mutual_grad(a, b, y, lam)
    w1, s1, w2, s2 = L.consistency_grad(a, c, b, d)
    g1 = n1.backward(x, m1 + w1) + n1.backward(xs, s1)
    g2 = n2.backward(x, m2 + w2) + n2.backward(xs, s2)
    numeric = central_difference(value, n1.parameters() + n2.parameters())
    assert max_relative_error(g1.arrays() + g2.arrays(), numeric) < 1e-4
