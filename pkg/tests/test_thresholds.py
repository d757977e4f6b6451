import numpy as np
import pytest

from asmlab.errors import ConfigError
from asmlab.thresholds import EpochPredictions, ThresholdTable, compute_thresholds, init_thresholds
from conftest import random_probs
from oracles import thresholds_bruteforce


def _preds(rows, labels):
    return EpochPredictions(np.array(rows, dtype=float), np.array(labels))


def test_init_thresholds():
    t = init_thresholds(7)
    assert np.array_equal(t.t_clean, np.full(7, 0.8))
    assert np.allclose(t.t_noisy, 0.2, rtol=0, atol=1e-15)
    assert np.array_equal(t.t_noisy, 1.0 - t.t_clean)
    assert t.epoch == -1
    t2 = init_thresholds(2)
    assert t2.t_clean.tolist() == [0.8, 0.8]
    assert t2.t_noisy.tolist() == pytest.approx([0.2, 0.2], abs=1e-15)
    for k in range(2, 10):
        t = init_thresholds(k)
        assert np.all(t.t_clean + t.t_noisy == 1.0)
        assert np.all(t.t_noisy == 1.0 - t.t_clean)
    with pytest.raises(ConfigError):
        init_thresholds(1)


def test_mean_of_correct_confidences():
    preds = _preds([[0.9, 0.1], [0.7, 0.3], [0.2, 0.8], [0.6, 0.4]], [0, 0, 0, 1])
    t = compute_thresholds(preds, 2, init_thresholds(2), epoch=3)
    assert t.t_clean[0] == pytest.approx(0.8, abs=1e-15)
    assert t.t_noisy[0] == 1.0 - t.t_clean[0]
    # class 1 has no correct prediction: inherits the previous value
    assert t.t_clean[1] == 0.8 and t.t_noisy[1] == 1.0 - 0.8
    assert t.epoch == 3


def test_fallback_keeps_previous_epoch_value():
    prev = ThresholdTable(np.array([0.8, 0.55]), np.array([0.2, 0.45]), epoch=4)
    preds = _preds([[0.9, 0.1]], [0])
    t = compute_thresholds(preds, 2, prev)
    assert t.t_clean[1] == 0.55 and t.t_noisy[1] == 0.45 and t.epoch == 5


def test_perfect_confidence_gives_one():
    preds = _preds([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], [0, 1, 0])
    t = compute_thresholds(preds, 2, init_thresholds(2))
    assert t.t_clean.tolist() == [1.0, 1.0]
    assert t.t_noisy.tolist() == [0.0, 0.0]


def test_matches_bruteforce_on_random_instances(rng):
    for _ in range(50):
        k = int(rng.integers(2, 4))
        probs = random_probs(rng, 50, k, sharpness=1.5)
        labels = rng.integers(0, k, 50)
        prev = init_thresholds(k)
        t = compute_thresholds(EpochPredictions(probs, labels), k, prev)
        tc, tn = thresholds_bruteforce(probs, labels, k, prev.t_clean, prev.t_noisy)
        assert t.t_clean.tolist() == tc
        assert t.t_noisy.tolist() == tn


def test_permutation_invariance(rng):
    probs = random_probs(rng, 200, 4)
    labels = rng.integers(0, 4, 200)
    perm = rng.permutation(200)
    a = compute_thresholds(EpochPredictions(probs, labels), 4, init_thresholds(4))
    b = compute_thresholds(EpochPredictions(probs[perm], labels[perm]), 4, init_thresholds(4))
    # summation order changes the last bits only
    assert np.allclose(a.t_clean, b.t_clean, rtol=1e-13, atol=0)


def test_class_count_mismatch():
    preds = _preds([[0.9, 0.1]], [0])
    with pytest.raises(ConfigError):
        compute_thresholds(preds, 2, init_thresholds(3))
    with pytest.raises(ConfigError):
        compute_thresholds(preds, 3, init_thresholds(3))


def test_epoch_predictions_fields():
    p1 = np.array([[0.6, 0.4], [0.1, 0.9]])
    p2 = np.array([[0.8, 0.2], [0.5, 0.5]])
    e = EpochPredictions.from_pair(p1, p2, np.array([1, 1]))
    assert np.allclose(e.confidence, [0.7, 0.7])
    assert e.predicted.tolist() == [0, 1]
    assert np.allclose(e.label_confidence, [0.3, 0.7])
    assert np.all(e.confidence >= 1 / 2)
