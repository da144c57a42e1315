import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosent.errors import DegenerateLabels
from biosent.metrics import (
    EvalReport,
    auc_pr,
    auroc,
    balanced_accuracy,
    cohen_kappa,
    evaluate,
    weighted_f1,
)

import oracles


# hand-countable cases; compared with ==, not approx
def test_balanced_accuracy_hand():
    assert balanced_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert balanced_accuracy([0, 0, 0, 1], [0, 0, 1, 1]) == (2 / 3 + 1) / 2
    assert balanced_accuracy([0, 0, 1, 1], [1, 1, 1, 1]) == 0.5


def test_auroc_hand():
    assert auroc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert auroc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert auroc([0, 1, 0, 1], [0.3, 0.3, 0.3, 0.3]) == 0.5


def test_auc_pr_hand():
    assert auc_pr([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert auc_pr([0, 1], [0.9, 0.1]) == 0.5


def test_cohen_kappa_hand():
    assert cohen_kappa([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0
    assert cohen_kappa([0, 0, 1, 1], [0, 1, 1, 1]) == 0.5
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 0.0  # p_e = 1


def test_weighted_f1_hand():
    assert weighted_f1([0, 1, 1, 2], [0, 1, 1, 2]) == 1.0
    assert weighted_f1([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3, abs=1e-15)
    assert weighted_f1([3, 3, 3], [3, 3, 3]) == 1.0


def test_errors():
    with pytest.raises(DegenerateLabels):
        auroc([1, 1], [0.2, 0.3])
    with pytest.raises(DegenerateLabels):
        auc_pr([0, 0], [0.2, 0.3])
    for fn in (balanced_accuracy, cohen_kappa, weighted_f1):
        with pytest.raises(ValueError):
            fn([], [])
        with pytest.raises(ValueError):
            fn([0, 1], [0])


def test_auc_pr_prevalence_monte_carlo():
    rng = np.random.default_rng(0)
    pi = 0.3
    vals = []
    for _ in range(200):
        y = (rng.random(400) < pi).astype(int)
        vals.append(auc_pr(y, rng.random(400)))
    assert abs(np.mean(vals) - pi) < 0.05


def test_kappa_independent_predictions_near_zero():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 4, size=20000)
    p = rng.integers(0, 4, size=20000)
    assert abs(cohen_kappa(y, p)) < 0.05


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_binary_metrics_match_oracles(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 6, size=n) / 5.0  # coarse grid forces ties
    assert auroc(y, s) == pytest.approx(oracles.auroc_pairs(y, s), abs=1e-12)
    assert auc_pr(y, s) == pytest.approx(oracles.average_precision(list(y), list(s)), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(2, 5))
def test_multiclass_metrics_match_oracles(seed, n, c):
    rng = np.random.default_rng(seed)
    y, p = list(rng.integers(0, c, size=n)), list(rng.integers(0, c, size=n))
    assert balanced_accuracy(y, p) == pytest.approx(oracles.balanced_accuracy(y, p), abs=1e-12)
    assert cohen_kappa(y, p) == pytest.approx(oracles.cohen_kappa(y, p), abs=1e-12)
    assert weighted_f1(y, p) == pytest.approx(oracles.weighted_f1(y, p), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "affine", "logit"]))
def test_auroc_monotone_invariance(seed, kind):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=25)
    y[:2] = [0, 1]
    s = rng.uniform(0.01, 0.99, size=25)
    t = {"exp": np.exp(s), "cube": s ** 3, "affine": 7 * s - 2, "logit": np.log(s / (1 - s))}[kind]
    assert auroc(y, t) == pytest.approx(auroc(y, s), abs=1e-12)


def test_balanced_equals_accuracy_for_symmetric_balanced():
    # 2 classes x 10 samples, confusion [[7,3],[3,7]]
    y = [0] * 10 + [1] * 10
    p = [0] * 7 + [1] * 3 + [1] * 7 + [0] * 3
    acc = np.mean(np.array(y) == np.array(p))
    assert balanced_accuracy(y, p) == pytest.approx(acc)
    # 3 classes, circulant confusion
    y = [0] * 6 + [1] * 6 + [2] * 6
    p = [0] * 4 + [1, 2] + [1] * 4 + [2, 0] + [2] * 4 + [0, 1]
    assert balanced_accuracy(y, p) == pytest.approx(np.mean(np.array(y) == np.array(p)))


def test_ranges_on_random_cases():
    rng = np.random.default_rng(5)
    for _ in range(50):
        y = rng.integers(0, 3, size=20)
        p = rng.integers(0, 3, size=20)
        assert -1 <= cohen_kappa(y, p) <= 1
        assert 0 <= balanced_accuracy(y, p) <= 1 and 0 <= weighted_f1(y, p) <= 1


def test_evaluate_binary_and_multiclass():
    rep = evaluate([0, 1, 1, 0], np.array([0.2, 0.7, 0.4, 0.1]), 1)
    assert set(rep.metrics) == {"balanced_accuracy", "auroc", "auc_pr"}
    assert rep.metrics["balanced_accuracy"] == 0.75 and rep.n_classes == 2
    probs = np.array([[0.1, 0.9], [0.8, 0.2]])
    assert evaluate([1, 0], probs, 2).metrics["auroc"] == 1.0
    multi = evaluate([0, 2, 1], np.eye(3)[[0, 2, 2]], 3)
    assert set(multi.metrics) == {"balanced_accuracy", "cohen_kappa", "weighted_f1"}
    single = evaluate([1, 1], np.array([0.9, 0.8]), 2)
    assert "auroc" not in single.metrics


def test_report_serialization():
    rep = EvalReport({"auroc": 0.5, "auc_pr": 0.25}, 10, 2)
    doc = json.loads(rep.to_json())
    assert doc == {"metrics": {"auroc": 0.5, "auc_pr": 0.25}, "n_samples": 10, "n_classes": 2}
    lines = rep.to_csv().splitlines()
    assert lines == ["metric,value,n_samples,n_classes", "auc_pr,0.25,10,2", "auroc,0.5,10,2"]
