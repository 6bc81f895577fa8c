import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muval.baselines import baseline_knn, baseline_lr, gray_histogram
from muval.errors import ContractError
from muval.metrics import accuracy, confusion, evaluate, f1, pairwise_auc, roc_auc, roc_curve, trapezoid_auc
from muval.volume_io import Volume


def brute_auc(scores, truth):
    num = den = 0.0
    for si, ti in zip(scores, truth):
        for sj, tj in zip(scores, truth):
            if ti == 1 and tj == 0:
                den += 1
                num += 1.0 if si > sj else 0.5 if si == sj else 0.0
    return num / den


def test_auc_against_brute_force_pairs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        truth = rng.integers(0, 2, n)
        truth[:2] = [0, 1]
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        _, auc = roc_auc(scores, truth)
        assert abs(auc - brute_auc(scores, truth)) < 1e-12


def test_accuracy_examples():
    truth = [1] * 23
    assert round(100 * accuracy([1] * 20 + [0] * 3, truth), 2) == 86.96
    assert accuracy(truth, truth) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0


def test_f1_examples():
    pred = [1] * 13 + [0] * 2 + [1] + [0] * 7
    truth = [1] * 15 + [0] * 8
    assert confusion(pred, truth) == {"tp": 13, "fp": 1, "tn": 7, "fn": 2}
    assert abs(f1(pred, truth) - 26 / 29) < 1e-15
    assert round(100 * f1(pred, truth), 2) == 89.66
    assert f1(truth, truth) == 1.0
    assert f1([0] * 5, [1, 1, 0, 0, 0]) == 0.0


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])[1] == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])[1] == 1.0


def test_auc_table_case():
    # 8 negatives, 15 positives, 101 of 120 pairs concordant, no ties
    neg = np.arange(8) + 0.5
    pos = np.array([8.0] * 10 + [7.0, 6.0, 5.0, 3.0, 0.0])
    assert sum((p > neg).sum() for p in pos) == 101
    scores, truth = np.concatenate([neg, pos]), [0] * 8 + [1] * 15
    _, auc = roc_auc(scores, truth)
    assert abs(auc - 101 / 120) < 1e-12 and f"{auc:.4f}" == "0.8417"


def test_roc_shape():
    pts = roc_curve([0.9, 0.1, 0.5, 0.5], [1, 0, 1, 0])
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    xs, ys = zip(*pts)
    assert list(xs) == sorted(xs) and list(ys) == sorted(ys)


def test_roc_needs_both_classes():
    with pytest.raises(ContractError):
        roc_auc([0.2, 0.3], [1, 1])
    with pytest.raises(ContractError):
        accuracy([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=40))
def test_trapezoid_equals_pair_count(rows):
    scores = [s / 20 for s, _ in rows]
    truth = [t for _, t in rows]
    if len(set(truth)) < 2:
        return
    assert abs(trapezoid_auc(roc_curve(scores, truth)) - pairwise_auc(scores, truth)) < 1e-12


def test_report_exports(tmp_path):
    report = evaluate([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
    assert report.accuracy == 0.5 and report.tp == 1 and report.fp == 1
    report.to_json(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["auc"] == report.auc and data["roc"][0] == [0.0, 0.0]
    report.roc_to_csv(tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr" and len(lines) == len(report.roc) + 1


def test_threshold_is_inclusive():
    assert evaluate([0.5, 0.49], [1, 0]).accuracy == 1.0


def test_histogram_examples():
    h = gray_histogram(Volume(np.full((3, 3, 3), 0.5)))
    assert h.shape == (256,) and h[128] == 1.0 and h.sum() == 1.0
    levels = np.arange(256) / 255.0
    h = gray_histogram(Volume(np.tile(levels, 4).reshape(4, 16, 16)))
    occupied = h[h > 0]
    np.testing.assert_allclose(occupied, occupied[0], atol=1e-6)
    assert len(occupied) == 256


def test_histogram_rejects_out_of_range():
    with pytest.raises(ContractError):
        gray_histogram(Volume(np.full((2, 2, 2), 1.5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_histogram_sums_to_one(seed):
    h = gray_histogram(Volume(np.random.default_rng(seed).random((4, 5, 6))))
    assert abs(h.sum() - 1) < 1e-6 and np.all(h >= 0)


def test_lr_separable_pair():
    X, y = np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0, 1])
    scores = baseline_lr(X, y, X, lr=0.5, epochs=500)
    assert accuracy((scores >= 0.5).astype(int), y) == 1.0


def test_knn_examples():
    X = np.array([[0.0], [1.0], [2.0], [5.0]])
    y = np.array([0, 1, 1, 0])
    assert baseline_knn(X, y, np.array([[2.0]]), k=1).tolist() == [1.0]
    np.testing.assert_allclose(baseline_knn(X, y, np.array([[0.3], [9.0]]), k=4), [0.5, 0.5])


def test_knn_tie_goes_to_earlier_point():
    X = np.array([[1.0], [-1.0]])
    assert baseline_knn(X, np.array([1, 0]), np.array([[0.0]]), k=1).tolist() == [1.0]
    assert baseline_knn(X, np.array([0, 1]), np.array([[0.0]]), k=1).tolist() == [0.0]
