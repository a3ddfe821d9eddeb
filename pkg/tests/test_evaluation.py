import numpy as np
import pytest

from oracles import eer_grid, grid_resolves, mann_whitney_auc, roc_by_counting
from phonograph.evaluation import ScoreSet, auc, eer, report, roc
from phonograph.phoneme import BONAFIDE, FAKE


def S(scores, labels):
    return ScoreSet.from_arrays(scores, labels)


def _random_set(seed, n=None, quantum=1e-3):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(4, 120))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]
    shift = rng.uniform(0, 0.4)
    scores = np.clip(rng.normal(0.5 + shift * (labels - 0.5), 0.2), 0, 1)
    # quantise so ties occur and the dense oracle grid resolves every gap
    return np.round(scores / quantum) * quantum, labels


def test_perfect_separation():
    s = S([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert any(f == 0.0 and t == 1.0 for _, f, t in roc(s))
    assert auc(s) == 1.0 and eer(s) == 0.0


def test_anti_correlated():
    s = S([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert auc(s) == 0.0 and eer(s) == 1.0


def test_all_equal_scores():
    pts = roc(S([0.5] * 6, [1, 0, 1, 0, 1, 0]))
    assert [(f, t) for _, f, t in pts] == [(0.0, 0.0), (1.0, 1.0)]


def test_single_class_rejected():
    with pytest.raises(ValueError):
        auc(S([0.1, 0.2], [1, 1]))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        S([np.nan, 0.2], [1, 0])


def test_string_labels_accepted():
    assert auc(ScoreSet([("a", 0.9, BONAFIDE), ("b", 0.1, FAKE)])) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_roc_matches_counting(seed):
    scores, labels = _random_set(seed, n=50)
    ours = roc(S(scores, labels))
    ref = roc_by_counting(scores, labels)
    assert len(ours) == len(ref)
    for (a, f, t), (b, g, u) in zip(ours, ref):
        assert a == b and f == pytest.approx(g, abs=1e-15) and t == pytest.approx(u, abs=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_auc_matches_mann_whitney(seed):
    scores, labels = _random_set(seed)
    assert abs(auc(S(scores, labels)) - mann_whitney_auc(scores, labels)) < 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_eer_matches_dense_sweep(seed):
    scores, labels = _random_set(seed)
    assert grid_resolves(scores)
    assert abs(eer(S(scores, labels)) - eer_grid(scores, labels)) < 1e-9


def test_chance_auc_for_independent_labels():
    rng = np.random.default_rng(0)
    assert abs(auc(S(rng.random(4000), rng.integers(0, 2, 4000))) - 0.5) < 0.03


@pytest.mark.parametrize("seed", range(20))
def test_invariants(seed):
    scores, labels = _random_set(seed)
    s = S(scores, labels)
    assert auc(S(scores**3, labels)) == pytest.approx(auc(s), abs=1e-15)
    e = eer(s)
    assert 0.0 <= e <= 1.0
    assert eer(S(1 - scores, 1 - labels)) == pytest.approx(e, abs=1e-12)
    pts = roc(s)
    assert all(np.diff([p[1] for p in pts]) >= 0) and all(np.diff([p[2] for p in pts]) >= 0)


def test_report_layout():
    text = report({"test": S([0.9, 0.1], [1, 0])})
    assert "AUC / EER (%)" in text
    assert "100.00 /   0.00" in text
