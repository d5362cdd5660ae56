import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldankit import evaluation as ev
from ldankit.errors import FoldConstructionError, InsufficientRecordsError, InvalidInputError


def _clustered(n_cond=19, per=20, spread=0.0, seed=0):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_cond, 18)) * 3
    cond = np.repeat(np.arange(n_cond), per)
    return means[cond] + spread * rng.standard_normal((len(cond), 18)), cond


def test_exact_means_fixture_is_perfect():
    preds, cond = _clustered()
    rep = ev.classify_conditions(preds, cond)
    assert rep.top1 == (100.0, 0.0)
    assert all(v == 100.0 for v in rep.per_fold["top1"])
    assert len(rep.per_fold["top1"]) == 10


def test_topk_ordering_per_fold():
    preds, cond = _clustered(spread=3.0, seed=1)
    rep = ev.classify_conditions(preds, cond)
    for a, b, c in zip(rep.per_fold["top1"], rep.per_fold["top2"], rep.per_fold["top3"]):
        assert a <= b <= c <= 100


def test_coin_flip_labels_near_half():
    rng = np.random.default_rng(0)
    preds = rng.standard_normal((4000, 18))
    cond = rng.integers(0, 2, 4000)
    assert abs(ev.classify_conditions(preds, cond).top1[0] - 50) < 4


def test_tie_goes_to_lower_condition():
    means = np.array([[-1.0, 0.0], [1.0, 0.0]])
    ranked = ev.rank_conditions(np.array([[0.0, 0.0]]), means, np.array([3, 7]))
    assert list(ranked[0]) == [3, 7]
    ranked = ev.rank_conditions(np.array([[0.0, 0.0]]), means[::-1], np.array([7, 3]))
    assert list(ranked[0]) == [3, 7]


def test_folds_cover_each_record_once_and_are_deterministic():
    cond = np.repeat(np.arange(5), 13)
    a = ev.stratified_folds(cond, 10, seed=4)
    b = ev.stratified_folds(cond, 10, seed=4)
    np.testing.assert_array_equal(a, b)
    assert set(a) == set(range(10))
    for c in range(5):
        assert len(set(a[cond == c])) == 10
    with pytest.raises(FoldConstructionError):
        ev.stratified_folds(np.repeat(np.arange(3), 5), 10, 0)


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_classification_invariant_to_orthogonal_transform(seed):
    preds, cond = _clustered(n_cond=6, per=10, spread=2.5, seed=seed)
    q, _ = np.linalg.qr(np.random.default_rng(seed + 1).standard_normal((18, 18)))
    a = ev.classify_conditions(preds, cond, seed=seed)
    b = ev.classify_conditions(preds @ q, cond, seed=seed)
    assert a.per_fold == b.per_fold


def test_verification_pairs_balanced_unique():
    cond = np.repeat(np.arange(19), 20)
    i, j, same = ev.verification_pairs(cond, 2000, np.random.default_rng(0))
    assert same.sum() == 1000 and (~same).sum() == 1000
    assert np.all(i < j)
    assert len(set(zip(i.tolist(), j.tolist()))) == 2000
    np.testing.assert_array_equal(cond[i] == cond[j], same)
    with pytest.raises(InsufficientRecordsError):
        ev.verification_pairs(np.array([0, 1, 1]), 2, np.random.default_rng(0))
    with pytest.raises(InsufficientRecordsError):
        ev.verification_pairs(np.repeat([0, 1], 2), 10, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        ev.verification_pairs(cond, 3, np.random.default_rng(0))


def test_perfect_separation_auc_one():
    th, tpr, fpr, auc = ev.roc_from_scores([0.1, 0.2, 0.9, 1.0], [True, True, False, False])
    assert auc == 1.0
    assert tpr[0] == fpr[0] == 0 and tpr[-1] == fpr[-1] == 1
    assert np.all(np.diff(tpr) >= 0) and np.all(np.diff(fpr) >= 0)


def test_auc_matches_rank_oracle_on_1000_sets():
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(1000):
        n = int(rng.integers(4, 60))
        same = rng.random(n) < 0.5
        same[0], same[1] = True, False
        d = rng.standard_normal(n) + 0.7 * (~same)
        if k % 3 == 0:
            d = np.round(d, 1)  # exercise ties
        worst = max(worst, abs(ev.roc_from_scores(d, same)[3] - ev.rank_auc(d, same)))
    assert worst < 1e-6


def test_independent_scores_auc_half():
    rng = np.random.default_rng(3)
    d = rng.random(20_000)
    same = rng.permutation(np.r_[np.ones(10_000, bool), np.zeros(10_000, bool)])
    assert abs(ev.roc_from_scores(d, same)[3] - 0.5) < 0.02


def test_roc_q_measure_excludes_degenerate_pairs(tmp_path):
    rng = np.random.default_rng(0)
    sh = rng.standard_normal((6, 3, 9))
    sh[5, :, 1:] = 0  # DC only
    cond = np.array([0, 0, 1, 1, 2, 2])
    pairs = (np.array([0, 2, 4, 0, 1, 3]), np.array([1, 3, 5, 2, 4, 5]), cond[[0, 2, 4, 0, 1, 3]] == cond[[1, 3, 5, 2, 4, 5]])
    curve = ev.roc(sh, pairs, "q_measure")
    assert curve.n_excluded == 2
    assert 0 <= curve.auc <= 1
    curve.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "threshold,fpr,tpr"
    with pytest.raises(InvalidInputError):
        ev.roc(sh.reshape(6, 27), pairs, "q_measure")
    with pytest.raises(InvalidInputError):
        ev.roc(sh, pairs, "cosine")


def test_runtime_bench_positive_and_steady():
    x = np.random.default_rng(0).random((16, 64))
    w = np.random.default_rng(1).random((64, 64))

    def f(batch):
        for _ in range(20):
            batch @ w
        return batch

    a = ev.runtime_bench(f, x, 2000, repeats=5)
    b = ev.runtime_bench(f, x, 4000, repeats=5)
    assert a > 0 and b > 0
