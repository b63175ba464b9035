import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcnn import metrics as E
from abcnn.errors import ConfigError, ShapeError, UndefinedAUCError


def pairwise_auc(scores, positive):
    """Mann-Whitney: fraction of (pos, neg) pairs ranked correctly, ties 1/2."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_examples():
    assert np.array_equal(E.confusion_matrix([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]), np.eye(5, dtype=int))
    cm = E.confusion_matrix([3, 3], [0, 3])
    assert cm[3, 0] == 1 and cm[3, 3] == 1 and cm.sum() == 2
    with pytest.raises(ShapeError):
        E.confusion_matrix([0, 1], [0])


def test_report_two_class_fixture():
    r = E.classification_report(np.array([[8, 2], [3, 7]]))
    assert r.precision[0] == pytest.approx(8 / 11) and r.recall[0] == pytest.approx(0.8)
    # harmonic mean of 8/11 and 0.8 is 16/21; sklearn's precision_recall_fscore_support agrees
    assert r.f1[0] == pytest.approx(16 / 21, abs=1e-12)
    assert r.f1[1] == pytest.approx(14 / 19, abs=1e-12)
    assert r.precision[1] == pytest.approx(7 / 9) and r.recall[1] == pytest.approx(0.7)
    assert r.support.tolist() == [10, 10]
    assert r.weighted_avg["f1"] == pytest.approx((r.f1[0] + r.f1[1]) / 2)


def test_report_diagonal_and_empty_columns():
    r = E.classification_report(np.diag([3, 1, 4, 1, 5]))
    assert np.all(r.precision == 1) and np.all(r.recall == 1) and np.all(r.f1 == 1)
    z = E.classification_report(np.array([[2, 0], [3, 0]]))
    assert z.precision[1] == 0 and z.f1[1] == 0


def test_report_permutation_equivariance(rng):
    cm = rng.integers(0, 20, size=(5, 5))
    perm = rng.permutation(5)
    a = E.classification_report(cm)
    b = E.classification_report(cm[np.ix_(perm, perm)])
    for field in ("precision", "recall", "f1", "support"):
        assert np.allclose(getattr(a, field)[perm], getattr(b, field))
    w = a.support / a.support.sum()
    assert a.weighted_avg["f1"] == pytest.approx(float(w @ a.f1))


def test_auc_examples():
    curve = E.roc_curve([0.8, 0.4, 0.6, 0.2], [True, True, False, False])
    assert E.auc_from_curve(curve) == 0.75
    assert E.auc_from_curve(E.roc_curve([0.9, 0.8, 0.1], [True, True, False])) == 1.0
    assert E.auc_from_curve(E.roc_curve([0.5] * 6, [1, 0, 1, 0, 0, 1])) == 0.5


def test_auc_undefined():
    with pytest.raises(UndefinedAUCError):
        E.roc_curve([0.1, 0.2], [True, True])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 1.0]) | st.floats(0, 1), st.booleans()),
                min_size=2, max_size=20).filter(lambda xs: 0 < sum(p for _, p in xs) < len(xs)))
def test_sweep_equals_pairwise(items):
    scores, positive = zip(*items)
    curve = E.roc_curve(scores, positive)
    assert abs(E.auc_from_curve(curve) - pairwise_auc(scores, positive)) < 1e-9
    assert (curve.fpr[0], curve.tpr[0]) == (0, 0) and (curve.fpr[-1], curve.tpr[-1]) == (1, 1)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)


def test_per_class_auc_missing_class_warns(rng):
    probs = rng.dirichlet(np.ones(5), size=30)
    labels = rng.choice([0, 1, 2, 4], size=30)
    with pytest.warns(RuntimeWarning, match="F"):
        _, aucs = E.per_class_auc(probs, labels)
    assert aucs[3] is None and all(a is not None for i, a in enumerate(aucs) if i != 3)
    assert E.macro_auc(aucs) == pytest.approx(np.mean([a for a in aucs if a is not None]))


def test_dispersion_examples(rng):
    probs = rng.dirichlet(np.ones(5), size=40)
    labels = np.arange(40) % 5
    same = E.macro_auc_with_dispersion([(probs, labels)] * 3)
    assert same.std == 0
    perfect = np.eye(5)[labels]
    # second repeat: class N scores all tied (AUC 0.5), others perfect -> macro 0.9
    worse = perfect.copy()
    worse[:, 0] = 0.0
    disp = E.macro_auc_with_dispersion([(perfect, labels), (worse, labels)])
    assert disp.per_repeat == pytest.approx([1.0, 0.9])
    assert (disp.mean, disp.std) == pytest.approx((0.95, 0.05))
    with pytest.raises(ConfigError):
        E.macro_auc_with_dispersion([(probs, labels)])


def test_dispersion_skips_undefined_class(rng):
    probs = rng.dirichlet(np.ones(5), size=20)
    full, missing = np.arange(20) % 5, np.arange(20) % 4
    with pytest.warns(RuntimeWarning, match="repeat 1"):
        d = E.macro_auc_with_dispersion([(probs, full), (probs, missing)])
    assert (1, 4) in d.skipped


def test_pca_variances_four_one(rng):
    z = rng.standard_normal((4000, 2))
    z = (z - z.mean(0)) / z.std(0, ddof=1)
    # decorrelate exactly so the covariance is diag(4, 1)
    L = np.linalg.cholesky(np.cov(z.T))
    z = z @ np.linalg.inv(L).T
    X = z * np.array([2.0, 1.0])
    proj, ratios, comps = E.pca_project(X)
    assert np.allclose(ratios, [0.8, 0.2], atol=1e-12)
    assert np.allclose(np.abs(comps), np.eye(2), atol=1e-9)
    assert np.all(comps[np.arange(2), np.abs(comps).argmax(axis=1)] > 0)


def test_pca_line_and_isometry(rng):
    t = rng.standard_normal(50)
    line = np.outer(t, [1.0, -2.0, 0.5]) + 3.0
    _, ratios, _ = E.pca_project(line)
    assert ratios[0] == pytest.approx(1.0)
    flat = rng.standard_normal((30, 2)) * [3, 1]
    proj, _, _ = E.pca_project(flat)
    d = lambda P: np.linalg.norm(P[:, None] - P[None], axis=-1)  # noqa: E731
    assert np.allclose(d(proj), d(flat))


def test_pca_translation_invariant(rng):
    X = rng.standard_normal((40, 6))
    a, _, _ = E.pca_project(X)
    b, _, _ = E.pca_project(X + rng.standard_normal(6) * 10)
    assert np.allclose(np.abs(a), np.abs(b))


def test_pca_errors():
    with pytest.raises(ConfigError):
        E.pca_project(np.ones((5, 3)))
    with pytest.raises(ShapeError):
        E.pca_project(np.ones((1, 3)))


def test_separation_ratio():
    pts = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    # between = 4 * 25 = 100, within = 4 * 0.25 = 1
    assert E.separation_ratio(pts, [0, 0, 1, 1]) == pytest.approx(100.0)


def test_evaluate_and_exports(rng):
    labels = np.arange(50) % 5
    probs = np.full((50, 5), 0.05)
    probs[np.arange(50), labels] = 0.8
    probs[:3] = probs[:3][:, ::-1]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ev = E.evaluate(probs, labels, dispersion_seeds=[0, 1, 2])
    assert ev.confusion.sum() == 50 and np.array_equal(ev.report.support, ev.confusion.sum(axis=1))
    assert len(ev.dispersion.per_repeat) == 3
    table = E.report_table(ev)
    assert table.splitlines()[0].split() == ["Label", "Precision", "Recall", "F-1", "Support", "AUC"]
    csv = E.report_csv(ev).splitlines()
    assert csv[0] == "class,precision,recall,f1,support,auc" and csv[-1].startswith("weighted_avg,")
    roc = E.roc_csv(ev).splitlines()
    assert roc[0] == "class,fpr,tpr" and roc[1] == "N,0.000000,0.000000"
    conf = E.confusion_csv(ev.confusion).splitlines()
    assert conf[0] == "true\\pred,N,S,V,F,Q" and len(conf) == 6
    pca = E.pca_csv(np.zeros((2, 2)), [0, 4]).splitlines()
    assert pca == ["x,y,label", "0.000000,0.000000,0", "0.000000,0.000000,4"]
