import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aptshield import detect
from aptshield.errors import DomainError, ShapeError
from aptshield.numerics import make_rng


def pairwise_auc(is_pos, scores):
    pos = [s for p, s in zip(is_pos, scores) if p]
    neg = [s for p, s in zip(is_pos, scores) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


labelled_scores = st.lists(
    st.tuples(st.booleans(), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1)),
    min_size=2, max_size=60,
).filter(lambda xs: any(p for p, _ in xs) and not all(p for p, _ in xs))


def test_auc_examples():
    assert detect.roc_auc([True, False], [0.9, 0.8]) == 1.0
    assert detect.roc_auc([True, False, True, False], [0.4] * 4) == 0.5


def test_auc_matches_oracle_random_50():
    rng = make_rng(50)
    y = rng.random(50) < 0.4
    s = np.round(rng.random(50), 1)  # coarse rounding forces ties
    assert detect.roc_auc(y, s) == pytest.approx(pairwise_auc(y, s), abs=1e-12)


@given(labelled_scores)
def test_auc_oracle_and_complement(data):
    y = [p for p, _ in data]
    s = [x for _, x in data]
    auc = detect.roc_auc(y, s)
    assert auc == pytest.approx(pairwise_auc(y, s), abs=1e-9)
    assert auc + detect.roc_auc(y, [-x for x in s]) == pytest.approx(1.0, abs=1e-9)


@given(labelled_scores)
def test_roc_monotone_from_origin_to_corner(data):
    pts = detect.roc_curve([p for p, _ in data], [x for _, x in data])
    fpr = [p[0] for p in pts]
    tpr = [p[1] for p in pts]
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert all(b >= a for a, b in zip(fpr, fpr[1:]))
    assert all(b >= a for a, b in zip(tpr, tpr[1:]))


def test_roc_errors():
    with pytest.raises(DomainError):
        detect.roc_curve([True, True], [0.1, 0.2])
    with pytest.raises(ShapeError):
        detect.roc_curve([True, False], [0.1])


def separable_toy():
    rng = make_rng(4)
    a = rng.normal(loc=(-2, -2), scale=0.5, size=(30, 2))
    b = rng.normal(loc=(2, 2), scale=0.5, size=(30, 2))
    return np.vstack([a, b]), ["normal"] * 30 + ["intrusion"] * 30


def test_classifier_separable_toy():
    X, y = separable_toy()
    clf = detect.train_classifier(X, y, epochs=500, seed=0)
    pred, _ = detect.predict(clf, X)
    assert pred == y
    assert clf.training_log[-1][1] < clf.training_log[0][1]


def test_classifier_deterministic_and_validated():
    X, y = separable_toy()
    a = detect.train_classifier(X, y, epochs=20, seed=3)
    b = detect.train_classifier(X, y, epochs=20, seed=3)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)
    with pytest.raises(DomainError):
        detect.train_classifier(X, ["normal"] * len(y))
    with pytest.raises(ShapeError):
        detect.train_classifier(X, y[:-1])


def test_classifier_json_round_trip():
    X, y = separable_toy()
    clf = detect.train_classifier(X, y, epochs=10)
    back = detect.LinearClassifier.from_json(json.loads(json.dumps(clf.to_json())))
    assert np.array_equal(back.W, clf.W) and back.class_labels == clf.class_labels


def test_predict_examples():
    clf = detect.LinearClassifier(np.zeros((2, 3)), np.zeros(3), ["a", "b", "c"])
    _, probs = detect.predict(clf, np.ones((4, 2)))
    np.testing.assert_allclose(probs, np.full((4, 3), 1 / 3), rtol=1e-15)
    with pytest.raises(ShapeError):
        detect.predict(clf, np.ones((4, 3)))


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_predict_rows_sum_to_one_and_shift_invariant(seed, shift):
    rng = make_rng(seed)
    clf = detect.LinearClassifier(rng.normal(size=(3, 4)), rng.normal(size=4), ["a", "b", "c", "d"])
    X = rng.normal(size=(6, 3))
    labels, probs = detect.predict(clf, X)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    shifted = detect.LinearClassifier(clf.W, clf.b + shift, clf.class_labels)
    assert detect.predict(shifted, X)[0] == labels


def test_intrusion_score_is_complement_of_normal():
    clf = detect.LinearClassifier(np.zeros((1, 2)), np.array([0.0, np.log(3.0)]), ["attack", "normal"])
    _, probs = detect.predict(clf, np.zeros((1, 1)))
    assert detect.intrusion_scores(clf, probs)[0] == pytest.approx(0.25)


@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abc")), min_size=1, max_size=50))
def test_metrics_match_definitions(pairs):
    pred = [p for p, _ in pairs]
    true = [t for _, t in pairs]
    r = detect.evaluate(pred, true)
    conf = np.array(r.confusion)
    assert r.accuracy == np.trace(conf) / conf.sum()
    assert r.accuracy == sum(p == t for p, t in pairs) / len(pairs)
    for i, c in enumerate(r.labels):
        tp = sum(1 for p, t in pairs if p == c and t == c)
        n_pred = sum(1 for p in pred if p == c)
        n_true = sum(1 for t in true if t == c)
        assert r.precision[c] == (tp / n_pred if n_pred else 0.0)
        assert r.recall[c] == (tp / n_true if n_true else 0.0)


def test_evaluate_roc_and_outputs(tmp_path):
    true = ["normal", "scan", "normal", "ddos"]
    pred = ["normal", "scan", "scan", "ddos"]
    r = detect.evaluate(pred, true, [0.1, 0.9, 0.6, 0.8])
    assert r.auc == 1.0
    assert r.roc_points[0][:2] == (0.0, 0.0) and r.roc_points[-1][:2] == (1.0, 1.0)
    r.write_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["accuracy"] == 0.75
    r.write_roc_csv(tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr,threshold"
    assert lines[1].startswith("0.0,0.0,") and lines[-1].startswith("1.0,1.0,")
    assert detect.evaluate(["normal"], ["normal"], [0.2]).auc is None
    with pytest.raises(ShapeError):
        detect.evaluate(["a"], ["a", "b"])


def test_stratified_split():
    labels = ["n"] * 20 + ["a"] * 5 + ["b"]
    tr, te = detect.stratified_split(labels, 0.3, seed=1)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(26))
    assert sum(labels[i] == "n" for i in te) == 6
    assert sum(labels[i] == "a" for i in te) == 2
    assert sum(labels[i] == "b" for i in te) == 0
    tr2, te2 = detect.stratified_split(labels, 0.3, seed=1)
    assert np.array_equal(te, te2)
    with pytest.raises(DomainError):
        detect.stratified_split(labels, 1.0, seed=0)
