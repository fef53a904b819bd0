import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from caslstm import CasLstmClassifier, data

FAST = dict(dim=8, hidden_dim=16, epochs=15, batch_size=8, random_state=0)


@pytest.fixture(scope="module")
def majority():
    examples = data.gen_majority(120, 5, 0)
    return [" ".join(ex.words) for ex in examples], [ex.label for ex in examples]


@pytest.fixture(scope="module")
def fitted(majority):
    X, y = majority
    return CasLstmClassifier(**FAST).fit(X, y)


def test_params_and_clone():
    est = CasLstmClassifier(dim=5, cell_kind="peephole_variant")
    params = est.get_params()
    assert params["dim"] == 5 and params["cell_kind"] == "peephole_variant"
    copy = clone(est)
    assert copy.get_params() == params and copy is not est
    est.set_params(num_layers=3)
    assert est.num_layers == 3


def test_fit_predict_score(fitted, majority):
    X, y = majority
    assert set(fitted.classes_) == {"a", "b"}
    assert list(fitted.classes_) == sorted(fitted.classes_)
    assert fitted.predict(X).shape == (len(X),)
    assert fitted.score(X, y) >= 0.9
    assert len(fitted.history_) == FAST["epochs"]


def test_predict_proba(fitted, majority):
    X, _ = majority
    p = fitted.predict_proba(X[:7])
    assert p.shape == (7, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_array_equal(fitted.classes_[p.argmax(axis=1)], fitted.predict(X[:7]))


def test_token_lists_and_unknown_words(fitted):
    a = fitted.predict_proba(["a b a b a"])
    b = fitted.predict_proba([["a", "b", "a", "b", "a"]])
    np.testing.assert_array_equal(a, b)
    assert fitted.predict(["zebra a a"]).shape == (1,)


def test_transform_shapes(fitted):
    assert fitted.transform(["a b", "b b b a"]).shape == (2, 8)


def test_fit_is_seeded(majority):
    X, y = majority
    kw = dict(FAST, epochs=2)
    p1 = CasLstmClassifier(**kw).fit(X, y).predict_proba(X)
    p2 = CasLstmClassifier(**kw).fit(X, y).predict_proba(X)
    p3 = CasLstmClassifier(**dict(kw, random_state=1)).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(p1, p2)
    assert not np.array_equal(p1, p3)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CasLstmClassifier().predict(["a b"])
    with pytest.raises(NotFittedError):
        CasLstmClassifier().transform(["a b"])


@pytest.mark.parametrize("X, y", [
    ([], []),
    ("a b", ["x"]),
    (["a b", ""], [0, 1]),
    (["a b", "c"], [0]),
    (["a b", "c"], [0, 0]),
    ([1, 2], [0, 1]),
])
def test_input_validation(X, y):
    with pytest.raises(ValueError):
        CasLstmClassifier(epochs=1).fit(X, y)


def test_pair_input():
    examples = data.gen_pair_match(60, 5, 1)
    X = [(" ".join(ex.words), " ".join(ex.words2)) for ex in examples]
    y = [int(ex.label) for ex in examples]
    est = CasLstmClassifier(features="pi", **dict(FAST, epochs=2)).fit(X, y)
    assert list(est.classes_) == [0, 1]
    assert est.predict_proba(X[:3]).shape == (3, 2)
    feats = est.transform(X[:3])
    assert feats.shape == (3, 16)
    swapped = est.transform([(b, a) for a, b in X[:3]])
    np.testing.assert_array_equal(feats, swapped)
    with pytest.raises(ValueError):
        est.predict(["a b a"])
