import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from retdict.estimators import KMeansDictionary, RDClassifier, RetrieverDictionary
from retdict.harness import generate_toy_task
from retdict.layer import rd_transform


@pytest.fixture(scope="module")
def task():
    return generate_toy_task(0, 3, 10, 4, 3, 3)


class TestKMeansDictionary:
    def test_params_and_clone(self):
        est = KMeansDictionary(n_atoms=3, preprocess="tanh", random_state=5)
        assert est.get_params()["n_atoms"] == 3
        assert clone(est).get_params() == est.get_params()

    def test_fit_predict_transform(self):
        X = np.array([[0.0, 0.0]] * 20 + [[5.0, 5.0]] * 20)
        est = KMeansDictionary(n_atoms=2).fit(X)
        labels = est.predict(X)
        assert len(set(labels[:20])) == 1 and labels[0] != labels[-1]
        dist = est.transform(X)
        assert dist.shape == (40, 2) and np.allclose(dist.min(axis=1), 0)
        assert est.dictionary_.atoms == 2
        assert est.inertia_history_[-1] == pytest.approx(est.inertia_)

    def test_standard_preprocess_applied_to_new_data(self):
        X = np.random.default_rng(0).standard_normal((50, 3)) * 10 + 4
        est = KMeansDictionary(n_atoms=4, preprocess="standard").fit(X)
        assert np.array_equal(est.predict(X), est.labels_)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            KMeansDictionary().predict(np.ones((1, 2)))


class TestRetrieverDictionary:
    def test_fit_transform_shape(self, task):
        train, _ = task
        est = RetrieverDictionary(n_atoms=5, kernel_size=3).fit(train.X)
        out = est.transform(train.X[:4])
        assert out.shape == train.X[:4].shape
        assert np.array_equal(out[0], rd_transform(train.X[0], est.params_))

    def test_given_dictionary_and_freeze(self, task):
        train, _ = task
        d = np.random.default_rng(0).standard_normal((3, 4))
        est = RetrieverDictionary(dictionary=d, freeze_dictionary=True).fit(train.X)
        assert est.params_.freeze_dictionary
        assert np.array_equal(est.params_.dictionary.data, d)

    def test_lambda_one_passthrough(self, task):
        train, _ = task
        est = RetrieverDictionary(n_atoms=4, lam=1.0).fit(train.X)
        assert np.array_equal(est.transform(train.X), train.X)

    def test_compress(self, task):
        train, _ = task
        est = RetrieverDictionary(n_atoms=6, kernel_size=3).fit(train.X)
        small = est.compress(train.X, 3, epochs=1, batch_size=8)
        assert small.params_.n_atoms == 3 and small.n_atoms == 3
        assert small.transform(train.X[:2]).shape == train.X[:2].shape

    def test_channel_mismatch(self, task):
        train, _ = task
        est = RetrieverDictionary(n_atoms=4).fit(train.X)
        with pytest.raises(ValueError):
            est.transform(np.ones((1, 5, 3, 3)))


class TestRDClassifier:
    def test_fit_predict(self, task):
        train, val = task
        labels = np.array(["a", "b", "c"])
        clf = RDClassifier(n_atoms=6, epochs=10, batch_size=4, learning_rate=0.1)
        clf.fit(train.X, labels[train.y])
        assert set(clf.classes_) == {"a", "b", "c"}
        assert clf.score(val.X, labels[val.y]) >= 0.9
        proba = clf.predict_proba(val.X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert clone(clf).get_params()["n_atoms"] == 6
