"""scikit-learn compatible wrappers around the functional core."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_batch
from .compress import DistillConfig, distill
from .dictionary import KMeansConfig, _assign, _sq_dists, lloyd, preprocess, EmbeddingSet
from .harness import ToyDataset, TrainConfig, train_model
from .layer import DEFAULT_LAMBDA, RDParams, rd_transform
from .normalization import Dictionary
from .pipeline import pixel_embeddings


class KMeansDictionary(ClusterMixin, TransformerMixin, BaseEstimator):
    """k-means++ / Lloyd dictionary builder over embedding rows.

    Parameters
    ----------
    n_atoms : int, default=512
    preprocess : {"none", "standard", "tanh"}, default="none"
    max_iter : int, default=300
    tol : float, default=1e-4
        Convergence threshold on the largest centroid L2 shift.
    random_state : int, default=0

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_atoms, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
    n_iter_ : int
    inertia_history_ : list of float
    """

    def __init__(self, n_atoms=512, preprocess="none", max_iter=300, tol=1e-4, random_state=0):
        self.n_atoms = n_atoms
        self.preprocess = preprocess
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _prep(self, X):
        return preprocess(EmbeddingSet(X), self.preprocess).data

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        data = self._prep(X)
        if self.preprocess == "standard":
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            std[std == 0] = 1.0
            self.scale_ = std
        result = lloyd(data, KMeansConfig(self.n_atoms, self.max_iter, self.tol, self.random_state))
        self.cluster_centers_ = result.centroids
        self.labels_ = result.labels
        self.inertia_ = result.sse
        self.n_iter_ = result.n_iter
        self.inertia_history_ = result.sse_history
        self.n_features_in_ = X.shape[1]
        return self

    def _transform_input(self, X):
        X = check_array(X, dtype=np.float64)
        if self.preprocess == "standard":
            return (X - self.mean_) / self.scale_
        if self.preprocess == "tanh":
            return np.tanh(X)
        return X

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return _assign(self._transform_input(X), self.cluster_centers_)[0]

    def transform(self, X):
        """Euclidean distance to every atom."""
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(_sq_dists(self._transform_input(X), self.cluster_centers_))

    @property
    def dictionary_(self):
        check_is_fitted(self, "cluster_centers_")
        return Dictionary(self.cluster_centers_)


class RetrieverDictionary(TransformerMixin, BaseEstimator):
    """The layer as a transformer over ``(n_samples, f, H, W)`` feature maps.

    ``fit`` builds the dictionary by k-means over every pixel's feature vector
    (or takes ``dictionary`` as given) and initialises the retriever. The
    transform applies the layer to each map; output shape equals input shape.
    """

    def __init__(self, n_atoms=512, kernel_size=5, lam=DEFAULT_LAMBDA, epsilon=1e-5,
                 dictionary=None, preprocess="none", freeze_dictionary=False, random_state=0):
        self.n_atoms = n_atoms
        self.kernel_size = kernel_size
        self.lam = lam
        self.epsilon = epsilon
        self.dictionary = dictionary
        self.preprocess = preprocess
        self.freeze_dictionary = freeze_dictionary
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_batch(X)
        if self.dictionary is None:
            emb = preprocess(pixel_embeddings(X), self.preprocess)
            cfg = KMeansConfig(self.n_atoms, seed=self.random_state)
            dictionary = Dictionary(lloyd(emb.data, cfg).centroids)
        else:
            dictionary = Dictionary(np.array(self.dictionary, dtype=np.float64))
        dictionary.trainable = not self.freeze_dictionary
        self.params_ = RDParams.init(dictionary, self.kernel_size, self.lam, self.epsilon,
                                     self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_batch(X, channels=self.n_features_in_)
        return np.stack([rd_transform(x, self.params_) for x in X])

    def compress(self, X, n_atoms, **distill_kwargs):
        """Return a new fitted transformer distilled to ``n_atoms`` atoms on ``X``."""
        check_is_fitted(self, "params_")
        X = check_batch(X, channels=self.n_features_in_)
        cfg = DistillConfig(n_atoms, **distill_kwargs)
        student = distill(self.params_, lambda x: x, X, cfg)
        out = RetrieverDictionary(**{**self.get_params(), "n_atoms": n_atoms,
                                     "dictionary": student.dictionary.data})
        out.params_ = student
        out.n_features_in_ = self.n_features_in_
        return out


class RDClassifier(ClassifierMixin, BaseEstimator):
    """Linear encoder, retriever-dictionary layer, average pool and linear head.

    ``X`` is ``(n_samples, f, H, W)``. The dictionary is initialised by
    k-means over the pixel features of ``X`` before training.
    """

    def __init__(self, n_atoms=32, kernel_size=3, lam=DEFAULT_LAMBDA, epochs=50, batch_size=16,
                 learning_rate=0.05, preprocess="none", train_backbone=True,
                 train_retriever=True, train_dictionary=True, random_state=0):
        self.n_atoms = n_atoms
        self.kernel_size = kernel_size
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.preprocess = preprocess
        self.train_backbone = train_backbone
        self.train_retriever = train_retriever
        self.train_dictionary = train_dictionary
        self.random_state = random_state

    def fit(self, X, y):
        X = check_batch(X)
        check_X_y(X.reshape(len(X), -1), y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        data = ToyDataset(X, y_idx, len(self.classes_))
        emb = preprocess(pixel_embeddings(X), self.preprocess)
        dictionary = Dictionary(lloyd(emb.data, KMeansConfig(self.n_atoms, seed=self.random_state)).centroids)
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.lam,
                          self.random_state, self.kernel_size, self.train_backbone,
                          self.train_retriever, self.train_dictionary)
        self.model_, self.history_ = train_model(cfg, dictionary, data)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_batch(X, channels=self.n_features_in_))

    def predict_proba(self, X):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]
