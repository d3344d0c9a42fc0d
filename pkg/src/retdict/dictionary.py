"""Initial dictionary construction from encoder embeddings."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigurationError, NumericError
from .normalization import Dictionary

PREPROCESS_MODES = ("none", "standard", "tanh")


@dataclass
class EmbeddingSet:
    """``count`` embeddings of dimension ``dim``, one per row."""

    data: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"embeddings must be (count, dim), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise NumericError("embeddings contain non-finite values")

    @property
    def count(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


@dataclass
class KMeansConfig:
    clusters: int
    max_iters: int = 300
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 1:
            raise ConfigurationError(f"clusters must be positive, got {self.clusters}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be positive, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be > 0, got {self.tol}")


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    labels: np.ndarray
    sse: float
    n_iter: int
    sse_history: list


def preprocess(e, mode="none"):
    """Return a new :class:`EmbeddingSet` after ``none``, ``standard`` or ``tanh``.

    ``standard`` centres each dimension and divides by its population standard
    deviation; zero-variance dimensions are only centred.
    """
    if e.count == 0:
        raise ValueError("cannot preprocess an empty embedding set")
    if mode == "none":
        out = e.data.copy()
    elif mode == "standard":
        mean = e.data.mean(axis=0)
        std = e.data.std(axis=0)
        std[std == 0] = 1.0
        out = (e.data - mean) / std
    elif mode == "tanh":
        out = np.tanh(e.data)
    else:
        raise ConfigurationError(f"unknown preprocess mode {mode!r}; use one of {PREPROCESS_MODES}")
    return EmbeddingSet(out, e.source_tag)


def _sq_dists(data, centroids):
    d = (
        (data * data).sum(axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _canonical_order(data):
    # seeding walks the points in lexicographic value order so that the chosen
    # seeds do not depend on row order
    return np.lexsort(data.T[::-1])


def kmeans_plusplus(data, n_clusters, rng):
    """Greedy D^2-weighted seeding. Returns an ``(n_clusters, dim)`` array.

    Each step draws ``2 + log(n_clusters)`` candidates and keeps the one that
    lowers the potential most, as in scikit-learn.
    """
    pts = data[_canonical_order(data)]
    n_local = 2 + int(np.log(n_clusters))
    centroids = np.empty((n_clusters, pts.shape[1]))
    centroids[0] = pts[rng.integers(pts.shape[0])]
    closest = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, n_clusters):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than clusters; duplicates are repaired later
            cand = rng.integers(pts.shape[0], size=1)
        else:
            cdf = np.cumsum(closest)
            cand = np.searchsorted(cdf, rng.random(n_local) * cdf[-1], side="right")
            cand = np.minimum(cand, pts.shape[0] - 1)
        dists = np.minimum(closest[None, :], _sq_dists(pts[cand], pts))
        best = int(dists.sum(axis=1).argmin())
        centroids[j] = pts[cand[best]]
        closest = dists[best]
    return centroids


def _assign(data, centroids):
    d = _sq_dists(data, centroids)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(data.shape[0]), labels]


def _sse(data, centroids, labels):
    diff = data - centroids[labels]
    return float((diff * diff).sum())


def lloyd(data, cfg, init=None):
    """Lloyd iterations from k-means++ seeds (or ``init``).

    Empty clusters take the point farthest from its current centroid. Stops
    after ``cfg.max_iters`` iterations or when no centroid moves more than
    ``cfg.tol``. ``sse_history`` holds the objective after each iteration.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if cfg.clusters > n:
        raise ValueError(f"clusters={cfg.clusters} exceeds embedding count {n}")
    rng = np.random.default_rng(cfg.seed)
    centroids = kmeans_plusplus(data, cfg.clusters, rng) if init is None else np.array(init, dtype=np.float64)

    history = []
    n_iter = 0
    for n_iter in range(1, cfg.max_iters + 1):
        labels, dist = _assign(data, centroids)
        counts = np.bincount(labels, minlength=cfg.clusters)
        taken = set()
        for j in np.flatnonzero(counts == 0):
            order = np.argsort(-dist, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken and counts[labels[i]] > 1)
            taken.add(far)
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
            dist[far] = 0.0
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, data)
        new = sums / counts[:, None]
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        history.append(_sse(data, centroids, labels))
        if shift < cfg.tol:
            break
    labels, _ = _assign(data, centroids)
    return KMeansResult(centroids, labels, _sse(data, centroids, labels), n_iter, history)


def kmeans(e, cfg):
    """Cluster ``e`` and return the centroids as an (unnormalised) dictionary."""
    return Dictionary(lloyd(e.data, cfg).centroids)


def random_dictionary(n, f, seed=None):
    """``n`` atoms drawn i.i.d. from a standard normal."""
    if n < 1 or f < 1:
        raise ConfigurationError(f"n and f must be positive, got n={n}, f={f}")
    return Dictionary(np.random.default_rng(seed).standard_normal((n, f)))
