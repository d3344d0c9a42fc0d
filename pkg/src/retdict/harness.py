"""Desk-scale training harness: a synthetic classification task, a small
classifier with the layer at the encoder output, and the analysis helpers."""

import hashlib
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import check_map
from .exceptions import ConfigurationError, DegenerateError, NumericError
from .layer import DEFAULT_LAMBDA, RDParams, rd_backward, rd_forward, rd_transform, sgd_step
from .normalization import weight_normalize
from .retriever import RetrieverWeights, fuse_weights

logger = logging.getLogger(__name__)


@dataclass
class ToyDataset:
    """Feature maps ``X`` of shape ``(n, f, H, W)`` with integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    split_tag: str = "train"

    def __len__(self):
        return len(self.y)

    @property
    def samples(self):
        return list(zip(self.X, self.y))


def generate_toy_task(seed=0, num_classes=4, samples_per_class=50, f=16, H=8, W=8,
                      noise=0.5):
    """Class prototypes broadcast over an ``H x W`` grid plus Gaussian noise.

    Each class is split 80/20 into train/val; both splits are shuffled. The
    prototypes are recoverable with :func:`toy_prototypes` and the same seed.
    """
    for name, v in [("num_classes", num_classes), ("samples_per_class", samples_per_class),
                    ("f", f), ("H", H), ("W", W)]:
        if v < 1:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((num_classes, f))
    n_train = int(round(0.8 * samples_per_class))
    parts = {"train": ([], []), "val": ([], [])}
    for label in range(num_classes):
        maps = protos[label][None, :, None, None] + noise * rng.standard_normal(
            (samples_per_class, f, H, W)
        )
        for split, chunk in (("train", maps[:n_train]), ("val", maps[n_train:])):
            parts[split][0].append(chunk)
            parts[split][1].append(np.full(len(chunk), label))
    out = []
    for split in ("train", "val"):
        X = np.concatenate(parts[split][0])
        y = np.concatenate(parts[split][1])
        order = rng.permutation(len(y))
        out.append(ToyDataset(X[order], y[order], num_classes, split))
    return tuple(out)


def toy_prototypes(seed=0, num_classes=4, f=16):
    return np.random.default_rng(seed).standard_normal((num_classes, f))


def nearest_prototype_accuracy(data, prototypes):
    """Accuracy of assigning each map's spatial mean to the nearest prototype."""
    means = data.X.mean(axis=(2, 3))
    d = ((means[:, None, :] - prototypes[None]) ** 2).sum(axis=2)
    return float((d.argmin(axis=1) == data.y).mean())


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.05
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    kernel_size: int = 3
    train_backbone: bool = True
    train_retriever: bool = True
    train_dictionary: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class RDModel:
    """Linear 1x1 encoder -> layer -> global average pool -> linear head."""

    encoder: np.ndarray
    rd: RDParams
    head_weight: np.ndarray
    head_bias: np.ndarray
    train_backbone: bool = True
    train_retriever: bool = True

    @property
    def n_features(self):
        return self.encoder.shape[0]

    @property
    def num_classes(self):
        return self.head_weight.shape[0]

    @property
    def train_dictionary(self):
        return not self.rd.freeze_dictionary

    @classmethod
    def init(cls, dictionary, num_classes, kernel_size=3, lam=DEFAULT_LAMBDA, seed=0):
        rng = np.random.default_rng(seed)
        f = dictionary.dim
        rd = RDParams.init(dictionary.copy(), kernel_size, lam, random_state=rng)
        head = 0.01 * rng.standard_normal((num_classes, f))
        return cls(np.eye(f), rd, head, np.zeros(num_classes))

    def copy(self):
        return RDModel(self.encoder.copy(), self.rd.copy(), self.head_weight.copy(),
                       self.head_bias.copy(), self.train_backbone, self.train_retriever)

    def encode(self, x):
        x = check_map(x, "x", channels=self.n_features)
        c, h, w = x.shape
        return (self.encoder @ x.reshape(c, h * w)).reshape(c, h, w)

    def features(self, x):
        return rd_transform(self.encode(x), self.rd)

    def decision_function(self, X):
        pooled = np.stack([self.features(x).mean(axis=(1, 2)) for x in X])
        return pooled @ self.head_weight.T + self.head_bias

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def evaluate(model, data):
    """Mean cross-entropy and accuracy of ``model`` on ``data``."""
    logp = _log_softmax(model.decision_function(data.X))
    loss = float(-logp[np.arange(len(data)), data.y].mean())
    acc = float((logp.argmax(axis=1) == data.y).mean())
    return loss, acc


class MetricRecord(NamedTuple):
    epoch: int
    split: str
    loss: float
    acc: float

    def format(self):
        return f"epoch={self.epoch} split={self.split} loss={float(self.loss)!r} acc={float(self.acc)!r}"


def _batch_step(model, X, y, lr):
    """One SGD step on a mini-batch; returns the mean batch loss."""
    f = model.n_features
    b = len(y)
    encoded, caches, pooled = [], [], []
    for x in X:
        xe = model.encode(x)
        z, cache = rd_forward(xe, model.rd)
        encoded.append(xe)
        caches.append(cache)
        pooled.append(z.mean(axis=(1, 2)))
    pooled = np.stack(pooled)
    logits = pooled @ model.head_weight.T + model.head_bias
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(b), y].mean())
    g_logits = np.exp(logp)
    g_logits[np.arange(b), y] -= 1.0
    g_logits /= b
    d_head_w = g_logits.T @ pooled
    d_head_b = g_logits.sum(axis=0)
    g_pooled = g_logits @ model.head_weight

    grads = None
    d_encoder = np.zeros_like(model.encoder)
    for xi, xe, cache, gp in zip(X, encoded, caches, g_pooled):
        _, h, w = xe.shape
        g_z = np.broadcast_to((gp / (h * w))[:, None, None], xe.shape)
        g = rd_backward(g_z, cache, model.rd)
        if model.train_backbone:
            d_encoder += g.d_input.reshape(f, -1) @ xi.reshape(f, -1).T
        if grads is None:
            grads = g
        else:
            grads += g

    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    model.head_weight -= lr * d_head_w
    model.head_bias -= lr * d_head_b
    if model.train_backbone:
        model.encoder -= lr * d_encoder
    sgd_step(model.rd, grads, lr, train_retriever=model.train_retriever)
    return loss


def train_model(cfg, dict0, data, val=None, model=None):
    """Train the classifier with SGD on cross-entropy.

    Returns ``(model, records)`` where ``records`` holds one train and one val
    :class:`MetricRecord` per epoch, starting with epoch 0 (the initial model).
    ``val`` defaults to ``data``.
    """
    if dict0.dim != data.X.shape[1]:
        raise ConfigurationError(
            f"dictionary dim {dict0.dim} != input feature channels {data.X.shape[1]}"
        )
    if model is None:
        model = RDModel.init(dict0, data.num_classes, cfg.kernel_size, cfg.lam, cfg.seed)
    model.train_backbone = cfg.train_backbone
    model.train_retriever = cfg.train_retriever
    model.rd.freeze_dictionary = not cfg.train_dictionary
    val = data if val is None else val

    records = []

    def log(epoch, train_loss):
        _, train_acc = evaluate(model, data)
        val_loss, val_acc = evaluate(model, val)
        records.append(MetricRecord(epoch, "train", train_loss, train_acc))
        records.append(MetricRecord(epoch, "val", val_loss, val_acc))
        logger.info("epoch %d train_loss %.4f val_acc %.4f", epoch, train_loss, val_acc)

    log(0, evaluate(model, data)[0])
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                losses.append(_batch_step(model, data.X[idx], data.y[idx], cfg.learning_rate))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
        log(epoch, float(np.mean(losses)))
    return model, records


def taylor_update_check(w, d_pointwise, d_depthwise, etas):
    """Size of the second-order term dropped by the linearised fused update.

    For each learning rate ``eta`` the discrepancy between the fused kernel of
    the SGD-updated weights and its first-order expansion is returned as
    ``(eta, max_abs)`` rows. The expansion is evaluated as the mixed second
    difference of :func:`fuse_weights`, which is exactly zero whenever one of
    the two gradients vanishes.
    """
    g_pw = np.asarray(d_pointwise, dtype=np.float64)
    g_dw = np.asarray(d_depthwise, dtype=np.float64)
    rows = []
    for eta in etas:
        if eta < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {eta}")
        pw_new = w.pointwise - eta * g_pw
        dw_new = w.depthwise - eta * g_dw
        both = fuse_weights(RetrieverWeights(pw_new, dw_new)).data
        only_dw = fuse_weights(RetrieverWeights(w.pointwise, dw_new)).data
        only_pw = fuse_weights(RetrieverWeights(pw_new, w.depthwise)).data
        base = fuse_weights(w).data
        residual = (both - only_dw) - (only_pw - base)
        rows.append((float(eta), float(np.abs(residual).max())))
    return rows


class CorrelationRow(NamedTuple):
    atom: int
    correlation: float
    coefficient: float


def correlation_coefficient_table(x_region, params):
    """Per-atom cosine with the region's mean feature and mean retrieved coefficient.

    Atoms are unit-normalized before comparison; coefficients are the
    normalized (post-PONO) values averaged over the region.
    """
    x_region = check_map(x_region, "x_region", channels=params.n_features)
    mean_feat = x_region.mean(axis=(1, 2))
    norm = np.linalg.norm(mean_feat)
    if norm < 1e-12:
        raise DegenerateError("spatially averaged input feature has zero norm")
    unit = weight_normalize(params.dictionary).data
    corr = np.clip(unit @ mean_feat / norm, -1.0, 1.0)
    _, cache = rd_forward(x_region, params)
    coef = cache.cprime.mean(axis=(1, 2))
    return [CorrelationRow(i, float(corr[i]), float(coef[i])) for i in range(params.n_atoms)]


def model_digests(model):
    """Per-component content hashes, used to verify freeze contracts."""

    def h(*arrays):
        m = hashlib.sha256()
        for a in arrays:
            m.update(np.ascontiguousarray(a).tobytes())
        return m.hexdigest()

    return {
        "encoder": h(model.encoder),
        "pointwise": h(model.rd.retriever.pointwise),
        "depthwise": h(model.rd.retriever.depthwise),
        "gamma": h(model.rd.pono.gamma),
        "beta": h(model.rd.pono.beta),
        "dictionary": h(model.rd.dictionary.data),
        "head": h(model.head_weight, model.head_bias),
    }
