"""Contrastive distillation of a trained layer into one with fewer atoms.

The teacher layer and the backbone are frozen; only the student's retriever,
PONO affine and dictionary are updated.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ._validation import check_batch
from .exceptions import ConfigurationError, DegenerateError, NumericError, ShapeError
from .layer import RDParams, rd_backward, rd_forward, rd_transform, sgd_step
from .normalization import Dictionary, PonoParams
from .retriever import RetrieverWeights

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.07


@dataclass
class DistillConfig:
    student_atoms: int
    tau: float = DEFAULT_TAU
    epochs: int = 30
    learning_rate: float = 0.003
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.student_atoms < 1:
            raise ConfigurationError(f"student_atoms must be >= 1, got {self.student_atoms}")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")


def subset_indices(n_atoms, n, seed=None):
    """``n`` distinct atom indices drawn uniformly without replacement."""
    if n > n_atoms:
        raise ValueError(f"cannot select {n} atoms from a dictionary of {n_atoms}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return np.random.default_rng(seed).choice(n_atoms, size=n, replace=False)


def select_initial_subset(d, n, seed=None):
    """Random sample of ``n`` atoms of ``d`` (a new dictionary)."""
    return Dictionary(d.data[subset_indices(d.atoms, n, seed)], d.trainable)


def init_student(teacher, n, seed=None):
    """Student layer built from a subset of the teacher's atoms.

    The retriever rows, PONO affine and atoms of the selected indices are
    copied so the student starts from the teacher's own retrieval behaviour.
    """
    idx = subset_indices(teacher.n_atoms, n, seed)
    r = teacher.retriever
    return RDParams(
        RetrieverWeights(r.pointwise[idx].copy(), r.depthwise[idx].copy()),
        PonoParams(teacher.pono.gamma[idx].copy(), teacher.pono.beta[idx].copy(), teacher.pono.epsilon),
        Dictionary(teacher.dictionary.data[idx].copy()),
        teacher.lam,
    )


def _flatten_positions(z):
    b, f, h, w = z.shape
    return z.transpose(0, 2, 3, 1).reshape(b * h * w, f)


def _unit_rows(v, shape, side):
    norms = np.sqrt((v * v).sum(axis=1))
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        i, hh, ww = np.unravel_index(bad[0], (shape[0], shape[2], shape[3]))
        raise DegenerateError(
            f"{side} feature vector at (i={i}, h={hh}, w={ww}) has zero norm"
        )
    return v / norms[:, None], norms


def _contrastive(student, teacher, tau, need_grad):
    student = check_batch(student, "student")
    teacher = check_batch(teacher, "teacher")
    if student.shape != teacher.shape:
        raise ShapeError(f"student shape {student.shape} != teacher shape {teacher.shape}")
    if not tau > 0:
        raise ConfigurationError(f"tau must be > 0, got {tau}")
    s, s_norm = _unit_rows(_flatten_positions(student), student.shape, "student")
    t, _ = _unit_rows(_flatten_positions(teacher), teacher.shape, "teacher")
    logits = (s @ t.T) / tau
    per_position = logsumexp(logits, axis=1) - np.diag(logits)
    loss = float(per_position.mean())
    if not need_grad:
        return loss, None
    p = logits.shape[0]
    g_logits = softmax(logits, axis=1)
    g_logits[np.diag_indices(p)] -= 1.0
    g_logits /= p
    g_s = (g_logits @ t) / tau
    g_raw = (g_s - s * (g_s * s).sum(axis=1, keepdims=True)) / s_norm[:, None]
    b, f, h, w = student.shape
    return loss, g_raw.reshape(b, h, w, f).transpose(0, 3, 1, 2)


def contrastive_loss(student, teacher, tau=DEFAULT_TAU):
    """Mean InfoNCE loss over every (batch, row, column) position.

    ``student`` and ``teacher`` are ``(B, f, H, W)``. The positive for a student
    position is the teacher vector at the same batch index and position; the
    denominator runs over every teacher position in the batch, positive
    included. Similarity is cosine.
    """
    return _contrastive(student, teacher, tau, need_grad=False)[0]


def contrastive_loss_and_grad(student, teacher, tau=DEFAULT_TAU):
    """Loss and its gradient w.r.t. ``student``."""
    return _contrastive(student, teacher, tau, need_grad=True)


def mean_output_cosine(student, teacher, features):
    """Mean per-position cosine between student and teacher layer outputs."""
    total, count = 0.0, 0
    for x in features:
        zs = rd_transform(x, student).reshape(student.n_features, -1)
        zt = rd_transform(x, teacher).reshape(teacher.n_features, -1)
        cos = (zs * zt).sum(axis=0) / (
            np.linalg.norm(zs, axis=0) * np.linalg.norm(zt, axis=0)
        )
        total += cos.sum()
        count += cos.size
    return total / count


def distill(teacher, backbone_fn, data, cfg, student=None, callback=None):
    """Train a student layer with ``cfg.student_atoms`` atoms to mimic ``teacher``.

    Parameters
    ----------
    teacher : RDParams
        Trained layer; never modified.
    backbone_fn : callable
        Frozen feature extractor mapping one raw sample to an ``(f, H, W)`` map.
    data : sequence of raw samples
    cfg : DistillConfig
    student : RDParams, optional
        Starting point; by default :func:`init_student` with ``cfg.seed``.
    callback : callable, optional
        Called as ``callback(epoch, student, mean_loss)`` after every epoch.
    """
    if cfg.student_atoms > teacher.n_atoms:
        raise ValueError(
            f"student_atoms={cfg.student_atoms} exceeds teacher atoms {teacher.n_atoms}"
        )
    if student is None:
        student = init_student(teacher, cfg.student_atoms, cfg.seed)
    else:
        student = student.copy()
    student.freeze_dictionary = False

    # backbone and teacher are frozen, so their outputs are fixed for the run
    feats = np.stack([np.asarray(backbone_fn(sample), dtype=np.float64) for sample in data])
    targets = np.stack([rd_transform(x, teacher) for x in feats])

    rng = np.random.default_rng(cfg.seed)
    n = feats.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            outs, caches = zip(*(rd_forward(feats[i], student) for i in idx))
            loss, g = contrastive_loss_and_grad(np.stack(outs), targets[idx], cfg.tau)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite distillation loss at epoch {epoch}, batch {b}")
            losses.append(loss)
            grads = rd_backward(g[0], caches[0], student)
            for gi, cache in zip(g[1:], caches[1:]):
                grads += rd_backward(gi, cache, student)
            sgd_step(student, grads, cfg.learning_rate)
        mean = float(np.mean(losses)) if losses else float("nan")
        logger.debug("distill epoch %d loss %.6f", epoch, mean)
        if callback is not None:
            callback(epoch, student, mean)
    return student

