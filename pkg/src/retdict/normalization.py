"""Positional normalization of coefficient maps and unit-norm projection of
dictionary atoms, each with its backward pass."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_map
from .exceptions import ConfigurationError, DegenerateAtomError, ShapeError

ATOM_NORM_FLOOR = 1e-12


@dataclass
class PonoParams:
    """Per-atom affine of positional normalization."""

    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).ravel()
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel()
        if self.gamma.shape != self.beta.shape:
            raise ShapeError(
                f"gamma has length {self.gamma.size} but beta has {self.beta.size}"
            )
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")

    @classmethod
    def identity(cls, n_atoms, epsilon=1e-5):
        return cls(np.ones(n_atoms), np.zeros(n_atoms), epsilon)

    def copy(self):
        return PonoParams(self.gamma.copy(), self.beta.copy(), self.epsilon)


@dataclass
class Dictionary:
    """An ordered set of atoms, one per row of ``data``.

    ``trainable`` is False when the dictionary is frozen during training.
    Zero atoms are allowed here (a k-means centroid can sit at the origin)
    and rejected when the dictionary is weight-normalized.
    """

    data: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or 0 in self.data.shape:
            raise ShapeError(f"dictionary must be a non-empty (N, f) matrix, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("dictionary contains non-finite values")

    @property
    def atoms(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def copy(self):
        return Dictionary(self.data.copy(), self.trainable)


def _pono_stats(c, epsilon):
    mu = c.mean(axis=0)
    centered = c - mu
    var = (centered * centered).mean(axis=0)
    std = np.sqrt(var + epsilon)
    return centered / std, std


def pono(c, params):
    """Standardise the atom coefficients at each pixel, then apply ``gamma``/``beta``.

    Mean and population variance are taken over the atom axis independently at
    every spatial position.
    """
    c = check_map(c, "c")
    if c.shape[0] != params.gamma.size:
        raise ShapeError(
            f"coefficient map has {c.shape[0]} atoms but gamma/beta have length "
            f"{params.gamma.size}"
        )
    xhat, _ = _pono_stats(c, params.epsilon)
    return xhat * params.gamma[:, None, None] + params.beta[:, None, None]


def pono_forward(c, params):
    """Like :func:`pono` but also returns ``(xhat, std)`` for the backward pass."""
    xhat, std = _pono_stats(c, params.epsilon)
    out = xhat * params.gamma[:, None, None] + params.beta[:, None, None]
    return out, xhat, std


def pono_backward(grad_out, xhat, std, params):
    """Return ``(d_c, d_gamma, d_beta)``."""
    d_gamma = (grad_out * xhat).sum(axis=(1, 2))
    d_beta = grad_out.sum(axis=(1, 2))
    g = grad_out * params.gamma[:, None, None]
    d_c = (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0)) / std
    return d_c, d_gamma, d_beta


def _row_norms(data):
    norms = np.sqrt((data * data).sum(axis=1))
    bad = np.flatnonzero(norms < ATOM_NORM_FLOOR)
    if bad.size:
        raise DegenerateAtomError(int(bad[0]), float(norms[bad[0]]))
    return norms


def weight_normalize(d):
    """Return a copy of ``d`` with every atom scaled to unit L2 norm."""
    norms = _row_norms(d.data)
    return Dictionary(d.data / norms[:, None], d.trainable)


def weight_normalize_backward(grad_unit, unit, norms):
    """Pull a gradient on the unit atoms back through the projection.

    Per atom this applies ``(I - u u^T) / |a|``.
    """
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - unit * radial) / norms[:, None]
