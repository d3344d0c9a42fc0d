"""The complete retriever-dictionary layer.

``z = lam * x + (1 - lam) * atom_mix(pono(E(G(x))), WN(D))``

The backward pass is written out by hand from cached intermediates, and
:func:`finite_difference_gradients` provides an independent central
difference oracle for it.
"""

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from ._validation import check_finite, check_map
from .exceptions import ConfigurationError, NumericError, ShapeError, StaleCacheError
from .normalization import (
    Dictionary,
    PonoParams,
    _row_norms,
    pono_backward,
    pono_forward,
    weight_normalize_backward,
)
from .retriever import (
    RetrieverWeights,
    coefficient_generator,
    exchanger_backward,
    generator_backward,
    global_information_exchanger,
)

DEFAULT_LAMBDA = 0.8


@dataclass
class RDParams:
    """Full state of one layer. ``lam`` is a fixed hyperparameter, never trained."""

    retriever: RetrieverWeights
    pono: PonoParams
    dictionary: Dictionary
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        r, d = self.retriever, self.dictionary
        if d.dim != r.n_features:
            raise ShapeError(
                f"dictionary dim {d.dim} != retriever input features {r.n_features}"
            )
        if d.atoms != r.n_atoms:
            raise ShapeError(f"dictionary has {d.atoms} atoms, retriever has {r.n_atoms}")
        if self.pono.gamma.size != r.n_atoms:
            raise ShapeError(
                f"gamma/beta length {self.pono.gamma.size} != atom count {r.n_atoms}"
            )

    @property
    def freeze_dictionary(self):
        return not self.dictionary.trainable

    @freeze_dictionary.setter
    def freeze_dictionary(self, value):
        self.dictionary.trainable = not value

    @property
    def n_features(self):
        return self.retriever.n_features

    @property
    def n_atoms(self):
        return self.retriever.n_atoms

    @property
    def kernel_size(self):
        return self.retriever.kernel_size

    @classmethod
    def init(cls, dictionary, kernel_size=3, lam=DEFAULT_LAMBDA, epsilon=1e-5,
             random_state=None):
        """Fresh retriever and identity PONO affine around an existing dictionary."""
        if not isinstance(dictionary, Dictionary):
            dictionary = Dictionary(dictionary)
        retriever = RetrieverWeights.random(
            dictionary.dim, dictionary.atoms, kernel_size, random_state
        )
        return cls(retriever, PonoParams.identity(dictionary.atoms, epsilon), dictionary, lam)

    def arrays(self):
        """Trainable arrays by name, in serialisation order."""
        return {
            "pointwise": self.retriever.pointwise,
            "depthwise": self.retriever.depthwise,
            "gamma": self.pono.gamma,
            "beta": self.pono.beta,
            "dictionary": self.dictionary.data,
        }

    def digest(self):
        h = hashlib.blake2b(digest_size=16)
        for arr in self.arrays().values():
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.array([self.lam, self.pono.epsilon]).tobytes())
        return h.hexdigest()

    def copy(self):
        return RDParams(self.retriever.copy(), self.pono.copy(), self.dictionary.copy(), self.lam)


@dataclass
class RDGradients:
    d_pointwise: np.ndarray
    d_depthwise: np.ndarray
    d_gamma: np.ndarray
    d_beta: np.ndarray
    d_dictionary: np.ndarray
    d_input: np.ndarray

    def __iadd__(self, other):
        for f in fields(self):
            getattr(self, f.name).__iadd__(getattr(other, f.name))
        return self

    def as_dict(self):
        return {f.name[2:]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros_like(cls, params, input_shape):
        return cls(
            np.zeros_like(params.retriever.pointwise),
            np.zeros_like(params.retriever.depthwise),
            np.zeros_like(params.pono.gamma),
            np.zeros_like(params.pono.beta),
            np.zeros_like(params.dictionary.data),
            np.zeros(input_shape),
        )


@dataclass
class RDCache:
    x: np.ndarray
    coarse: np.ndarray
    xhat: np.ndarray
    std: np.ndarray
    cprime: np.ndarray
    unit_atoms: np.ndarray
    atom_norms: np.ndarray
    digest: str = field(repr=False)


def atom_mix(cprime, d):
    """Weighted sum of atoms at every pixel: ``out[j] = sum_i cprime[i] * d[i, j]``.

    Equivalent to a 1x1 bias-free convolution with the atoms as filters.
    ``d`` is expected to be weight-normalized already.
    """
    cprime = check_map(cprime, "cprime")
    data = d.data if isinstance(d, Dictionary) else np.asarray(d, dtype=np.float64)
    if cprime.shape[0] != data.shape[0]:
        raise ShapeError(
            f"coefficient map has {cprime.shape[0]} atoms but dictionary has {data.shape[0]}"
        )
    n, h, w = cprime.shape
    return (data.T @ cprime.reshape(n, h * w)).reshape(data.shape[1], h, w)


def rd_forward(x, params):
    """Run the layer on one ``(f, H, W)`` map. Returns ``(z, cache)``."""
    x = check_map(x, "x", channels=params.n_features, channel_name="feature channels")
    coarse = check_finite(coefficient_generator(x, params.retriever), "coefficient_generator")
    c = check_finite(global_information_exchanger(coarse, params.retriever), "global_information_exchanger")
    cprime, xhat, std = pono_forward(c, params.pono)
    check_finite(cprime, "pono")
    norms = _row_norms(params.dictionary.data)
    unit = params.dictionary.data / norms[:, None]
    mixed = check_finite(atom_mix(cprime, unit), "atom_mix")
    lam = params.lam
    if lam == 1.0:
        z = x.copy()
    elif lam == 0.0:
        z = mixed
    else:
        z = lam * x + (1.0 - lam) * mixed
    check_finite(z, "residual")
    cache = RDCache(x, coarse, xhat, std, cprime, unit, norms, params.digest())
    return z, cache


def rd_transform(x, params):
    """Forward pass without retaining a cache."""
    return rd_forward(x, params)[0]


def rd_backward(grad_z, cache, params):
    """Analytic gradients of a scalar loss given ``dL/dz``."""
    if cache.digest != params.digest():
        raise StaleCacheError("parameters were modified after rd_forward produced this cache")
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != cache.x.shape:
        raise ShapeError(f"grad_z has shape {grad_z.shape}, expected {cache.x.shape}")
    lam = params.lam
    r = params.retriever
    n, h, w = cache.cprime.shape

    g_mix = (1.0 - lam) * grad_z
    g_flat = g_mix.reshape(-1, h * w)
    cp_flat = cache.cprime.reshape(n, h * w)
    g_cprime = (cache.unit_atoms @ g_flat).reshape(n, h, w)
    if params.freeze_dictionary:
        d_dictionary = np.zeros_like(params.dictionary.data)
    else:
        g_unit = cp_flat @ g_flat.T
        d_dictionary = weight_normalize_backward(g_unit, cache.unit_atoms, cache.atom_norms)

    g_c, d_gamma, d_beta = pono_backward(g_cprime, cache.xhat, cache.std, params.pono)
    g_coarse, d_depthwise = exchanger_backward(g_c, cache.coarse, r)
    g_x, d_pointwise = generator_backward(g_coarse, cache.x, r)
    d_input = lam * grad_z + g_x
    return RDGradients(d_pointwise, d_depthwise, d_gamma, d_beta, d_dictionary, d_input)


def finite_difference_gradients(x, params, loss_fn, step=1e-5):
    """Central-difference gradients of ``loss_fn(rd_forward(x, params)[0])``.

    Every scalar parameter and input element is perturbed in turn; parameters
    are restored afterwards. The dictionary gradient is zero when frozen.
    """
    if not step > 0:
        raise ConfigurationError(f"step must be > 0, got {step}")
    x = check_map(x, "x", channels=params.n_features).copy()

    def loss():
        value = float(loss_fn(rd_forward(x, params)[0]))
        if not np.isfinite(value):
            raise NumericError("loss_fn returned a non-finite value")
        return value

    def central(arr):
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        return grad

    arrays = params.arrays()
    grads = {name: central(arr) for name, arr in arrays.items() if name != "dictionary"}
    if params.freeze_dictionary:
        grads["dictionary"] = np.zeros_like(arrays["dictionary"])
    else:
        grads["dictionary"] = central(arrays["dictionary"])
    return RDGradients(
        grads["pointwise"], grads["depthwise"], grads["gamma"], grads["beta"],
        grads["dictionary"], central(x),
    )


def gradient_relative_errors(analytic, numeric):
    """Per-class ``max|a - b| / max(max|a|, max|b|)`` between two gradient sets."""
    out = {}
    for name, a in analytic.as_dict().items():
        b = numeric.as_dict()[name]
        scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
        diff = np.abs(a - b).max(initial=0.0)
        out[name] = 0.0 if scale == 0.0 else diff / scale
    return out


def sgd_step(params, grads, lr, train_retriever=True, train_dictionary=True):
    """In-place SGD update; frozen parts are left untouched bit for bit."""
    if train_retriever:
        params.retriever.pointwise -= lr * grads.d_pointwise
        params.retriever.depthwise -= lr * grads.d_depthwise
        params.pono.gamma -= lr * grads.d_gamma
        params.pono.beta -= lr * grads.d_beta
    if train_dictionary and not params.freeze_dictionary:
        params.dictionary.data -= lr * grads.d_dictionary
