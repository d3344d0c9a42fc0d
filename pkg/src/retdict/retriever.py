"""Retriever core: pointwise coefficient generator followed by a depthwise
information exchanger, plus the fused single-convolution equivalent.

All maps are ``(channels, height, width)`` float64 arrays. Every convolution
here is stride 1 with zero padding ``k // 2`` so spatial shape is preserved.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_map, check_odd_kernel, check_positive_int
from .exceptions import ShapeError


@dataclass
class RetrieverWeights:
    """Bias-free weights of the two-stage retriever.

    Attributes
    ----------
    pointwise : ndarray of shape (n_atoms, n_features)
        Projection of each pixel's feature vector onto atom coefficients.
    depthwise : ndarray of shape (n_atoms, k, k)
        One spatial kernel per atom channel.
    """

    pointwise: np.ndarray
    depthwise: np.ndarray

    def __post_init__(self):
        self.pointwise = np.asarray(self.pointwise, dtype=np.float64)
        self.depthwise = np.asarray(self.depthwise, dtype=np.float64)
        if self.pointwise.ndim != 2:
            raise ShapeError(f"pointwise must be (N, f), got {self.pointwise.shape}")
        if self.depthwise.ndim != 3 or self.depthwise.shape[1] != self.depthwise.shape[2]:
            raise ShapeError(f"depthwise must be (N, k, k), got {self.depthwise.shape}")
        if self.depthwise.shape[0] != self.pointwise.shape[0]:
            raise ShapeError(
                f"pointwise has {self.pointwise.shape[0]} atoms but depthwise has "
                f"{self.depthwise.shape[0]}"
            )
        check_odd_kernel(self.depthwise.shape[1])

    @property
    def n_atoms(self):
        return self.pointwise.shape[0]

    @property
    def n_features(self):
        return self.pointwise.shape[1]

    @property
    def kernel_size(self):
        return self.depthwise.shape[1]

    @property
    def size(self):
        return self.pointwise.size + self.depthwise.size

    @classmethod
    def random(cls, n_features, n_atoms, kernel_size, random_state=None):
        """Gaussian fan-in scaled initialisation."""
        rng = np.random.default_rng(random_state)
        kernel_size = check_odd_kernel(kernel_size)
        pointwise = rng.standard_normal((n_atoms, n_features)) / np.sqrt(n_features)
        depthwise = rng.standard_normal((n_atoms, kernel_size, kernel_size)) / kernel_size
        return cls(pointwise, depthwise)

    def copy(self):
        return RetrieverWeights(self.pointwise.copy(), self.depthwise.copy())


@dataclass
class FusedKernel:
    """Dense ``(n_atoms, n_features, k, k)`` kernel equal to depthwise after pointwise."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[2] != self.data.shape[3]:
            raise ShapeError(f"fused kernel must be (N, f, k, k), got {self.data.shape}")
        check_odd_kernel(self.data.shape[2])


def _pad(y, k):
    p = k // 2
    if p == 0:
        return y
    return np.pad(y, ((0, 0), (p, p), (p, p)))


def _windows(y, k):
    """View of shape (C, H, W, k, k) over the zero-padded map."""
    return sliding_window_view(_pad(y, k), (k, k), axis=(1, 2))


def coefficient_generator(x, w):
    """Project every pixel's feature vector with ``w.pointwise``.

    Returns an ``(n_atoms, H, W)`` coarse coefficient map.
    """
    x = check_map(x, "x")
    if x.shape[0] != w.n_features:
        raise ShapeError(
            f"x has {x.shape[0]} channels but pointwise expects f={w.n_features}"
        )
    c, h, wd = x.shape
    return (w.pointwise @ x.reshape(c, h * wd)).reshape(w.n_atoms, h, wd)


def global_information_exchanger(y, w):
    """Per-channel k x k convolution of a coefficient map; channels never mix."""
    y = check_map(y, "y")
    if y.shape[0] != w.n_atoms:
        raise ShapeError(
            f"coefficient map has {y.shape[0]} atoms but depthwise expects N={w.n_atoms}"
        )
    return np.einsum("nhwab,nab->nhw", _windows(y, w.kernel_size), w.depthwise)


def retriever_core(x, w):
    """Atom coefficients ``E(G(x))``; no nonlinearity between the stages."""
    return global_information_exchanger(coefficient_generator(x, w), w)


def fuse_weights(w):
    """Collapse the two stages into one kernel: ``eq[c,i,m,n] = pw[c,i] * dw[c,m,n]``."""
    return FusedKernel(w.pointwise[:, :, None, None] * w.depthwise[:, None, :, :])


def fused_retriever(x, kernel):
    """Dense k x k convolution of ``x`` with a fused kernel."""
    n, f, k, _ = kernel.data.shape
    x = check_map(x, "x")
    if x.shape[0] != f:
        raise ShapeError(f"x has {x.shape[0]} channels but fused kernel expects f={f}")
    return np.einsum("ihwab,ciab->chw", _windows(x, k), kernel.data)


def param_count(mode, n_features, n_atoms, kernel_size):
    """Parameters of the split (``f*N + N*k^2``) or fused (``N*f*k^2``) retriever."""
    f = check_positive_int(n_features, "n_features")
    n = check_positive_int(n_atoms, "n_atoms")
    k = check_positive_int(kernel_size, "kernel_size")
    if mode == "split":
        return f * n + n * k * k
    if mode == "fused":
        return n * f * k * k
    raise ValueError(f"mode must be 'split' or 'fused', got {mode!r}")


def exchanger_backward(grad_out, y, w):
    """Gradients of the depthwise stage w.r.t. its input map and kernel."""
    k = w.kernel_size
    p = k // 2
    _, h, wd = y.shape
    d_depthwise = np.einsum("nhwab,nhw->nab", _windows(y, k), grad_out)
    grad_pad = np.zeros((y.shape[0], h + 2 * p, wd + 2 * p))
    for a in range(k):
        for b in range(k):
            grad_pad[:, a:a + h, b:b + wd] += w.depthwise[:, a, b, None, None] * grad_out
    return grad_pad[:, p:p + h, p:p + wd], d_depthwise


def generator_backward(grad_out, x, w):
    """Gradients of the pointwise stage w.r.t. its input map and projection."""
    c, h, wd = x.shape
    g = grad_out.reshape(w.n_atoms, h * wd)
    d_pointwise = g @ x.reshape(c, h * wd).T
    d_x = (w.pointwise.T @ g).reshape(c, h, wd)
    return d_x, d_pointwise
