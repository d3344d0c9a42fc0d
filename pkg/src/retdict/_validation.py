"""Input validation helpers shared by the functional core and estimators."""

import numpy as np

from .exceptions import ConfigurationError, NumericError, ShapeError


def check_map(x, name="x", channels=None, channel_name="channels"):
    """Validate a (channels, height, width) map and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be rank 3 (C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise ShapeError(
            f"{name} has {x.shape[0]} {channel_name}, expected {channels}"
        )
    if not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_batch(x, name="X", channels=None):
    """Validate a (batch, channels, height, width) stack of maps."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (B, C, H, W), got shape {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"{name} has {x.shape[1]} channels, expected {channels}")
    if not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_odd_kernel(k):
    k = check_positive_int(k, "kernel_size")
    if k % 2 == 0:
        raise ConfigurationError(f"kernel_size must be odd, got {k}")
    return k


def check_finite(arr, stage):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced at stage '{stage}'")
    return arr
