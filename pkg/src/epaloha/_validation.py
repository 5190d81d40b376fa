"""Small argument checkers shared by the analytic, simulation and PHY code."""

import math
import numbers

import numpy as np


def check_int(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if math.isnan(value):
        raise ValueError(f"{name} must not be NaN")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_probability(value, name):
    return check_real(value, name, 0.0, 1.0)


def check_signals(Y, n_samples):
    """Coerce received signals to a complex 2-D array of shape (n_obs, n_samples).

    sklearn's ``check_array`` rejects complex input, hence this helper.
    """
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[np.newaxis, :]
    if Y.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got ndim={Y.ndim}")
    if Y.shape[1] != n_samples:
        raise ValueError(
            f"each observation must have {n_samples} samples, got {Y.shape[1]}"
        )
    Y = Y.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(Y)):
        raise ValueError("observations contain NaN or infinity")
    return Y


def is_prime(n):
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    return all(n % d for d in range(3, math.isqrt(n) + 1, 2))
