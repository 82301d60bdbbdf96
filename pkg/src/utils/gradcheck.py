"""
Finite-Difference Utility
Central differences and the relative error used by every gradient check
"""

from typing import Callable

import numpy as np
from numpy.typing import NDArray

DEFAULT_STEP = 1e-5
ERROR_FLOOR = 1e-8


def numeric_gradient(func: Callable[[NDArray[np.float64]], float], point,
                     step: float = DEFAULT_STEP) -> NDArray[np.float64]:
    """
    Central-difference gradient of a scalar function

    Args:
        func: Scalar function of one array argument
        point: Array at which to differentiate; never modified
        step: Perturbation per coordinate

    Returns:
        Array of the same shape as point
    """
    base = np.array(point, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = func(base)
        flat[i] = original - step
        lower = func(base)
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-8)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric)) / scale)
