"""One-dimensional C^2 kernels with exact partial derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateSampleError, ParameterDomainError

Pairwise = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Kernel:
    """A positive-definite kernel ``K(x, y)`` and its partials.

    ``d1 = dK/dx``, ``d2 = dK/dy`` and ``d12 = d^2K/dxdy``.  All four
    evaluators broadcast over their arguments.  Other kernel families can
    be plugged in by constructing a ``Kernel`` with their own evaluators.
    """

    family: str
    bandwidth: float
    value: Pairwise
    d1: Pairwise
    d2: Pairwise
    d12: Pairwise

    def gram(self, x, y=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = x if y is None else np.asarray(y, dtype=float)
        return self.value(x[:, None], y[None, :])


def gaussian_kernel(bandwidth: float) -> Kernel:
    """Gaussian kernel ``exp(-(x - y)^2 / (2 sigma^2))``."""
    try:
        s = float(bandwidth)
    except (TypeError, ValueError):
        raise ParameterDomainError(f"bandwidth must be a number, got {bandwidth!r}") from None
    if not (s > 0 and math.isfinite(s)):
        raise ParameterDomainError(f"bandwidth must be positive and finite, got {bandwidth!r}")
    s2 = s * s

    def value(x, y):
        r = np.subtract(x, y, dtype=float)
        return np.exp(-(r * r) / (2.0 * s2))

    def d1(x, y):
        r = np.subtract(x, y, dtype=float)
        return -(r / s2) * np.exp(-(r * r) / (2.0 * s2))

    def d2(x, y):
        r = np.subtract(x, y, dtype=float)
        return (r / s2) * np.exp(-(r * r) / (2.0 * s2))

    def d12(x, y):
        r = np.subtract(x, y, dtype=float)
        return (1.0 / s2 - (r * r) / (s2 * s2)) * np.exp(-(r * r) / (2.0 * s2))

    return Kernel("gaussian", s, value, d1, d2, d12)


def median_heuristic(times) -> float:
    """Median of ``|T_i - T_j|`` over the ``n(n-1)/2`` pairs ``i < j``.

    Zero differences from tied points are kept; an all-zero set of
    differences cannot serve as a bandwidth.
    """
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size < 2:
        raise DegenerateSampleError(
            f"median heuristic needs at least 2 points, got {t.size}"
        )
    i, j = np.triu_indices(t.size, k=1)
    med = float(np.median(np.abs(t[i] - t[j])))
    if med == 0.0:
        if np.all(t == t[0]):
            raise DegenerateSampleError("median heuristic: all points identical")
        raise DegenerateSampleError("median heuristic: median pairwise distance is zero")
    return med
