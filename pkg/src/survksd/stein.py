"""Stein Gram matrices for censored data.

The survival and martingale operators map the kernel section at a data
point ``(x, delta)`` to a feature of the form::

    xi = a * dK(x, .)/dx + phi * K(x, .) + c0 * K(0, .)

so every Gram entry is the nine-term inner product computed by
:func:`feature_cross`.  The proportional operator has a data-dependent
weight through the risk set and is built separately.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import CensoredSample, risk_function
from .errors import (
    BoundaryConditionError,
    HazardSupportError,
    TransformOverflowError,
    UnsupportedFamilyError,
)
from .kernels import Kernel, gaussian_kernel, median_heuristic
from .models import NullModel, make_null_model

OPERATORS = ("survival", "martingale", "martingale-uniform", "proportional")
OPERATOR_ALIASES = {
    "s": "survival",
    "m": "martingale",
    "mu": "martingale-uniform",
    "u": "martingale-uniform",
    "p": "proportional",
    "sksd": "survival",
    "mksd": "martingale",
    "mksdu": "martingale-uniform",
    "pksd": "proportional",
}
DETERMINISTIC = ("survival", "martingale", "martingale-uniform")

STANDARD_UNIFORM = make_null_model("uniform")


def canonical_operator(tag: str) -> str:
    op = OPERATOR_ALIASES.get(tag.lower(), tag.lower())
    if op not in OPERATORS:
        raise UnsupportedFamilyError(f"unknown Stein operator {tag!r}")
    return op


@dataclass(frozen=True, eq=False)
class SteinGram:
    """The matrix ``H[i, j] = h((T_i, D_i), (T_j, D_j))`` plus provenance."""

    matrix: np.ndarray
    operator: str
    bandwidth: float
    model: str

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Stein Gram must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self) -> bool:
        scale = float(np.max(np.abs(self.matrix))) if self.n else 0.0
        return self.min_eigenvalue() >= -1e-8 * self.n * scale


def _symmetrize(H: np.ndarray) -> np.ndarray:
    # mirror the upper triangle so H is exactly symmetric
    return np.triu(H) + np.triu(H, 1).T


def feature_cross(kernel: Kernel, x, fx, y, fy) -> np.ndarray:
    """Inner products between features at points ``x`` and ``y``.

    ``fx = (a, phi, c0)`` are the feature coefficients at ``x`` (arrays
    broadcastable with ``x``), likewise ``fy``.  Returns the matrix over
    ``x[:, None]`` and ``y[None, :]``.
    """
    x = np.asarray(x, dtype=float)[:, None]
    y = np.asarray(y, dtype=float)[None, :]
    a, phi, c0 = (np.asarray(v, dtype=float).reshape(-1)[:, None] for v in fx)
    b, psi, e0 = (np.asarray(v, dtype=float).reshape(-1)[None, :] for v in fy)
    z = np.zeros(1)
    return (
        a * b * kernel.d12(x, y)
        + a * psi * kernel.d1(x, y)
        + a * e0 * kernel.d1(x, z[:, None])
        + phi * b * kernel.d2(x, y)
        + phi * psi * kernel.value(x, y)
        + phi * e0 * kernel.value(x, z[:, None])
        + c0 * b * kernel.d2(z[None, :], y)
        + c0 * psi * kernel.value(z[None, :], y)
        + c0 * e0 * kernel.value(0.0, 0.0)
    )


def _uncensored_hazard(model: NullModel, times, events, need_deriv: bool):
    """Hazard (and derivative) at the observations, checking support."""
    with np.errstate(all="ignore"):
        lam = np.asarray(model.hazard(times), dtype=float)
        dlam = np.asarray(model.hazard_deriv(times), dtype=float) if need_deriv else None
    bad = events & ~(lam > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise HazardSupportError(
            f"hazard-support: null hazard is {lam[i]} at uncensored time {times[i]!r} "
            f"(index {i}); the operator divides by it"
        )
    if not np.all(np.isfinite(lam[events])):
        i = int(np.flatnonzero(events & ~np.isfinite(lam))[0])
        raise HazardSupportError(f"hazard-support: null hazard is not finite at {times[i]!r}")
    if need_deriv and not np.all(np.isfinite(dlam[events])):
        i = int(np.flatnonzero(events & ~np.isfinite(dlam))[0])
        raise HazardSupportError(
            f"hazard-support: hazard derivative is not finite at uncensored time {times[i]!r}"
        )
    return lam, dlam


def _require_boundary(model: NullModel) -> float:
    l0 = model.hazard_at_zero
    if not math.isfinite(l0):
        raise BoundaryConditionError(
            f"boundary condition b) violated: hazard of {model.describe()} diverges at 0+, "
            "so sqrt(K(x,x)) * lambda0(x) has no finite limit"
        )
    return float(l0)


def survival_features(model: NullModel, times, events):
    """Coefficients ``(a, phi, c0)`` of the survival-operator feature."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    l0 = _require_boundary(model)
    lam, dlam = _uncensored_hazard(model, times, events, need_deriv=True)
    censored_lam = ~events & ~np.isfinite(lam)
    if censored_lam.any():
        i = int(np.flatnonzero(censored_lam)[0])
        raise HazardSupportError(f"hazard-support: null hazard is not finite at {times[i]!r}")
    with np.errstate(all="ignore"):
        ratio = np.where(events, dlam / np.where(events, lam, 1.0), 0.0)
    d = events.astype(float)
    phi = d * ratio - lam
    return d, phi, np.full(times.shape, l0)


def martingale_features(model: NullModel, times, events):
    """Coefficients ``(a, phi, c0)`` of the martingale-operator feature."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    lam, _ = _uncensored_hazard(model, times, events, need_deriv=False)
    d = events.astype(float)
    a = np.where(events, d / np.where(events, lam, 1.0), 0.0)
    return a, np.full(times.shape, -1.0), np.ones(times.shape)


def _resolve_kernel(kernel, times) -> Kernel:
    if kernel is None:
        return gaussian_kernel(median_heuristic(times))
    if isinstance(kernel, Kernel):
        return kernel
    return gaussian_kernel(kernel)


def _feature_gram(sample, kernel, feats):
    H = feature_cross(kernel, sample.times, feats, sample.times, feats)
    return _symmetrize(H)


def survival_gram(sample: CensoredSample, model: NullModel, kernel=None) -> SteinGram:
    """Gram matrix of the survival Stein kernel.

    ``kernel`` is a :class:`Kernel`, a Gaussian bandwidth, or ``None`` for
    the median heuristic on the observed times.
    """
    kernel = _resolve_kernel(kernel, sample.times)
    feats = survival_features(model, sample.times, sample.events)
    return SteinGram(_feature_gram(sample, kernel, feats), "survival",
                     kernel.bandwidth, model.describe())


def martingale_gram(sample: CensoredSample, model: NullModel, kernel=None) -> SteinGram:
    kernel = _resolve_kernel(kernel, sample.times)
    feats = martingale_features(model, sample.times, sample.events)
    return SteinGram(_feature_gram(sample, kernel, feats), "martingale",
                     kernel.bandwidth, model.describe())


def uniform_transform(sample: CensoredSample, model: NullModel) -> CensoredSample:
    """Map ``T_i`` to ``U_i = F0(T_i)``; event indicators are unchanged."""
    u = np.asarray(model.cdf(sample.times), dtype=float)
    over = ~(u < 1.0)
    if over.any():
        i = int(np.flatnonzero(over)[0])
        raise TransformOverflowError(
            f"transform-overflow: F0({sample.times[i]!r}) = {u[i]} under {model.describe()}; "
            "the observation lies outside the model support"
        )
    return CensoredSample(u, sample.events)


def martingale_uniform_gram(sample: CensoredSample, model: NullModel, kernel=None) -> SteinGram:
    """Martingale Gram of the F0-transformed data against the standard uniform null.

    With ``kernel=None`` the bandwidth is the median heuristic of the
    transformed times.
    """
    transformed = uniform_transform(sample, model)
    g = martingale_gram(transformed, STANDARD_UNIFORM, kernel)
    return SteinGram(g.matrix, "martingale-uniform", g.bandwidth, model.describe())


def proportional_gram(sample: CensoredSample, model: NullModel, kernel=None,
                      normalize: bool = False) -> SteinGram:
    """Gram matrix of the proportional (risk-set weighted) Stein kernel.

    ``H[i, j] = n^2 D_i D_j K*(T_i, T_j) / (Y(T_i) Y(T_j))`` with
    ``K*(x, y) = d^2/dxdy [lambda0(x) lambda0(y) K(x, y)]``, so ``H`` scales
    by ``gamma^2`` when the hazard is multiplied by ``gamma``.  With
    ``normalize=True`` each entry is divided by ``lambda0(T_i) lambda0(T_j)``,
    giving a kernel that is invariant under that scaling.
    """
    kernel = _resolve_kernel(kernel, sample.times)
    if model.hazard_at_zero > 0:
        warnings.warn(
            f"{model.describe()} has lambda0(0+) = {model.hazard_at_zero:g} > 0; the "
            "proportional operator assumes omega(0) lambda0(0) = 0",
            stacklevel=2,
        )
    times, events = sample.times, sample.events
    lam, dlam = _uncensored_hazard(model, times, events, need_deriv=True)
    n = sample.n
    y = np.asarray(risk_function(sample).at(times), dtype=float)
    c = np.where(events, n / y, 0.0)
    lam = np.where(events, lam, 0.0)
    dlam = np.where(events, dlam, 0.0)
    if normalize:
        A = c * np.where(events, dlam / np.where(events, lam, 1.0), 0.0)
        B = c
    else:
        A = c * dlam
        B = c * lam
    x = times[:, None]
    xt = times[None, :]
    H = (
        A[:, None] * A[None, :] * kernel.value(x, xt)
        + A[:, None] * B[None, :] * kernel.d2(x, xt)
        + B[:, None] * A[None, :] * kernel.d1(x, xt)
        + B[:, None] * B[None, :] * kernel.d12(x, xt)
    )
    return SteinGram(_symmetrize(H), "proportional", kernel.bandwidth, model.describe())


GRAM_BUILDERS = {
    "survival": survival_gram,
    "martingale": martingale_gram,
    "martingale-uniform": martingale_uniform_gram,
    "proportional": proportional_gram,
}


def stein_gram(operator: str, sample: CensoredSample, model: NullModel, kernel=None) -> SteinGram:
    return GRAM_BUILDERS[canonical_operator(operator)](sample, model, kernel)


def stein_kernel(operator: str, model: NullModel, kernel: Kernel, x, d, t: float, e: bool):
    """``h((x, d), (t, e))`` for a deterministic operator, vectorised over ``x``.

    For ``martingale-uniform`` both ``x`` and ``t`` are on the original
    time axis and are mapped through the null cdf here.
    """
    op = canonical_operator(operator)
    if op not in DETERMINISTIC:
        raise UnsupportedFamilyError(
            f"{op} kernel depends on the whole sample (risk set); pointwise evaluation "
            "requires a deterministic kernel"
        )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.broadcast_to(np.asarray(d, dtype=bool), x.shape)
    t_arr = np.array([float(t)])
    e_arr = np.array([bool(e)])
    if op == "martingale-uniform":
        x = np.asarray(model.cdf(x), dtype=float)
        t_arr = np.asarray(model.cdf(t_arr), dtype=float)
        model = STANDARD_UNIFORM
        op = "martingale"
    features = survival_features if op == "survival" else martingale_features
    fx = features(model, x, d)
    ft = features(model, t_arr, e_arr)
    return feature_cross(kernel, x, fx, t_arr, ft)[:, 0]
