"""Null-model specifications for survival times on the half-line.

A :class:`NullModel` bundles six vectorised evaluators (density, survival,
cdf, hazard, hazard derivative, cumulative hazard) that must agree with
each other.  Built-in families have closed forms; ``custom`` models take
user callables and are always validated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    ModelCoherenceError,
    NumericError,
    ParameterDomainError,
    UnsupportedFamilyError,
)

Evaluator = Callable[[np.ndarray], np.ndarray]

FAMILIES = {
    "exponential": ("rate",),
    "weibull": ("shape", "rate"),
    "periodic": ("freq",),
    "uniform": (),
    "custom": (),
}
ALIASES = {"exp": "exponential", "weib": "weibull", "uniform-transform": "uniform"}

GRID_SIZE = 200
GRID_QUANTILES = (0.005, 0.995)
# limit probes for lambda0(0+)
ORIGIN_PROBES = (1e-4, 1e-6, 1e-8)


@dataclass(frozen=True, eq=False)
class NullModel:
    """A hypothesised survival law.

    ``hazard_at_zero`` is the limit of the hazard at ``0+`` (``inf`` when it
    diverges); the Stein operators use it for the boundary term and for
    boundary condition b).  ``upper`` is the right end of the support.
    """

    family: str
    params: dict
    density: Evaluator
    survival: Evaluator
    cdf: Evaluator
    hazard: Evaluator
    hazard_deriv: Evaluator
    cum_hazard: Evaluator
    hazard_at_zero: float
    upper: float = math.inf
    _quantile: Evaluator | None = field(default=None, repr=False)

    def describe(self) -> str:
        if not self.params:
            return self.family
        inner = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}:{inner}"

    def quantile(self, p):
        """Inverse cdf; generic models invert the cumulative hazard numerically."""
        p = np.asarray(p, dtype=float)
        if self._quantile is not None:
            return self._quantile(p)
        return invert_cum_hazard(self, -np.log1p(-p))

    def scaled(self, gamma: float, validate: bool = True) -> NullModel:
        """The proportional-hazards relative with hazard ``gamma * lambda0``."""
        gamma = float(gamma)
        if not (gamma > 0 and math.isfinite(gamma)):
            raise ParameterDomainError(f"scale factor must be positive, got {gamma}")
        base = self

        def surv(x):
            return np.exp(-gamma * base.cum_hazard(x))

        model = NullModel(
            family=f"{base.family}*{gamma:g}",
            params=dict(base.params),
            density=lambda x: gamma * base.hazard(x) * surv(x),
            survival=surv,
            cdf=lambda x: -np.expm1(-gamma * base.cum_hazard(x)),
            hazard=lambda x: gamma * base.hazard(x),
            hazard_deriv=lambda x: gamma * base.hazard_deriv(x),
            cum_hazard=lambda x: gamma * base.cum_hazard(x),
            hazard_at_zero=gamma * base.hazard_at_zero,
            upper=base.upper,
        )
        if validate:
            validate_model(model)
        return model


def _check_positive(family, names, values):
    for name, v in zip(names, values):
        if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
            raise ParameterDomainError(
                f"{family}: parameter {name} must be a positive finite number, got {v!r}"
            )


def _exponential(rate):
    r = float(rate)
    return dict(
        density=lambda x: r * np.exp(-r * np.asarray(x, dtype=float)),
        survival=lambda x: np.exp(-r * np.asarray(x, dtype=float)),
        cdf=lambda x: -np.expm1(-r * np.asarray(x, dtype=float)),
        hazard=lambda x: np.full_like(np.asarray(x, dtype=float), r),
        hazard_deriv=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        cum_hazard=lambda x: r * np.asarray(x, dtype=float),
        hazard_at_zero=r,
        _quantile=lambda p: -np.log1p(-np.asarray(p, dtype=float)) / r,
    )


def _weibull(shape, rate):
    k, r = float(shape), float(rate)
    rk = r**k

    def hazard(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return k * rk * x ** (k - 1)

    def hazard_deriv(x):
        x = np.asarray(x, dtype=float)
        if k == 1:
            return np.zeros_like(x)
        with np.errstate(divide="ignore"):
            return k * (k - 1) * rk * x ** (k - 2)

    def cum_hazard(x):
        return (r * np.asarray(x, dtype=float)) ** k

    if k < 1:
        at_zero = math.inf
    elif k == 1:
        at_zero = r
    else:
        at_zero = 0.0
    return dict(
        density=lambda x: hazard(x) * np.exp(-cum_hazard(x)),
        survival=lambda x: np.exp(-cum_hazard(x)),
        cdf=lambda x: -np.expm1(-cum_hazard(x)),
        hazard=hazard,
        hazard_deriv=hazard_deriv,
        cum_hazard=cum_hazard,
        hazard_at_zero=at_zero,
        _quantile=lambda p: (-np.log1p(-np.asarray(p, dtype=float))) ** (1 / k) / r,
    )


def _periodic(freq):
    w = float(freq) * math.pi

    def hazard(x):
        # 1 - cos(wx) written as 2 sin^2(wx/2): no cancellation near the zeros
        return 2.0 * np.sin(0.5 * w * np.asarray(x, dtype=float)) ** 2

    def cum_hazard(x):
        x = np.asarray(x, dtype=float)
        return x - np.sin(w * x) / w

    return dict(
        density=lambda x: hazard(x) * np.exp(-cum_hazard(x)),
        survival=lambda x: np.exp(-cum_hazard(x)),
        cdf=lambda x: -np.expm1(-cum_hazard(x)),
        hazard=hazard,
        hazard_deriv=lambda x: w * np.sin(w * np.asarray(x, dtype=float)),
        cum_hazard=cum_hazard,
        hazard_at_zero=0.0,
    )


def _uniform():
    """Standard uniform on [0, 1): the null after the F0 transform."""

    def hazard(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x < 1, 1.0 / (1.0 - x), np.inf)

    def hazard_deriv(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x < 1, 1.0 / (1.0 - x) ** 2, np.inf)

    def survival(x):
        return np.clip(1.0 - np.asarray(x, dtype=float), 0.0, 1.0)

    def cum_hazard(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x < 1, -np.log1p(-np.minimum(x, 1.0)), np.inf)

    return dict(
        density=lambda x: np.where(np.asarray(x, dtype=float) < 1, 1.0, 0.0),
        survival=survival,
        cdf=lambda x: np.clip(np.asarray(x, dtype=float), 0.0, 1.0),
        hazard=hazard,
        hazard_deriv=hazard_deriv,
        cum_hazard=cum_hazard,
        hazard_at_zero=1.0,
        upper=1.0,
        _quantile=lambda p: np.asarray(p, dtype=float),
    )


def probe_hazard_at_zero(hazard: Evaluator) -> float:
    """Estimate ``lambda(0+)`` from the probes in ``ORIGIN_PROBES``.

    Converging sequences shrink their increments geometrically; when the
    last increment is at least half the previous one the hazard is taken
    to diverge and ``inf`` is returned.
    """
    with np.errstate(all="ignore"):
        vals = np.asarray(hazard(np.array(ORIGIN_PROBES)), dtype=float)
    if not np.all(np.isfinite(vals)):
        return math.inf
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    if d2 > 0 and d2 >= 0.5 * d1 and vals[2] > vals[1] > vals[0]:
        return math.inf
    return float(vals[-1])


def make_null_model(family: str, params=None, *, trust: bool = False, **evaluators) -> NullModel:
    """Build a :class:`NullModel`.

    ``params`` is a sequence in the family's canonical order or a mapping
    by name: exponential(rate), weibull(shape, rate), periodic(freq).
    ``uniform`` is the standard uniform law used after the F0 transform.
    ``custom`` takes the six evaluators as keywords (``density``,
    ``survival``, ``cdf``, ``hazard``, ``hazard_deriv``, ``cum_hazard``)
    plus optional ``hazard_at_zero`` and ``upper``; custom models are
    always validated, built-ins only unless ``trust`` is set.
    """
    fam = ALIASES.get(family, family)
    if fam not in FAMILIES:
        raise UnsupportedFamilyError(f"unsupported-family: {family!r}")
    names = FAMILIES[fam]
    if params is None:
        params = {}
    if isinstance(params, dict):
        unknown = set(params) - set(names)
        if unknown:
            raise ParameterDomainError(f"{fam}: unknown parameter(s) {sorted(unknown)}")
        missing = [n for n in names if n not in params]
        if missing:
            raise ParameterDomainError(f"{fam}: missing parameter(s) {missing}")
        values = [params[n] for n in names]
    else:
        values = list(params)
        if len(values) != len(names):
            raise ParameterDomainError(
                f"{fam}: expected {len(names)} parameter(s) {names}, got {len(values)}"
            )
    _check_positive(fam, names, values)
    values = [float(v) for v in values]

    if fam == "custom":
        required = ("density", "survival", "cdf", "hazard", "hazard_deriv", "cum_hazard")
        missing = [k for k in required if k not in evaluators]
        if missing:
            raise ParameterDomainError(f"custom model missing evaluator(s) {missing}")
        parts = {k: evaluators[k] for k in required}
        parts["upper"] = float(evaluators.get("upper", math.inf))
        at_zero = evaluators.get("hazard_at_zero")
        parts["hazard_at_zero"] = (
            probe_hazard_at_zero(parts["hazard"]) if at_zero is None else float(at_zero)
        )
        trust = False
    else:
        if evaluators:
            raise ParameterDomainError(f"{fam}: evaluators are only accepted for custom models")
        builder = {
            "exponential": _exponential,
            "weibull": _weibull,
            "periodic": _periodic,
            "uniform": _uniform,
        }[fam]
        parts = builder(*values)
    model = NullModel(family=fam, params=dict(zip(names, values)), **parts)
    if not trust:
        validate_model(model)
    return model


def validation_grid(model: NullModel, size: int = GRID_SIZE) -> np.ndarray:
    lo, hi = model.quantile(np.array(GRID_QUANTILES))
    return np.geomspace(lo, hi, size)


def validate_model(model: NullModel, grid=None) -> None:
    """Check evaluator coherence on the validation grid.

    Raises :class:`ModelCoherenceError` naming the first failing identity.
    """
    x = validation_grid(model) if grid is None else np.asarray(grid, dtype=float)
    with np.errstate(all="ignore"):
        f = np.asarray(model.density(x), dtype=float)
        S = np.asarray(model.survival(x), dtype=float)
        F = np.asarray(model.cdf(x), dtype=float)
        lam = np.asarray(model.hazard(x), dtype=float)
        dlam = np.asarray(model.hazard_deriv(x), dtype=float)
        Lam = np.asarray(model.cum_hazard(x), dtype=float)
    name = model.describe()
    for label, arr in (("density", f), ("survival", S), ("cdf", F), ("hazard", lam),
                       ("hazard_deriv", dlam), ("cum_hazard", Lam)):
        if arr.shape != x.shape or not np.all(np.isfinite(arr)):
            raise ModelCoherenceError(f"{name}: {label} is not finite on the validation grid")
    pos = S > 0
    if not np.allclose(lam[pos], f[pos] / S[pos], rtol=1e-8, atol=0):
        raise ModelCoherenceError(f"{name}: hazard != density / survival")
    if not np.allclose(S, np.exp(-Lam), rtol=1e-8, atol=0):
        raise ModelCoherenceError(f"{name}: survival != exp(-cum_hazard)")
    if not np.allclose(F, 1.0 - S, rtol=1e-8, atol=1e-12):
        raise ModelCoherenceError(f"{name}: cdf != 1 - survival")
    F0 = float(np.asarray(model.cdf(np.array([0.0])))[0])
    if abs(F0) > 1e-12:
        raise ModelCoherenceError(f"{name}: cdf(0) = {F0} != 0")
    if np.any(np.diff(F) < 0):
        raise ModelCoherenceError(f"{name}: cdf is not nondecreasing")
    q = np.asarray(model.cdf(model.quantile(np.array([1 - 1e-9]))), dtype=float)
    if not (q[0] > 1 - 1e-6):
        raise ModelCoherenceError(f"{name}: cdf does not tend to 1")
    # relative step keeps x - 2h > 0 on grids that start near the origin; the
    # five-point stencil keeps truncation error small for oscillating hazards
    h = 1e-5 * x
    with np.errstate(all="ignore"):
        hz = [np.asarray(model.hazard(x + k * h), dtype=float) for k in (-2, -1, 1, 2)]
        fd = ((hz[0] - hz[3]) + 8 * (hz[2] - hz[1])) / (12 * h)
    scale = np.maximum(np.abs(dlam), 1e-3 * np.max(np.abs(dlam)))
    if np.any(np.abs(fd - dlam) > 1e-5 * scale + 1e-300):
        raise ModelCoherenceError(f"{name}: hazard_deriv disagrees with finite differences")


def invert_cum_hazard(model: NullModel, target, xtol: float = 1e-10, max_steps: int = 200):
    """Solve ``cum_hazard(x) = target`` elementwise by bracketed bisection."""
    target = np.asarray(target, dtype=float)
    flat = target.reshape(-1)
    out = np.empty_like(flat)
    inf = ~np.isfinite(flat)
    out[inf] = model.upper
    e = flat[~inf]
    lo = np.zeros_like(e)
    hi = np.ones_like(e)
    upper = model.upper
    for _ in range(2000):
        short = np.asarray(model.cum_hazard(np.minimum(hi, upper))) < e
        if not short.any():
            break
        if math.isfinite(upper) and np.any(hi[short] >= upper):
            raise NumericError("cum_hazard target exceeds the model support")
        lo = np.where(short, hi, lo)
        hi = np.where(short, hi * 2, hi)
    else:
        raise NumericError("could not bracket the cumulative hazard")
    hi = np.minimum(hi, upper)
    for _ in range(max_steps):
        if np.all(hi - lo <= xtol):
            break
        mid = 0.5 * (lo + hi)
        below = np.asarray(model.cum_hazard(mid)) < e
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    else:
        raise NumericError(f"bisection did not converge in {max_steps} steps")
    out[~inf] = 0.5 * (lo + hi)
    return out.reshape(target.shape) if target.ndim else float(out[0])


def parse_model_spec(text: str, *, trust: bool = False) -> NullModel:
    """Parse ``family:key=value,...`` (for example ``weibull:shape=2,rate=1``)."""
    text = text.strip()
    fam, _, rest = text.partition(":")
    fam = ALIASES.get(fam.strip(), fam.strip())
    if fam not in FAMILIES or fam == "custom":
        raise ConfigError(f"unsupported-family in model spec {text!r}")
    params = {}
    if rest.strip():
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise ConfigError(f"model spec {text!r}: expected key=value, got {item!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                raise ConfigError(f"model spec {text!r}: {val!r} is not a number") from None
    try:
        return make_null_model(fam, params, trust=trust)
    except ParameterDomainError as exc:
        raise ConfigError(f"model spec {text!r}: {exc}") from None
