"""Simulation harness: data generators, censoring calibration, power studies
and a quadrature check of the Stein identity."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import integrate, optimize

from .data import CensoredSample
from .errors import CalibrationError, ConfigError, NumericError, SurvKSDError, UnsupportedFamilyError
from .kernels import Kernel, gaussian_kernel
from .models import FAMILIES, ALIASES, NullModel, make_null_model, parse_model_spec
from .stein import DETERMINISTIC, OPERATOR_ALIASES, canonical_operator, stein_kernel
from .testing import run_test, weighted_logrank

log = logging.getLogger(__name__)

WORKERS_ENV = "SURVKSD_WORKERS"
BASELINES = ("lr1", "lr2")


def _as_model(model) -> NullModel:
    return parse_model_spec(model) if isinstance(model, str) else model


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_survival(model, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` survival times by inverse transform.

    Closed-form quantiles are used where available; other laws solve
    ``Lambda(x) = E`` for a standard exponential ``E`` by bisection.
    """
    model = _as_model(model)
    v = _as_rng(seed).random(n)
    return np.asarray(model.quantile(v), dtype=float)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, w)


def censoring_probability(model, rate: float) -> float:
    """``P(X > C)`` for ``C ~ Exp(rate)``, i.e. ``int S_X(u / rate) e^{-u} du``."""
    model = _as_model(model)
    if rate == 0:
        return 0.0
    if math.isinf(rate):
        return 1.0
    a, b = (float(v) * rate for v in model.quantile(np.array([0.5, 0.99])))

    def f(u):
        return float(np.asarray(model.survival(np.array([u / rate])))[0]) * math.exp(-u)

    total = 0.0
    for lo, hi in ((0.0, a), (a, b), (b, math.inf)):
        val, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return total


def calibrate_censoring(model, target: float) -> float:
    """Rate ``c`` of exponential censoring with ``P(Delta = 0) = target``.

    ``target = 0`` returns 0, meaning no censoring variable at all.
    """
    model = _as_model(model)
    if not (0 <= target < 1):
        raise CalibrationError(f"censoring target must lie in [0, 1), got {target}")
    if target == 0:
        return 0.0

    def g(c):
        return censoring_probability(model, c) - target

    hi = 1.0
    for _ in range(200):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"cannot bracket censoring fraction {target}")
    lo = hi / 2.0
    for _ in range(400):
        if g(lo) < 0:
            break
        lo /= 2.0
    else:
        raise CalibrationError(f"cannot bracket censoring fraction {target}")
    return float(optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-13, maxiter=500))


def generate_censored(model, n: int, censoring_rate: float, seed=None) -> CensoredSample:
    """``T = min(X, C)`` with ``X`` from ``model`` and ``C ~ Exp(censoring_rate)``."""
    rng = _as_rng(seed)
    x = sample_survival(model, n, rng)
    if censoring_rate > 0:
        c = rng.exponential(1.0 / censoring_rate, size=n)
    else:
        c = np.full(n, np.inf)
    return CensoredSample(np.minimum(x, c), x <= c)


# ---------------------------------------------------------------------------
# Stein identity oracle


def default_probes(model, quantiles=(0.1, 0.3, 0.5, 0.7, 0.9)):
    """Probe grid: null quantiles crossed with both event indicators."""
    model = _as_model(model)
    ts = np.asarray(model.quantile(np.array(quantiles)), dtype=float)
    return [(float(t), d) for t in ts for d in (True, False)]


def _quad(f, lo, hi):
    res = integrate.quad(f, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=500, full_output=1)
    if len(res) > 3:
        raise NumericError(f"quadrature on [{lo}, {hi}] did not converge: {res[3]}")
    return res[0]


def stein_identity_oracle(operator: str, model, kernel=None, censoring_rate: float = 0.0,
                          probe=(1.0, True), data_model=None) -> float:
    """``E[h((T, D), probe)]`` by adaptive quadrature.

    The expectation runs over ``T = min(X, C)`` with ``X ~ data_model``
    (default: the null ``model``) and ``C ~ Exp(censoring_rate)``:

        int h((x,1), probe) f_X(x) S_C(x) dx + int h((x,0), probe) f_C(x) S_X(x) dx

    Under the null the Stein identity makes this zero.  ``kernel`` defaults
    to a unit-bandwidth Gaussian.  Probe times are on the original axis.
    """
    op = canonical_operator(operator)
    if op not in DETERMINISTIC:
        raise UnsupportedFamilyError(
            f"identity check requires deterministic kernel; {op} depends on the risk set"
        )
    model = _as_model(model)
    data = model if data_model is None else _as_model(data_model)
    if kernel is None:
        kernel = gaussian_kernel(1.0)
    elif not isinstance(kernel, Kernel):
        kernel = gaussian_kernel(kernel)
    t, e = float(probe[0]), bool(probe[1])
    c = float(censoring_rate)
    if c < 0:
        raise ValueError(f"censoring rate must be nonnegative, got {c}")

    def h(x, d):
        return float(stein_kernel(op, model, kernel, np.array([x]), d, t, e)[0])

    def uncensored(x):
        fx = float(np.asarray(data.density(np.array([x])))[0])
        if fx == 0.0:
            return 0.0
        return h(x, True) * fx * math.exp(-c * x)

    def censored(x):
        sx = float(np.asarray(data.survival(np.array([x])))[0])
        if sx == 0.0:
            return 0.0
        return h(x, False) * c * math.exp(-c * x) * sx

    # truncate where the data law has no mass left; also keep F0(x) < 1
    upper = float(data.quantile(np.array([1 - 1e-13]))[0])
    upper = min(upper, data.upper, model.upper)
    if op == "martingale-uniform":
        upper = min(upper, float(model.quantile(np.array([1 - 1e-13]))[0]))
    cuts = {0.0, upper}
    for q in (0.25, 0.5, 0.9, 0.99, 0.9999):
        cuts.add(float(data.quantile(np.array([q]))[0]))
    if 0 < t < upper:
        cuts.add(t)
    knots = sorted(v for v in cuts if 0 <= v <= upper)
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        total += _quad(uncensored, lo, hi)
        if c > 0:
            total += _quad(censored, lo, hi)
    return total


def identity_check(operator: str, model, kernel=None, censoring_rate: float = 0.0,
                   probes=None, data_model=None) -> dict:
    """Evaluate the oracle on a probe grid and report the largest deviation."""
    model = _as_model(model)
    probes = default_probes(model) if probes is None else probes
    values = [stein_identity_oracle(operator, model, kernel, censoring_rate, p, data_model)
              for p in probes]
    return {
        "operator": canonical_operator(operator),
        "model": model.describe(),
        "data_model": (_as_model(data_model).describe() if data_model is not None
                       else model.describe()),
        "censoring_rate": censoring_rate,
        "probes": [{"t": t, "delta": int(d), "value": v} for (t, d), v in zip(probes, values)],
        "max_abs_deviation": float(max(abs(v) for v in values)),
    }


# ---------------------------------------------------------------------------
# Power studies


def _canonical_test(tag: str) -> str:
    low = tag.lower()
    if low in BASELINES:
        return low
    return canonical_operator(low)


@dataclass
class ExperimentSpec:
    """One power/size study.

    Data come from ``alternative`` with ``grid_param`` set to each value in
    ``grid``; every (grid value, sample size, censoring) triple is a cell.
    """

    null: str = "exponential:rate=1"
    alternative: str = "weibull:rate=1"
    grid_param: str = "shape"
    grid: list = field(default_factory=lambda: [1.0])
    sample_sizes: list = field(default_factory=lambda: [100])
    censoring: list = field(default_factory=lambda: [0.3])
    n_repetitions: int = 200
    alpha: float = 0.01
    operators: list = field(default_factory=lambda: ["m", "mu"])
    n_bootstrap: int = 500
    seed: int = 0
    bandwidth_scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        def fail(name, msg):
            raise ConfigError(f"invalid experiment field {name!r}: {msg}")

        if isinstance(self.censoring, (int, float)):
            self.censoring = [self.censoring]
        for name in ("grid", "sample_sizes", "censoring", "operators"):
            v = getattr(self, name)
            if isinstance(v, (str, bytes)) or not hasattr(v, "__iter__"):
                fail(name, "must be a list")
            v = list(v)
            if not v:
                fail(name, "must not be empty")
            setattr(self, name, v)
        try:
            parse_model_spec(self.null)
        except SurvKSDError as exc:
            fail("null", str(exc))
        fam = self.alternative.partition(":")[0].strip()
        fam = ALIASES.get(fam, fam)
        if fam not in FAMILIES or fam in ("custom",):
            fail("alternative", f"unsupported family {fam!r}")
        if self.grid_param not in FAMILIES[fam]:
            fail("grid_param", f"{self.grid_param!r} is not a parameter of {fam}")
        for g in self.grid:
            if not (isinstance(g, (int, float)) and g > 0 and math.isfinite(g)):
                fail("grid", f"values must be positive numbers, got {g!r}")
        self.grid = [float(g) for g in self.grid]
        for g in self.grid:
            try:
                self.alternative_model(g)
            except SurvKSDError as exc:
                fail("alternative", str(exc))
        for n in self.sample_sizes:
            if isinstance(n, bool) or not isinstance(n, int) or n < 2:
                fail("sample_sizes", f"entries must be integers >= 2, got {n!r}")
        for q in self.censoring:
            if not (isinstance(q, (int, float)) and 0 <= q < 1):
                fail("censoring", f"targets must lie in [0, 1), got {q!r}")
        self.censoring = [float(q) for q in self.censoring]
        if isinstance(self.n_repetitions, bool) or not isinstance(self.n_repetitions, int) \
                or self.n_repetitions < 1:
            fail("n_repetitions", "must be a positive integer")
        if not (isinstance(self.alpha, (int, float)) and 0 < self.alpha < 1):
            fail("alpha", "must lie in (0, 1)")
        try:
            self.operators = [_canonical_test(op) for op in self.operators]
        except SurvKSDError as exc:
            fail("operators", str(exc))
        if isinstance(self.n_bootstrap, bool) or not isinstance(self.n_bootstrap, int) \
                or self.n_bootstrap < 1:
            fail("n_bootstrap", "must be a positive integer")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            fail("seed", "must be a nonnegative integer")
        if not (isinstance(self.bandwidth_scale, (int, float)) and self.bandwidth_scale > 0
                and math.isfinite(self.bandwidth_scale)):
            fail("bandwidth_scale", "must be a positive number")

    def alternative_model(self, value: float) -> NullModel:
        fam, _, rest = self.alternative.strip().partition(":")
        item = f"{self.grid_param}={value!r}"
        return parse_model_spec(f"{fam}:{rest.strip()},{item}" if rest.strip() else f"{fam}:{item}")

    def cells(self):
        """``(index, grid value, n, censoring)`` in a fixed order."""
        out = []
        for g in self.grid:
            for n in self.sample_sizes:
                for q in self.censoring:
                    out.append((len(out), g, n, q))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentSpec:
        data = dict(data)
        preset = data.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = asdict(PRESETS[preset]) if preset is not None else {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment field(s): {', '.join(sorted(unknown))}")
        base.update(data)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PowerRow:
    operator: str
    n: int
    param: float
    censoring: float
    alpha: float
    rejections: int
    reps: int
    errors: int = 0
    error: str | None = None

    @property
    def rate(self) -> float:
        return self.rejections / self.reps if self.reps and not self.errors else math.nan

    @property
    def se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1 - r) / self.reps) if not math.isnan(r) else math.nan


CSV_HEADER = ("operator", "n", "param", "censoring", "alpha", "rejections", "reps", "rate", "se")


@dataclass
class PowerReport:
    spec: ExperimentSpec
    rows: list

    def row(self, operator: str, param: float, n: int, censoring: float | None = None) -> PowerRow:
        op = _canonical_test(operator)
        for r in self.rows:
            if (r.operator == op and r.param == param and r.n == n
                    and (censoring is None or r.censoring == censoring)):
                return r
        raise KeyError((operator, param, n, censoring))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            rate = "NA" if math.isnan(r.rate) else repr(r.rate)
            se = "NA" if math.isnan(r.se) else repr(r.se)
            w.writerow([r.operator, r.n, repr(r.param), repr(r.censoring), repr(r.alpha),
                        r.rejections, r.reps, rate, se])
        return buf.getvalue()


def repetition_seeds(master: int, cell: int, rep: int) -> tuple[np.random.SeedSequence, int]:
    """Data seed sequence and bootstrap seed for one repetition."""
    ss = np.random.SeedSequence([master, cell, rep])
    boot = int(ss.spawn(1)[0].generate_state(1, dtype=np.uint64)[0])
    return ss, boot


def _one_repetition(args):
    spec_dict, cell, value, n, rate, rep = args
    spec = ExperimentSpec(**spec_dict)
    null = parse_model_spec(spec.null)
    alt = spec.alternative_model(value)
    ss, boot_seed = repetition_seeds(spec.seed, cell, rep)
    sample = generate_censored(alt, n, rate, np.random.default_rng(ss))
    out = {}
    for op in spec.operators:
        try:
            if op in BASELINES:
                lr = weighted_logrank(sample, null, op.upper())
                out[op] = (lr.p_value < spec.alpha, None)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UserWarning)
                    res = run_test(sample, null, op, alpha=spec.alpha,
                                   n_bootstrap=spec.n_bootstrap, seed=boot_seed,
                                   bandwidth_scale=spec.bandwidth_scale)
                out[op] = (res.reject, None)
        except SurvKSDError as exc:
            out[op] = (False, f"{type(exc).__name__}: {exc}")
    return cell, out


def run_power_study(spec: ExperimentSpec, workers: int | None = None) -> PowerReport:
    """Rejection counts for every (operator, cell); deterministic given ``spec.seed``.

    Failing repetitions are counted in ``PowerRow.errors`` and the row's
    rate is reported as NaN.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    cells = spec.cells()
    rates = {}
    for idx, value, n, q in cells:
        key = (value, q)
        if key not in rates:
            rates[key] = calibrate_censoring(spec.alternative_model(value), q)
    spec_dict = spec.to_dict()
    jobs = [(spec_dict, idx, value, n, rates[(value, q)], rep)
            for idx, value, n, q in cells for rep in range(spec.n_repetitions)]
    if workers == 1:
        results = map(_one_repetition, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_one_repetition, jobs, chunksize=max(1, len(jobs) // (8 * workers)))
    tally = {(idx, op): [0, 0, 0, None] for idx, *_ in cells for op in spec.operators}
    try:
        for idx, out in results:
            for op, (rej, err) in out.items():
                t = tally[(idx, op)]
                if err is None:
                    t[0] += int(rej)
                    t[1] += 1
                else:
                    t[2] += 1
                    t[3] = t[3] or err
    finally:
        if workers > 1:
            pool.shutdown()
    rows = []
    for op in spec.operators:
        for idx, value, n, q in cells:
            rej, reps, errs, msg = tally[(idx, op)]
            if errs:
                log.warning("operator %s, cell %s: %d failed repetitions (%s)", op,
                            (value, n, q), errs, msg)
            rows.append(PowerRow(op, n, value, q, spec.alpha, rej, reps, errs, msg))
    return PowerReport(spec, rows)


_SHAPES = [round(0.2 * i, 1) for i in range(1, 11)]
_SIZES = [30, 50, 100, 200]
_ALL_TESTS = ["m", "mu", "p", "lr1", "lr2"]

PRESETS = {
    "fig2-weibull": ExperimentSpec(
        name="fig2-weibull", alternative="weibull:rate=1", grid_param="shape", grid=_SHAPES,
        sample_sizes=[100], censoring=[0.3], alpha=0.01, operators=_ALL_TESTS),
    "fig2-weibull-n": ExperimentSpec(
        name="fig2-weibull-n", alternative="weibull:rate=1", grid_param="shape", grid=[1.5],
        sample_sizes=_SIZES, censoring=[0.3], alpha=0.01, operators=_ALL_TESTS),
    "fig2-periodic": ExperimentSpec(
        name="fig2-periodic", alternative="periodic", grid_param="freq",
        grid=[float(t) for t in range(1, 9)], sample_sizes=[100], censoring=[0.3],
        alpha=0.01, operators=_ALL_TESTS),
    "fig2-periodic-n": ExperimentSpec(
        name="fig2-periodic-n", alternative="periodic", grid_param="freq", grid=[3.0],
        sample_sizes=_SIZES, censoring=[0.3], alpha=0.01, operators=_ALL_TESTS),
    "fig3-proportional": ExperimentSpec(
        name="fig3-proportional", alternative="weibull:shape=1", grid_param="rate",
        grid=[0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75], sample_sizes=[50, 100, 200],
        censoring=[0.3], alpha=0.05, operators=["p", "m", "mu", "lr1", "lr2"]),
    "extended-weibull": ExperimentSpec(
        name="extended-weibull", alternative="weibull:rate=1", grid_param="shape",
        grid=_SHAPES, sample_sizes=_SIZES, censoring=[0.3, 0.5, 0.7], alpha=0.01,
        operators=_ALL_TESTS),
    "extended-periodic": ExperimentSpec(
        name="extended-periodic", alternative="periodic", grid_param="freq",
        grid=[float(t) for t in range(1, 9)], sample_sizes=_SIZES,
        censoring=[0.3, 0.5, 0.7], alpha=0.01, operators=_ALL_TESTS),
}
