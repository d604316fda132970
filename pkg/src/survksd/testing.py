"""V-statistics, wild-bootstrap calibration and the log-rank baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .data import CensoredSample, risk_function
from .errors import DegenerateSampleError, DegenerateVarianceError, ParameterDomainError
from .kernels import Kernel, gaussian_kernel, median_heuristic
from .models import NullModel
from .stein import STANDARD_UNIFORM, SteinGram, canonical_operator, stein_gram, uniform_transform

DEFAULT_ALPHA = 0.05
DEFAULT_BOOTSTRAP = 1000
# elements per bootstrap chunk (rows * n^2)
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class TestResult:
    """Outcome of one c-KSD test; ``statistic`` is ``n`` times the V-statistic."""

    __test__ = False  # keep pytest from collecting this class

    operator: str
    n: int
    n_events: int
    bandwidth: float
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    n_bootstrap: int
    seed: int
    model: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class BootstrapOutcome:
    v_statistic: float
    p_value: float
    replicates: np.ndarray


def _matrix(gram) -> np.ndarray:
    H = gram.matrix if isinstance(gram, SteinGram) else np.asarray(gram, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
        raise ValueError(f"expected a nonempty square matrix, got shape {H.shape}")
    return H


def quadratic_forms(H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``(1/n^2) w^T H w`` for every row ``w`` of ``W``.

    Each form is an elementwise product reduced in a fixed order, so the
    result does not depend on BLAS threading and an all-ones row reproduces
    :func:`v_statistic` bit for bit.
    """
    n = H.shape[0]
    W = np.asarray(W, dtype=float).reshape(-1, n)
    flat = H.reshape(-1)
    out = np.empty(W.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (n * n))
    for start in range(0, W.shape[0], step):
        w = W[start:start + step]
        outer = (w[:, :, None] * w[:, None, :]).reshape(w.shape[0], n * n)
        out[start:start + step] = (outer * flat).sum(axis=1)
    return out / (n * n)


def _raw_v(H: np.ndarray) -> float:
    return float(quadratic_forms(H, np.ones((1, H.shape[0])))[0])


def v_statistic(gram) -> float:
    """``(1/n^2) sum_ij H_ij``, clamped at 0 within PSD round-off."""
    H = _matrix(gram)
    v = _raw_v(H)
    if v < 0:
        tol = 1e-10 * float(np.max(np.abs(H)))
        if v < -tol:
            raise ValueError(f"V-statistic {v} is negative beyond round-off; Gram is not PSD")
        v = 0.0
    return v


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ParameterDomainError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ParameterDomainError(f"seed must lie in [0, 2^64), got {seed}")
    return seed


def rademacher(n_bootstrap: int, n: int, seed: int) -> np.ndarray:
    """Seeded ``(n_bootstrap, n)`` matrix of +-1; row ``b`` is replicate ``b``."""
    rng = np.random.default_rng(_check_seed(seed))
    return rng.integers(0, 2, size=(n_bootstrap, n), dtype=np.int8) * 2 - 1


def wild_bootstrap_pvalue(gram, n_bootstrap: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> BootstrapOutcome:
    """Calibrate the V-statistic with Rademacher wild-bootstrap replicates.

    ``p = (1 + #{b : s_b >= s_obs}) / (n_bootstrap + 1)``.
    """
    H = _matrix(gram)
    n = H.shape[0]
    if isinstance(n_bootstrap, bool) or not isinstance(n_bootstrap, (int, np.integer)) or n_bootstrap < 1:
        raise ParameterDomainError(f"n_bootstrap must be a positive integer, got {n_bootstrap!r}")
    if n < 2:
        raise DegenerateSampleError("wild bootstrap is undefined for n < 2")
    W = rademacher(int(n_bootstrap), n, seed)
    reps = quadratic_forms(H, W)
    raw = _raw_v(H)
    exceed = int(np.count_nonzero(reps >= raw))
    p = (1 + exceed) / (n_bootstrap + 1)
    reps.setflags(write=False)
    return BootstrapOutcome(v_statistic=v_statistic(H), p_value=p, replicates=reps)


def resolve_kernel(kernel, times, scale: float = 1.0) -> Kernel:
    """``None``/"median" -> median heuristic on ``times`` (times ``scale``);
    a number -> Gaussian bandwidth."""
    if kernel is None or (isinstance(kernel, str) and kernel == "median"):
        return gaussian_kernel(scale * median_heuristic(times))
    if isinstance(kernel, Kernel):
        return kernel
    return gaussian_kernel(kernel)


def run_test(sample: CensoredSample, model: NullModel, operator: str = "martingale",
             kernel=None, alpha: float = DEFAULT_ALPHA,
             n_bootstrap: int = DEFAULT_BOOTSTRAP, seed: int = 0,
             bandwidth_scale: float = 1.0) -> TestResult:
    """Goodness-of-fit test of ``sample`` against ``model`` with one Stein operator.

    ``kernel`` may be a :class:`Kernel`, a Gaussian bandwidth, or
    ``None``/``"median"``; ``bandwidth_scale`` multiplies the median
    heuristic and is ignored otherwise.  For ``martingale-uniform`` the
    median heuristic runs on the transformed times.
    """
    op = canonical_operator(operator)
    if not (0 < alpha < 1):
        raise ParameterDomainError(f"alpha must lie in (0, 1), got {alpha}")
    if sample.n < 2:
        raise DegenerateSampleError("wild bootstrap is undefined for n < 2")
    seed = _check_seed(seed)
    if op == "martingale-uniform":
        transformed = uniform_transform(sample, model)
        k = resolve_kernel(kernel, transformed.times, bandwidth_scale)
        g = stein_gram("martingale", transformed, STANDARD_UNIFORM, k)
        gram = SteinGram(g.matrix, op, g.bandwidth, model.describe())
    else:
        k = resolve_kernel(kernel, sample.times, bandwidth_scale)
        gram = stein_gram(op, sample, model, k)
    boot = wild_bootstrap_pvalue(gram, n_bootstrap, seed)
    return TestResult(
        operator=op,
        n=sample.n,
        n_events=sample.n_events,
        bandwidth=float(k.bandwidth),
        statistic=sample.n * boot.v_statistic,
        p_value=boot.p_value,
        reject=bool(boot.p_value < alpha),
        alpha=float(alpha),
        n_bootstrap=int(n_bootstrap),
        seed=seed,
        model=model.describe(),
    )


@dataclass(frozen=True)
class LogRankResult:
    weight: str
    z: float
    p_value: float
    u: float
    variance: float


def weighted_logrank(sample: CensoredSample, model: NullModel, weight: str = "LR1") -> LogRankResult:
    """One-sample weighted log-rank test.

    ``LR1`` uses ``w = 1``; ``LR2`` uses the risk function ``w(s) = Y(s)``.
    Integrals of the step weight against the null hazard are summed
    exactly over the partition by the sorted distinct observed times, with
    ``Y`` constant on each ``(t_{k-1}, t_k]``.
    """
    tag = weight.upper()
    times, events = sample.times, sample.events
    if tag == "LR1":
        Lam = np.asarray(model.cum_hazard(times), dtype=float)
        u = float(events.sum() - Lam.sum())
        var = float(Lam.sum())
    elif tag == "LR2":
        grid = np.unique(times)
        y = np.asarray(risk_function(sample).at(grid), dtype=float)
        Lam = np.asarray(model.cum_hazard(np.concatenate(([0.0], grid))), dtype=float)
        inc = np.diff(Lam)
        y_obs = np.asarray(risk_function(sample).at(times[events]), dtype=float)
        u = float(y_obs.sum() - np.sum(y * y * inc))
        var = float(np.sum(y**3 * inc))
    else:
        raise ParameterDomainError(f"unknown log-rank weight {weight!r}; use LR1 or LR2")
    if not math.isfinite(var):
        raise DegenerateVarianceError(f"{tag}: variance is not finite")
    if var <= 0:
        raise DegenerateVarianceError(f"{tag}: variance is zero")
    z = u / math.sqrt(var)
    return LogRankResult(tag, z, float(2 * norm.sf(abs(z))), u, var)
