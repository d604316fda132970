import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sample
from oracles import brute_force_gram, brute_force_proportional, rel_error
from survksd.data import CensoredSample
from survksd.errors import (
    BoundaryConditionError,
    HazardSupportError,
    TransformOverflowError,
    UnsupportedFamilyError,
)
from survksd.kernels import gaussian_kernel, median_heuristic
from survksd.models import make_null_model, parse_model_spec
from survksd.stein import (
    STANDARD_UNIFORM,
    canonical_operator,
    martingale_gram,
    martingale_uniform_gram,
    proportional_gram,
    stein_gram,
    stein_kernel,
    survival_gram,
    uniform_transform,
)

EXP1 = parse_model_spec("exp:rate=1")
NULLS = {
    "exp": (parse_model_spec("exp:rate=1"), "exponential", {"rate": 1.0}),
    "exp2": (parse_model_spec("exp:rate=2.5"), "exponential", {"rate": 2.5}),
    "weibull": (parse_model_spec("weibull:shape=1.5,rate=1"), "weibull", {"shape": 1.5, "rate": 1.0}),
    "periodic": (parse_model_spec("periodic:freq=3"), "periodic", {"freq": 3.0}),
}


def _quiet_proportional(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return proportional_gram(*args, **kw)


def test_aliases():
    assert canonical_operator("s") == "survival"
    assert canonical_operator("mKSD") == "martingale"
    assert canonical_operator("mu") == "martingale-uniform"
    assert canonical_operator("P") == "proportional"
    with pytest.raises(UnsupportedFamilyError):
        canonical_operator("q")


class TestSurvival:
    def test_single_event_at_zero(self):
        g = survival_gram(CensoredSample([0.0], [1]), EXP1, 1.0)
        assert g.matrix[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_fully_censored_exp_r(self, rng):
        r = 2.5
        s = CensoredSample(rng.exponential(size=12), np.zeros(12, bool))
        k = gaussian_kernel(0.8)
        H = survival_gram(s, NULLS["exp2"][0], k).matrix
        t = s.times
        expect = r * r * (k.value(t[:, None], t[None, :]) - k.value(t[:, None], 0.0)
                          - k.value(0.0, t[None, :]) + 1.0)
        np.testing.assert_allclose(H, expect, rtol=1e-12, atol=1e-14)

    def test_boundary_condition(self, rng):
        s = random_sample(rng, 10)
        with pytest.raises(BoundaryConditionError, match=r"boundary condition b\)"):
            survival_gram(s, parse_model_spec("weibull:shape=0.5,rate=1"), 1.0)

    def test_zero_hazard_at_event(self):
        s = CensoredSample([0.0, 1.0], [1, 1])
        with pytest.raises(HazardSupportError, match="hazard-support"):
            survival_gram(s, NULLS["periodic"][0], 1.0)

    @pytest.mark.parametrize("r", [0.4, 1.0, 3.0])
    def test_relation_to_martingale_under_exponential(self, rng, r):
        s = random_sample(rng, 25)
        m = make_null_model("exponential", {"rate": r})
        Hs = survival_gram(s, m, 0.9).matrix
        Hm = martingale_gram(s, m, 0.9).matrix
        assert rel_error(Hs, r * r * Hm) < 1e-12
        if r == 1.0:
            assert np.array_equal(Hs, Hm)


class TestMartingale:
    def test_two_events_at_zero(self):
        H = martingale_gram(CensoredSample([0.0, 0.0], [1, 1]), EXP1, 1.0).matrix
        np.testing.assert_allclose(H, np.ones((2, 2)), atol=1e-15)

    def test_all_censored(self, rng):
        s = CensoredSample(rng.exponential(size=9), np.zeros(9, bool))
        k = gaussian_kernel(1.3)
        t = s.times
        expect = (k.value(t[:, None], t[None, :]) - k.value(t[:, None], 0.0)
                  - k.value(0.0, t[None, :]) + 1.0)
        H = martingale_gram(s, NULLS["weibull"][0], k).matrix
        np.testing.assert_allclose(H, expect, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("null", list(NULLS))
    def test_brute_force_20_points(self, rng, null):
        model, family, params = NULLS[null]
        s = random_sample(rng, 20)
        if null == "periodic":
            s = CensoredSample(s.times + 0.01, s.events)
        H = martingale_gram(s, model, 0.6).matrix
        assert rel_error(H, brute_force_gram("martingale", s.times, s.events, 0.6, family, **params)) < 1e-8

    def test_zero_hazard_at_event(self):
        with pytest.raises(HazardSupportError):
            martingale_gram(CensoredSample([0.0, 1.0], [1, 0]), NULLS["periodic"][0], 1.0)

    def test_zero_hazard_at_censored_point_is_fine(self):
        g = martingale_gram(CensoredSample([0.0, 1.0], [0, 1]), NULLS["periodic"][0], 1.0)
        assert np.all(np.isfinite(g.matrix))


class TestUniform:
    def test_transform(self):
        u = uniform_transform(CensoredSample([math.log(2), 0.0, 3.0], [1, 0, 1]), EXP1)
        assert u.times[0] == pytest.approx(0.5, rel=1e-15)
        assert u.times[1] == 0.0
        assert list(u.events) == [True, False, True]

    @given(st.lists(st.floats(0, 30), min_size=2, max_size=30))
    def test_monotone(self, times):
        s = CensoredSample(times, [True] * len(times))
        u = uniform_transform(s, EXP1)
        # distinct times may round to the same U, so only the weak order is preserved
        assert np.all(np.diff(u.times[np.argsort(s.times, kind="stable")]) >= 0)

    def test_overflow(self):
        with pytest.raises(TransformOverflowError, match="transform-overflow"):
            uniform_transform(CensoredSample([1.0, 50.0], [1, 1]), EXP1)

    def test_single_point(self):
        H = martingale_uniform_gram(CensoredSample([0.0], [1]), EXP1, 1.0).matrix
        assert H[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_uniform_quantiles_all_censored(self):
        u = np.linspace(0.05, 0.95, 10)
        s = CensoredSample(u, np.zeros(10, bool))
        k = gaussian_kernel(0.4)
        H = martingale_uniform_gram(s, STANDARD_UNIFORM, k).matrix
        expect = k.value(u[:, None], u[None, :]) - k.value(u[:, None], 0.0) - k.value(0.0, u[None, :]) + 1.0
        np.testing.assert_allclose(H, expect, rtol=1e-12, atol=1e-14)

    def test_equals_martingale_on_transformed(self, rng):
        s = random_sample(rng, 30)
        model = NULLS["weibull"][0]
        a = martingale_uniform_gram(s, model).matrix
        u = uniform_transform(s, model)
        b = martingale_gram(u, STANDARD_UNIFORM, median_heuristic(u.times)).matrix
        assert a.tobytes() == b.tobytes()


class TestProportional:
    def test_all_censored(self, rng):
        s = CensoredSample(rng.exponential(size=6), np.zeros(6, bool))
        assert np.all(_quiet_proportional(s, EXP1, 1.0).matrix == 0)

    def test_exponential_closed_form(self, rng):
        r = 2.5
        s = random_sample(rng, 15)
        k = gaussian_kernel(0.7)
        t, d = s.times, s.events.astype(float)
        y = np.array([(t >= v).sum() for v in t], dtype=float)
        expect = (15**2 * np.outer(d / y, d / y) * r * r * k.d12(t[:, None], t[None, :]))
        H = _quiet_proportional(s, NULLS["exp2"][0], k).matrix
        np.testing.assert_allclose(H, expect, rtol=1e-12, atol=1e-12 * np.abs(expect).max())

    def test_scale_equivariance(self, rng):
        s = random_sample(rng, 40)
        m = NULLS["weibull"][0]
        H1 = proportional_gram(s, m, 0.5).matrix
        H3 = proportional_gram(s, m.scaled(3.0), 0.5).matrix
        assert rel_error(H3, 9 * H1) < 1e-12

    def test_normalized_is_scale_invariant(self, rng):
        s = random_sample(rng, 40)
        m = NULLS["weibull"][0]
        a = proportional_gram(s, m, 0.5, normalize=True).matrix
        b = proportional_gram(s, m.scaled(3.0), 0.5, normalize=True).matrix
        assert rel_error(b, a) < 1e-12

    @pytest.mark.parametrize("null", list(NULLS))
    def test_brute_force(self, rng, null):
        model, family, params = NULLS[null]
        s = random_sample(rng, 10)
        if null == "periodic":
            s = CensoredSample(s.times + 0.01, s.events)
        H = _quiet_proportional(s, model, 0.6).matrix
        assert rel_error(H, brute_force_proportional(s.times, s.events, 0.6, family, **params)) < 1e-8

    def test_warns_when_hazard_positive_at_zero(self, rng):
        with pytest.warns(UserWarning, match="lambda0"):
            proportional_gram(random_sample(rng, 5), EXP1, 1.0)


class TestGramProperties:
    @pytest.mark.parametrize("op", ["survival", "martingale", "martingale-uniform", "proportional"])
    @pytest.mark.parametrize("null", ["exp", "weibull", "periodic"])
    def test_symmetric_psd(self, rng, op, null):
        model = NULLS[null][0]
        for n in (3, 30, 120):
            s = random_sample(rng, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                g = stein_gram(op, s, model, None)
            top = np.abs(g.matrix).max()
            assert g.asymmetry() <= 1e-12 * top
            assert g.min_eigenvalue() >= -1e-8 * n * top
            assert g.is_psd()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
    def test_brute_force_random(self, n, seed, sigma):
        r = np.random.default_rng(seed)
        s = random_sample(r, n, censor_prob=0.4)
        model, family, params = NULLS["weibull"]
        for op in ("survival", "martingale"):
            H = stein_gram(op, s, model, sigma).matrix
            assert rel_error(H, brute_force_gram(op, s.times, s.events, sigma, family, **params)) < 1e-8

    def test_metadata(self, rng):
        g = stein_gram("m", random_sample(rng, 8), EXP1, 0.75)
        assert g.operator == "martingale" and g.bandwidth == 0.75 and g.n == 8
        assert g.model == "exponential:rate=1"
        with pytest.raises(ValueError):
            g.matrix[0, 0] = 1.0


class TestPointwiseKernel:
    def test_matches_gram(self, rng):
        s = random_sample(rng, 12)
        k = gaussian_kernel(0.9)
        for op in ("survival", "martingale"):
            H = stein_gram(op, s, NULLS["weibull"][0], k).matrix
            col = stein_kernel(op, NULLS["weibull"][0], k, s.times, s.events, s.times[3], s.events[3])
            np.testing.assert_allclose(col, H[:, 3], rtol=1e-12, atol=1e-14)

    def test_proportional_rejected(self):
        with pytest.raises(UnsupportedFamilyError, match="deterministic"):
            stein_kernel("p", EXP1, gaussian_kernel(1.0), [1.0], [True], 1.0, True)
