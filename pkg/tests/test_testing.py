import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sample
from survksd.data import CensoredSample
from survksd.errors import DegenerateSampleError, DegenerateVarianceError, ParameterDomainError
from survksd.models import parse_model_spec
from survksd.simulation import calibrate_censoring, generate_censored
from survksd.stein import martingale_gram
from survksd.testing import (
    quadratic_forms,
    rademacher,
    run_test,
    v_statistic,
    weighted_logrank,
    wild_bootstrap_pvalue,
)

EXP1 = parse_model_spec("exp:rate=1")


class TestVStatistic:
    def test_examples(self):
        assert v_statistic(np.zeros((4, 4))) == 0.0
        assert v_statistic(np.array([[2.5]])) == 2.5
        assert v_statistic(np.array([[1.0, -1.0], [-1.0, 1.0]])) == 0.0

    def test_accepts_gram(self, rng):
        g = martingale_gram(random_sample(rng, 10), EXP1, 1.0)
        assert v_statistic(g) == v_statistic(g.matrix)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            v_statistic(np.zeros((2, 3)))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 25))
    def test_permutation_invariance(self, seed, n):
        r = np.random.default_rng(seed)
        s = random_sample(r, n)
        perm = r.permutation(n)
        a = v_statistic(martingale_gram(s, EXP1, 0.8))
        b = v_statistic(martingale_gram(s.take(perm), EXP1, 0.8))
        assert b == pytest.approx(a, rel=1e-12, abs=1e-15)


class TestBootstrap:
    def test_all_ones_replicate_equals_statistic(self, rng):
        H = martingale_gram(random_sample(rng, 37), EXP1, 0.6).matrix
        rep = quadratic_forms(H, np.ones((1, 37)))[0]
        assert rep == v_statistic(H)

    def test_identity_matrix(self):
        out = wild_bootstrap_pvalue(np.eye(7), n_bootstrap=99, seed=3)
        assert np.all(out.replicates == 1 / 7)
        assert out.p_value == 1.0

    def test_sign_flip_symmetry(self, rng):
        H = martingale_gram(random_sample(rng, 20), EXP1, 0.6).matrix
        W = rademacher(50, 20, 11).astype(float)
        np.testing.assert_array_equal(quadratic_forms(H, W), quadratic_forms(H, -W))

    def test_rademacher_values(self):
        W = rademacher(200, 30, 0)
        assert W.shape == (200, 30) and set(np.unique(W)) == {-1, 1}
        assert abs(W.mean()) < 0.05

    def test_deterministic(self, rng):
        H = martingale_gram(random_sample(rng, 50), EXP1, 0.6).matrix
        a = wild_bootstrap_pvalue(H, 300, seed=42)
        b = wild_bootstrap_pvalue(H.copy(), 300, seed=42)
        assert a.p_value == b.p_value
        assert a.replicates.tobytes() == b.replicates.tobytes()

    def test_chunking_does_not_change_result(self, rng, monkeypatch):
        import survksd.testing as mod
        H = martingale_gram(random_sample(rng, 30), EXP1, 0.6).matrix
        W = rademacher(64, 30, 5)
        whole = quadratic_forms(H, W)
        monkeypatch.setattr(mod, "_CHUNK_ELEMENTS", 30 * 30 * 3)
        assert quadratic_forms(H, W).tobytes() == whole.tobytes()

    @given(st.integers(0, 2**32 - 1), st.integers(1, 60))
    @settings(max_examples=30, deadline=None)
    def test_pvalue_range(self, seed, B):
        r = np.random.default_rng(seed)
        H = martingale_gram(random_sample(r, 8), EXP1, 1.0).matrix
        p = wild_bootstrap_pvalue(H, B, seed=seed).p_value
        assert 1 / (B + 1) <= p <= 1.0
        assert (p * (B + 1)) == pytest.approx(round(p * (B + 1)))

    @pytest.mark.parametrize("B", [0, -5, 2.5, True])
    def test_bad_bootstrap_count(self, B):
        with pytest.raises(ParameterDomainError):
            wild_bootstrap_pvalue(np.eye(3), B)

    @pytest.mark.parametrize("seed", [-1, 1.5, "x", 2**64])
    def test_bad_seed(self, seed):
        with pytest.raises(ParameterDomainError):
            wild_bootstrap_pvalue(np.eye(3), 10, seed=seed)


class TestRunTest:
    def test_survival_and_martingale_agree(self):
        s = generate_censored(EXP1, 100, calibrate_censoring(EXP1, 0.3), seed=7)
        a = run_test(s, EXP1, "s", n_bootstrap=200, seed=1)
        b = run_test(s, EXP1, "m", n_bootstrap=200, seed=1)
        assert a.statistic == b.statistic and a.p_value == b.p_value
        assert a.bandwidth == b.bandwidth

    def test_fields(self, rng):
        s = random_sample(rng, 40)
        r = run_test(s, EXP1, "mu", alpha=0.1, n_bootstrap=99, seed=5)
        assert r.operator == "martingale-uniform" and r.n == 40 and r.n_events == s.n_events
        assert r.reject == (r.p_value < 0.1)
        assert r.to_dict()["seed"] == 5 and r.statistic >= 0

    def test_n_one(self):
        with pytest.raises(DegenerateSampleError, match="n < 2"):
            run_test(CensoredSample([1.0], [1]), EXP1, "m")

    def test_bad_alpha(self, rng):
        with pytest.raises(ParameterDomainError):
            run_test(random_sample(rng, 5), EXP1, "m", alpha=1.5)

    def test_explicit_bandwidth_and_scale(self, rng):
        s = random_sample(rng, 30)
        assert run_test(s, EXP1, "m", kernel=0.37, n_bootstrap=10).bandwidth == 0.37
        base = run_test(s, EXP1, "m", n_bootstrap=10).bandwidth
        half = run_test(s, EXP1, "m", n_bootstrap=10, bandwidth_scale=0.5).bandwidth
        assert half == pytest.approx(base / 2, rel=1e-15)

    def test_proportional_pvalue_scale_invariant(self, rng):
        s = random_sample(rng, 60)
        m = parse_model_spec("weibull:shape=1.5,rate=1")
        a = run_test(s, m, "p", n_bootstrap=300, seed=9)
        b = run_test(s, m.scaled(3.0), "p", n_bootstrap=300, seed=9)
        assert a.p_value == b.p_value
        assert b.statistic == pytest.approx(9 * a.statistic, rel=1e-12)

    def test_strong_alternative_rejects(self):
        alt = parse_model_spec("weibull:shape=3,rate=1")
        s = generate_censored(alt, 150, 0.3, seed=2)
        assert run_test(s, EXP1, "m", n_bootstrap=200, seed=0).reject


class TestLogRank:
    def test_single_observation(self):
        r = weighted_logrank(CensoredSample([1.0], [1]), EXP1, "LR1")
        assert r.u == 0.0 and r.z == 0.0 and r.p_value == 1.0

    def test_all_censored_negative(self, rng):
        s = CensoredSample(rng.exponential(size=10), np.zeros(10, bool))
        r = weighted_logrank(s, EXP1, "LR1")
        assert r.u == pytest.approx(-s.times.sum()) and r.z < 0

    def test_lr2_by_hand(self):
        # times 1 (event), 2 (censored), 3 (event); Y = 3, 2, 1 on the three intervals
        s = CensoredSample([3.0, 1.0, 2.0], [1, 1, 0])
        r = weighted_logrank(s, EXP1, "lr2")
        assert r.u == pytest.approx((3 + 1) - (9 * 1 + 4 * 1 + 1 * 1))
        assert r.variance == pytest.approx(27 + 8 + 1)

    def test_degenerate_variance(self):
        with pytest.raises(DegenerateVarianceError):
            weighted_logrank(CensoredSample([0.0, 0.0], [0, 0]), EXP1, "LR1")

    def test_unknown_weight(self, rng):
        with pytest.raises(ParameterDomainError):
            weighted_logrank(random_sample(rng, 5), EXP1, "LR3")
