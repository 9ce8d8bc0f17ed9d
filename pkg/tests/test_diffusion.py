import math

import numpy as np
import pytest

from difflane import diffusion as D

SCHED = D.cosine_schedule(1000)
SCALE = D.ScaleConfig(2.0)


class TestCosineSchedule:
    def test_alpha0_near_one(self):
        assert 0.9999 < SCHED.alpha_cumprod[0] <= 1.0

    def test_strictly_decreasing_bounded(self):
        a = SCHED.alpha_cumprod
        assert (np.diff(a) < 0).all()
        assert (a > 0).all() and (a <= 1).all()

    def test_closed_form_midpoint(self):
        # independent re-evaluation of the closed form at t=500
        s = 0.008

        def f(t):
            return math.cos(((t / 1000) + s) / (1 + s) * math.pi / 2) ** 2

        assert SCHED.alpha_cumprod[500] == pytest.approx(f(500) / f(0), abs=1e-12)

    def test_t_max_one(self):
        sched = D.cosine_schedule(1)
        assert sched.alpha_cumprod.shape == (1,)


class TestNormalize:
    def test_midpoint(self):
        assert D.normalize(0.5, SCALE) == 0.0

    def test_unit(self):
        assert D.normalize(1.0, SCALE) == 2.0
        assert D.denormalize(2.0, SCALE) == 1.0

    def test_clamp(self):
        assert D.denormalize(3.7, SCALE) == 1.0
        assert D.denormalize(-9.0, SCALE) == 0.0

    def test_identity_on_unit_interval(self):
        p = np.linspace(0, 1, 101)
        assert np.abs(D.denormalize(D.normalize(p, SCALE), SCALE) - p).max() < 1e-12

    def test_denormalize_range(self):
        x = np.random.default_rng(0).normal(0, 5, 1000)
        out = D.denormalize(x, SCALE)
        assert (out >= 0).all() and (out <= 1).all()


class TestCorrupt:
    def test_zero_noise(self):
        x0 = np.array([1.0, -0.5, 0.3])
        out = D.corrupt(x0, 400, np.zeros(3), SCHED)
        assert np.allclose(out, math.sqrt(SCHED.alpha_cumprod[400]) * x0)

    def test_t0_near_identity(self):
        x0 = np.array([1.5, -1.0, 0.2])
        eps = np.array([0.7, -0.3, 1.1])
        out = D.corrupt(x0, 0, eps, SCHED)
        assert np.abs(out - x0).max() < 0.02 * np.abs(x0).max() + 0.02 * np.abs(eps).max()

    def test_noise_recovery(self):
        rng = np.random.default_rng(4)
        for t in (1, 250, 999):
            x0 = rng.normal(0, 2, 3)
            eps = rng.normal(0, 1, 3)
            x_t = D.corrupt(x0, t, eps, SCHED)
            abar = SCHED.alpha_cumprod[t]
            eps_hat = (x_t - math.sqrt(abar) * x0) / math.sqrt(1 - abar)
            assert np.abs(eps_hat - eps).max() < 1e-9

    def test_bad_t_rejected(self):
        with pytest.raises(ValueError):
            D.corrupt(np.zeros(3), 1000, np.zeros(3), SCHED)


class TestDDIM:
    def test_terminal_step_returns_prediction(self):
        x0 = np.array([0.5, -0.2, 1.0])
        out = D.ddim_step(np.ones(3), x0, 499, -1, SCHED)
        assert np.array_equal(out, x0)

    def test_perfect_predictor_matches_corrupt(self):
        rng = np.random.default_rng(9)
        x0 = rng.normal(0, 1, 3)
        eps = rng.normal(0, 1, 3)
        x_t = D.corrupt(x0, 800, eps, SCHED)
        out = D.ddim_step(x_t, x0, 800, 300, SCHED)
        assert np.abs(out - D.corrupt(x0, 300, eps, SCHED)).max() < 1e-9

    def test_zero_eps_hat(self):
        x0 = np.array([1.0, 2.0, -1.0])
        x_t = math.sqrt(SCHED.alpha_cumprod[700]) * x0
        out = D.ddim_step(x_t, x0, 700, 100, SCHED)
        assert np.allclose(out, math.sqrt(SCHED.alpha_cumprod[100]) * x0)

    def test_prediction_clamped(self):
        out = D.ddim_step(np.zeros(3), np.array([5.0, -5.0, 0.0]), 10, -1,
                          SCHED, SCALE)
        assert out.tolist() == [2.0, -2.0, 0.0]

    def test_contract_violation(self):
        with pytest.raises(ValueError):
            D.ddim_step(np.zeros(3), np.zeros(3), 100, 100, SCHED)

    def test_chain_with_perfect_predictor_recovers_x0(self):
        rng = np.random.default_rng(2)
        x0 = rng.normal(0, 1, 3)
        x_t = D.corrupt(x0, 999, rng.normal(0, 1, 3), SCHED)
        for t_now, t_next in D.time_pairs(4, 1000):
            x_t = D.ddim_step(x_t, x0, t_now, t_next, SCHED)
        assert np.abs(x_t - x0).max() < 1e-9


class TestTimePairs:
    def test_single_step(self):
        assert D.time_pairs(1, 1000) == [(999, -1)]

    def test_two_steps(self):
        assert D.time_pairs(2, 1000) == [(999, 499), (499, -1)]

    def test_full_schedule(self):
        pairs = D.time_pairs(10, 10)
        assert pairs == [(t, t - 1) for t in range(9, -1, -1)]

    def test_strictly_decreasing_and_terminal(self):
        for steps in (1, 2, 3, 7, 50):
            pairs = D.time_pairs(steps, 1000)
            assert pairs[-1][1] == -1
            assert pairs[0][0] == 999
            for (a, b), (c, d) in zip(pairs, pairs[1:]):
                assert b == c and b < a and d < c


class TestStatistics:
    def test_corruption_variance(self):
        # empirical Var[x_t] over unit-normal noise must equal 1 - abar within
        # 3 sigma of the variance estimator (n=10^5, x0 = 0)
        rng = np.random.default_rng(17)
        n = 100_000
        for t in (100, 500, 900):
            eps = rng.standard_normal(n)
            x_t = D.corrupt(np.zeros(n), t, eps, SCHED)
            var = x_t.var()
            expected = 1 - SCHED.alpha_cumprod[t]
            sigma_est = expected * math.sqrt(2 / (n - 1))
            assert abs(var - expected) < 3 * sigma_est

    def test_affine_in_inputs(self):
        rng = np.random.default_rng(8)
        x0, eps = rng.normal(size=3), rng.normal(size=3)
        a = D.corrupt(x0, 300, eps, SCHED)
        b = D.corrupt(2 * x0, 300, 3 * eps, SCHED)
        sa = math.sqrt(SCHED.alpha_cumprod[300])
        se = math.sqrt(1 - SCHED.alpha_cumprod[300])
        assert np.allclose(b, 2 * sa * x0 + 3 * se * eps)
        assert np.allclose(a, sa * x0 + se * eps)
