"""Noise schedules, forward/reverse steps, and respacing."""

import numpy as np
import pytest

from lactdiff.core import Image, ParameterError, SeededRng
from lactdiff.diffusion import (
    NoiseSchedule,
    cosine_schedule,
    default_linear_schedule,
    forward_sample,
    interpolate_variance,
    linear_schedule,
    respace,
    reverse_step,
)


def tiny_schedule():
    return NoiseSchedule.from_betas([0.1, 0.2, 0.3, 0.4])


class TestSchedules:
    def test_hand_product(self):
        sched = tiny_schedule()
        assert np.allclose(sched.alpha_bar, [0.9, 0.72, 0.504, 0.3024], rtol=1e-12)
        assert sched.beta_tilde[0] == 0.0

    def test_single_step(self):
        sched = linear_schedule(1, 0.25, 0.25)
        assert sched.alpha_bar_at(1) == pytest.approx(0.75)

    def test_training_length_builds(self):
        sched = linear_schedule(2000, 1e-4 * 0.5, 0.02 * 0.5)
        assert sched.T == 2000
        assert np.all(np.diff(sched.alpha_bar) < 0.0)
        assert np.all(sched.beta_tilde <= sched.beta + 1e-15)

    def test_default_schedule_rescales_endpoints(self):
        sched = default_linear_schedule(2000)
        assert sched.beta_at(1) == pytest.approx(5e-5)
        assert sched.beta_at(2000) == pytest.approx(0.01)

    def test_endpoint_validation(self):
        with pytest.raises(ParameterError):
            linear_schedule(10, 0.0, 0.5)
        with pytest.raises(ParameterError):
            linear_schedule(10, 0.5, 0.1)
        with pytest.raises(ParameterError):
            linear_schedule(0, 0.1, 0.2)

    def test_cosine_profile(self):
        sched = cosine_schedule(1000)
        assert sched.alpha_bar_at(1) >= 0.99
        assert sched.alpha_bar_at(1000) < sched.alpha_bar_at(1)
        assert np.all(sched.beta <= 0.999)

    def test_timestep_bounds(self):
        sched = tiny_schedule()
        with pytest.raises(ParameterError):
            sched.alpha_bar_at(0)
        with pytest.raises(ParameterError):
            sched.alpha_bar_at(5)

    def test_audit_table(self):
        table = tiny_schedule().to_table()
        lines = table.strip().splitlines()
        assert lines[0].split() == ["t", "beta", "alpha_bar", "beta_tilde"]
        assert len(lines) == 5


class TestForwardSample:
    def test_zero_noise(self):
        sched = tiny_schedule()
        x0 = Image(2, 2, np.full((2, 2), 2.0))
        eps = Image(2, 2, np.zeros((2, 2)))
        out = forward_sample(x0, 3, eps, sched)
        assert np.allclose(out.as_f64(), np.sqrt(0.504) * 2.0, rtol=1e-6)

    def test_zero_signal(self):
        sched = tiny_schedule()
        x0 = Image(2, 2, np.zeros((2, 2)))
        eps = Image(2, 2, np.full((2, 2), -1.0))
        out = forward_sample(x0, 2, eps, sched)
        assert np.allclose(out.as_f64(), -np.sqrt(1.0 - 0.72), rtol=1e-6)

    def test_chain_matches_marginal_moments(self):
        # one-step transitions composed t times agree with the closed-form
        # marginal in mean and variance at Monte-Carlo precision
        sched = linear_schedule(100, 1e-3, 0.05)
        t_check, n = 60, 20000
        x0 = 0.8
        rng = SeededRng(99)
        x = np.full(n, x0)
        for t in range(1, t_check + 1):
            beta = sched.beta_at(t)
            x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.standard_normal(n)
        ab = sched.alpha_bar_at(t_check)
        mean_th, var_th = np.sqrt(ab) * x0, 1.0 - ab
        assert abs(x.mean() - mean_th) <= 3.0 * np.sqrt(var_th / n)
        assert abs(x.var(ddof=1) - var_th) <= 3.0 * var_th * np.sqrt(2.0 / (n - 1))


class TestVarianceInterpolation:
    def test_endpoints_and_midpoint(self):
        sched = tiny_schedule()
        ones = Image(1, 2, np.ones((1, 2)))
        zeros = Image(1, 2, np.zeros((1, 2)))
        halves = Image(1, 2, np.full((1, 2), 0.5))
        t = 3
        beta, bt = sched.beta_at(t), sched.beta_tilde_at(t)
        assert np.allclose(interpolate_variance(ones, t, sched).as_f64(), beta, rtol=1e-6)
        assert np.allclose(interpolate_variance(zeros, t, sched).as_f64(), bt, rtol=1e-6)
        assert np.allclose(
            interpolate_variance(halves, t, sched).as_f64(),
            np.sqrt(beta * bt),
            rtol=1e-6,
        )

    def test_first_step_is_deterministic(self):
        sched = tiny_schedule()
        v = Image(1, 2, np.full((1, 2), 0.7))
        assert np.all(interpolate_variance(v, 1, sched).as_f64() == 0.0)


class TestReverseStep:
    def test_vanishing_step_is_identity(self):
        sched = NoiseSchedule.from_betas([1e-12])
        x = Image(2, 2, np.array([[0.3, -1.2], [2.0, 0.0]]))
        zeros = Image(2, 2, np.zeros((2, 2)))
        out = reverse_step(x, zeros, zeros, 1, sched, zeros)
        assert np.allclose(out.as_f64(), x.as_f64(), atol=1e-9)

    def test_scalar_hand_oracle(self):
        # independent arithmetic for t=3 on the beta=[.1,.2,.3,.4] schedule
        sched = tiny_schedule()
        x0, eps_val = 1.3, 0.4
        alpha3, ab3 = 0.7, 0.504
        x3 = np.sqrt(ab3) * x0 + np.sqrt(1.0 - ab3) * eps_val
        expected = (x3 - (1.0 - alpha3) / np.sqrt(1.0 - ab3) * eps_val) / np.sqrt(alpha3)

        # the same quantities through the library
        x0_img = Image(1, 1, [[x0]])
        eps_img = Image(1, 1, [[eps_val]])
        zeros = Image(1, 1, [[0.0]])
        x3_img = forward_sample(x0_img, 3, eps_img, sched)
        out = reverse_step(x3_img, eps_img, zeros, 3, sched, zeros)
        assert out.as_f64()[0, 0] == pytest.approx(expected, rel=1e-6)

    def test_noise_variance_injected(self):
        sched = tiny_schedule()
        n = 100000
        c = 0.37
        rng = SeededRng(17)
        z = rng.standard_normal(n)
        x = Image(1, n, np.zeros((1, n)))
        out = reverse_step(
            x,
            Image(1, n, np.zeros((1, n))),
            Image(1, n, np.full((1, n), c)),
            2,
            sched,
            Image(1, n, z.reshape(1, n)),
        )
        var = out.as_f64().var(ddof=1)
        assert abs(var - c) <= 3.0 * c * np.sqrt(2.0 / (n - 1))

    def test_negative_variance_rejected(self):
        sched = tiny_schedule()
        x = Image(1, 1, [[0.0]])
        bad = Image(1, 1, [[-1e-3]])
        with pytest.raises(ParameterError):
            reverse_step(x, x, bad, 2, sched, x)


class TestRespace:
    def test_subsequence_property(self):
        sched = linear_schedule(10, 0.01, 0.3)
        tmap = respace(sched, 9)
        assert tmap.K >= 8
        assert np.array_equal(
            tmap.schedule.alpha_bar, sched.alpha_bar[tmap.indices - 1]
        )

    def test_single_step(self):
        sched = linear_schedule(10, 0.01, 0.3)
        tmap = respace(sched, 1)
        assert tmap.K == 1
        idx = int(tmap.indices[0])
        assert tmap.schedule.beta_at(1) == pytest.approx(
            1.0 - sched.alpha_bar_at(idx), rel=1e-12
        )

    def test_rounding_collisions_deduplicate(self):
        sched = linear_schedule(5, 0.01, 0.3)
        tmap = respace(sched, 4)
        assert tmap.K == np.unique(tmap.indices).size

    def test_bounds(self):
        sched = linear_schedule(10, 0.01, 0.3)
        with pytest.raises(ParameterError):
            respace(sched, 0)
        with pytest.raises(ParameterError):
            respace(sched, 10)

    def test_paper_operating_point(self):
        sched = default_linear_schedule(2000)
        tmap = respace(sched, 50)
        resp = tmap.schedule
        assert np.all(np.diff(resp.alpha_bar) < 0.0)
        assert resp.beta_tilde[0] == 0.0
        assert np.all(resp.beta_tilde <= resp.beta + 1e-15)
