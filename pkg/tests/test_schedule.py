import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffmia.schedule import (NoiseSchedule, build_linear_schedule, posterior_coefficients,
                              q_sample, schedule_from_betas, true_posterior)

# running product of the linear schedule, 50-digit arithmetic
ABAR_100_ORACLE = 0.36356324805549191544721959986


def test_two_step_products():
    s = schedule_from_betas([0.1, 0.2])
    np.testing.assert_allclose(s.alphas, [0.9, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72], rtol=0, atol=1e-15)


def test_single_step():
    s = schedule_from_betas([0.5])
    assert s.alpha_bars.tolist() == [0.5]


def test_linear_schedule_terminal_alpha_bar():
    s = build_linear_schedule(100, 1e-4, 0.02)
    assert s.alpha_bar(100) == pytest.approx(ABAR_100_ORACLE, rel=1e-13)


def test_alpha_bar_zero_is_one():
    s = build_linear_schedule(10)
    assert s.alpha_bar(0) == 1.0
    np.testing.assert_array_equal(s.alpha_bar(np.array([0, 1])), [1.0, s.alpha_bars[0]])


def test_endpoints_are_inclusive():
    s = build_linear_schedule(100, 1e-4, 0.02)
    assert s.beta(1) == 1e-4
    assert s.beta(100) == pytest.approx(0.02, abs=1e-17)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02),
                                  (10, 1e-4, 1.0)])
def test_invalid_schedules_rejected(args):
    with pytest.raises(ValueError):
        build_linear_schedule(*args)


def test_arrays_are_read_only():
    s = build_linear_schedule(5)
    with pytest.raises(ValueError):
        s.alpha_bars[0] = 0.5


@given(st.lists(st.floats(1e-6, 0.5), min_size=1, max_size=60))
def test_alpha_bars_monotone_product(betas):
    s = schedule_from_betas(betas)
    assert np.all(np.diff(s.alpha_bars) < 0) or len(betas) == 1
    acc = 1.0
    for b, ab in zip(betas, s.alpha_bars):
        acc *= 1.0 - b
        assert ab == acc


def test_describe_round_trip():
    s = build_linear_schedule(37, 2e-4, 0.03)
    assert NoiseSchedule.from_description(s.describe()) == s
    assert hash(NoiseSchedule.from_description(s.describe())) == hash(s)


def test_q_sample_zero():
    s = build_linear_schedule(10)
    np.testing.assert_array_equal(q_sample(s, np.zeros(3), 4, np.zeros(3)), np.zeros(3))


def test_q_sample_closed_form_quarter():
    s = schedule_from_betas([0.75])
    assert s.alpha_bar(1) == 0.25
    out = q_sample(s, np.array([1.0]), 1, np.array([1.0]))
    assert out[0] == pytest.approx(0.5 + math.sqrt(0.75), abs=1e-15)
    assert out[0] == pytest.approx(1.36603, abs=1e-5)


def test_q_sample_two_step_schedule():
    s = schedule_from_betas([0.1, 0.2])
    out = q_sample(s, np.array([1.0]), 2, np.array([0.0]))
    assert out[0] == pytest.approx(math.sqrt(0.72), abs=1e-15)
    assert out[0] == pytest.approx(0.84853, abs=1e-5)


def test_q_sample_batched_timesteps(rng):
    s = build_linear_schedule(20)
    x0, eps = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    t = np.array([1, 5, 10, 20])
    batch = q_sample(s, x0, t, eps)
    for i in range(4):
        np.testing.assert_array_equal(batch[i], q_sample(s, x0[i], int(t[i]), eps[i]))


def test_q_sample_rejects_bad_timestep():
    s = build_linear_schedule(10)
    with pytest.raises(ValueError):
        q_sample(s, np.zeros(2), 0, np.zeros(2))
    with pytest.raises(ValueError):
        q_sample(s, np.zeros(2), 11, np.zeros(2))


def test_q_sample_marginal_statistics():
    s = build_linear_schedule(100)
    t, x0, n = 40, np.array([0.7]), 100_000
    eps = np.random.default_rng(0).standard_normal((n, 1))
    xs = q_sample(s, np.broadcast_to(x0, (n, 1)), t, eps)[:, 0]
    ab = s.alpha_bar(t)
    mean, var = math.sqrt(ab) * 0.7, 1 - ab
    assert abs(xs.mean() - mean) < 3 * math.sqrt(var / n)
    # standard error of a sample variance for Gaussian data
    assert abs(xs.var() - var) < 3 * var * math.sqrt(2 / (n - 1))


def test_chained_single_steps_match_marginal():
    s = build_linear_schedule(30)
    n, t = 100_000, 12
    rng = np.random.default_rng(1)
    x = np.full(n, 0.5)
    for step in range(1, t + 1):
        x = math.sqrt(s.alpha(step)) * x + math.sqrt(s.beta(step)) * rng.standard_normal(n)
    ab = s.alpha_bar(t)
    assert abs(x.mean() - math.sqrt(ab) * 0.5) < 3 * math.sqrt((1 - ab) / n)
    assert abs(x.var() - (1 - ab)) < 3 * (1 - ab) * math.sqrt(2 / (n - 1))


def test_posterior_zero():
    s = schedule_from_betas([0.1, 0.2])
    post = true_posterior(s, np.zeros(2), np.zeros(2), 2)
    np.testing.assert_array_equal(post.mean, np.zeros(2))


def test_posterior_coefficient_and_variance():
    s = schedule_from_betas([0.1, 0.2])
    c0, _ = posterior_coefficients(s, 2)
    assert c0 == pytest.approx(0.67763092717893842829, rel=1e-14)
    assert true_posterior(s, [0.0], [0.0], 2).variance == pytest.approx(
        0.071428571428571428571, rel=1e-14)


def test_posterior_t1_is_guarded():
    s = schedule_from_betas([0.1, 0.2])
    with pytest.raises(ValueError):
        true_posterior(s, [1.0], [1.0], 1)
    post = true_posterior(s, [1.0], [3.0], 1, allow_t1=True)
    assert post.variance == 0.0
    np.testing.assert_allclose(post.mean, [1.0])


def test_posterior_coefficient_on_x0_tends_to_one():
    # abar_{t-1} -> 1 makes the posterior mean collapse onto x0
    coeffs = []
    for b1 in (1e-2, 1e-4, 1e-6, 1e-8):
        s = schedule_from_betas([b1, 0.1])
        c0, ct = posterior_coefficients(s, 2)
        coeffs.append(c0)
        assert 0 < c0 <= 1 and ct >= 0
    assert all(a < b for a, b in zip(coeffs, coeffs[1:]))
    assert coeffs[-1] == pytest.approx(1.0, abs=1e-6)
