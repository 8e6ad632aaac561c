import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import samn.probkit as pk


# ---------------------------------------------------------------------------
# gaussian_log_pdf


def test_log_pdf_standard_normal_at_zero():
    d = pk.DiagGaussian(mean=[0.0], log_variance=[0.0])
    np.testing.assert_allclose(pk.gaussian_log_pdf(np.array([0.0]), d), -0.9189385, atol=1e-7)


def test_log_pdf_standard_normal_at_one():
    d = pk.DiagGaussian(mean=[0.0], log_variance=[0.0])
    np.testing.assert_allclose(pk.gaussian_log_pdf(np.array([1.0]), d), -1.4189385, atol=1e-7)


def test_log_pdf_variance_four():
    d = pk.DiagGaussian.from_variance([0.0], [4.0])
    np.testing.assert_allclose(pk.gaussian_log_pdf(np.array([0.0]), d), -1.6120857, atol=1e-7)


def test_log_pdf_batched_and_dim_checked():
    d = pk.DiagGaussian(mean=[0.0, 0.0], log_variance=[0.0, 0.0])
    out = pk.gaussian_log_pdf(np.zeros((5, 2)), d)
    np.testing.assert_allclose(out, np.full(5, 2 * -0.9189385), atol=1e-6)
    with pytest.raises(ValueError):
        pk.gaussian_log_pdf(np.zeros(3), d)


def test_diag_gaussian_validation():
    with pytest.raises(ValueError):
        pk.DiagGaussian(mean=[0.0, 1.0], log_variance=[0.0])
    with pytest.raises(Exception):
        pk.DiagGaussian(mean=[np.nan], log_variance=[0.0])


# ---------------------------------------------------------------------------
# kl_diag_gaussians


def test_kl_self_is_zero():
    d = pk.DiagGaussian(mean=[1.0, -2.0], log_variance=[0.3, -0.1])
    assert pk.kl_diag_gaussians(d, d) == 0.0


def test_kl_unit_mean_shift():
    a = pk.DiagGaussian(mean=[1.0], log_variance=[0.0])
    b = pk.DiagGaussian(mean=[0.0], log_variance=[0.0])
    np.testing.assert_allclose(pk.kl_diag_gaussians(a, b), 0.5)


def test_kl_variance_two_vs_one():
    a = pk.DiagGaussian.from_variance([0.0], [2.0])
    b = pk.DiagGaussian.from_variance([0.0], [1.0])
    np.testing.assert_allclose(pk.kl_diag_gaussians(a, b), 0.1534264, atol=1e-7)


def test_kl_dim_mismatch():
    a = pk.DiagGaussian(mean=[0.0], log_variance=[0.0])
    b = pk.DiagGaussian(mean=[0.0, 0.0], log_variance=[0.0, 0.0])
    with pytest.raises(ValueError):
        pk.kl_diag_gaussians(a, b)


@given(
    st.integers(1, 4),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=100, deadline=None)
def test_kl_nonnegative_random_pairs(dim, seed):
    rng = np.random.default_rng(seed)
    a = pk.DiagGaussian(rng.normal(0, 2, dim), rng.normal(0, 1, dim))
    b = pk.DiagGaussian(rng.normal(0, 2, dim), rng.normal(0, 1, dim))
    assert pk.kl_diag_gaussians(a, b) >= 0.0
    assert pk.kl_diag_gaussians(a, a) == 0.0


def test_kl_zero_iff_equal():
    a = pk.DiagGaussian(mean=[0.5], log_variance=[0.1])
    b = pk.DiagGaussian(mean=[0.5], log_variance=[0.1000001])
    assert pk.kl_diag_gaussians(a, b) > 0.0


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(11)
    a = pk.DiagGaussian(mean=[0.7, -0.3], log_variance=[0.2, -0.4])
    b = pk.DiagGaussian(mean=[0.0, 0.5], log_variance=[0.0, 0.3])
    n = 100_000
    x = a.sample(rng, n)
    diffs = pk.gaussian_log_pdf(x, a) - pk.gaussian_log_pdf(x, b)
    mc = np.mean(diffs)
    se = np.std(diffs) / np.sqrt(n)
    assert abs(mc - pk.kl_diag_gaussians(a, b)) <= 3.0 * se


# ---------------------------------------------------------------------------
# bernoulli_log_pmf


def test_bernoulli_single_pixel():
    np.testing.assert_allclose(
        pk.bernoulli_log_pmf(np.array([1.0]), np.array([0.5])), -0.6931472, atol=1e-7
    )


def test_bernoulli_two_pixels():
    np.testing.assert_allclose(
        pk.bernoulli_log_pmf(np.array([1.0, 0.0]), np.array([0.9, 0.1])),
        2 * np.log(0.9),
        atol=1e-7,
    )


def test_bernoulli_gray_pixel():
    np.testing.assert_allclose(
        pk.bernoulli_log_pmf(np.array([0.5]), np.array([0.5])), -0.6931472, atol=1e-7
    )


def test_bernoulli_clamps_saturated_probs():
    out = pk.bernoulli_log_pmf(np.array([1.0]), np.array([1.0]))
    np.testing.assert_allclose(out, np.log(1.0 - pk.BERNOULLI_EPS))
    out = pk.bernoulli_log_pmf(np.array([1.0]), np.array([0.0]))
    np.testing.assert_allclose(out, np.log(pk.BERNOULLI_EPS))


def test_bernoulli_dim_mismatch():
    with pytest.raises(ValueError):
        pk.bernoulli_log_pmf(np.zeros(2), np.full(3, 0.5))


# ---------------------------------------------------------------------------
# kl_to_std_normal


def test_kl_to_std_normal_matches_general_kl():
    rng = np.random.default_rng(12)
    mean = rng.normal(0, 1, 4)
    log_var = rng.normal(0, 0.5, 4)
    a = pk.DiagGaussian(mean, log_var)
    b = pk.DiagGaussian(np.zeros(4), np.zeros(4))
    np.testing.assert_allclose(
        pk.kl_to_std_normal(mean, log_var), pk.kl_diag_gaussians(a, b), atol=1e-12
    )


# ---------------------------------------------------------------------------
# schedules


def test_linear_schedule_two_steps():
    sch = pk.build_linear_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sch.betas, [0.1, 0.2])
    np.testing.assert_allclose(sch.alpha_bars, [0.9, 0.72])


def test_linear_schedule_single_step():
    sch = pk.build_linear_schedule(1, 0.5, 0.5)
    np.testing.assert_allclose(sch.alpha_bars, [0.5])


def test_linear_schedule_standard_thousand():
    sch = pk.build_linear_schedule(1000, 1e-4, 0.02)
    # brute-force product oracle
    betas = np.linspace(1e-4, 0.02, 1000)
    expected = 1.0
    for b in betas:
        expected *= 1.0 - b
    np.testing.assert_allclose(sch.alpha_bar(1000), expected, rtol=1e-12)
    assert 3.5e-5 < sch.alpha_bar(1000) < 4.5e-5


def test_schedule_monotone_and_in_range():
    sch = pk.build_linear_schedule(200, 5e-4, 0.1)
    assert np.all(np.diff(sch.alpha_bars) < 0)
    assert np.all((sch.alpha_bars > 0) & (sch.alpha_bars < 1))
    np.testing.assert_allclose(
        sch.alpha_bars[1:], sch.alpha_bars[:-1] * (1.0 - sch.betas[1:]), rtol=1e-12
    )


def test_schedule_bounds_rejected():
    with pytest.raises(ValueError):
        pk.build_linear_schedule(0, 0.1, 0.2)
    with pytest.raises(ValueError):
        pk.build_linear_schedule(10, 0.0, 0.2)
    with pytest.raises(ValueError):
        pk.build_linear_schedule(10, 0.3, 0.2)
    with pytest.raises(ValueError):
        pk.build_linear_schedule(10, 0.3, 1.0)


def test_schedule_t_range_checked():
    sch = pk.build_linear_schedule(10, 0.1, 0.2)
    with pytest.raises(ValueError):
        sch.beta(0)
    with pytest.raises(ValueError):
        sch.alpha_bar(11)
    assert sch.alpha_bar(0) == 1.0


# ---------------------------------------------------------------------------
# forward_noise


def test_forward_noise_zero_eps():
    sch = pk.build_linear_schedule(10, 0.1, 0.2)
    x0 = np.array([1.0, -2.0])
    out = pk.forward_noise(sch, x0, 3, np.zeros(2))
    np.testing.assert_allclose(out, np.sqrt(sch.alpha_bar(3)) * x0)


def test_forward_noise_arithmetic():
    sch = pk.NoiseSchedule(betas=np.array([0.75]), alpha_bars=np.array([0.25]))
    out = pk.forward_noise(sch, np.array([1.0]), 1, np.array([1.0]))
    np.testing.assert_allclose(out, [0.5 + np.sqrt(0.75)], atol=1e-7)
    np.testing.assert_allclose(out, [1.3660254], atol=1e-7)


def test_forward_noise_terminal_step_mostly_noise():
    sch = pk.build_linear_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(13)
    x0 = rng.uniform(-1, 1, 64)
    eps = rng.standard_normal(64)
    out = pk.forward_noise(sch, x0, 1000, eps)
    # sqrt(abar_T) < 0.007 and sqrt(1 - abar_T) within 3e-5 of 1
    assert np.all(np.abs(out - eps) <= 0.007 * np.abs(x0) + 3e-5 * np.abs(eps))


def test_forward_noise_t_out_of_range():
    sch = pk.build_linear_schedule(5, 0.1, 0.2)
    with pytest.raises(ValueError):
        pk.forward_noise(sch, np.zeros(2), 0, np.zeros(2))
    with pytest.raises(ValueError):
        pk.forward_noise(sch, np.zeros(2), 6, np.zeros(2))


def test_forward_noise_per_row_timesteps():
    sch = pk.build_linear_schedule(10, 0.1, 0.2)
    x0 = np.ones((3, 2))
    eps = np.zeros((3, 2))
    out = pk.forward_noise(sch, x0, np.array([1, 5, 10]), eps)
    expected = np.sqrt([sch.alpha_bar(1), sch.alpha_bar(5), sch.alpha_bar(10)])
    np.testing.assert_allclose(out, np.repeat(expected[:, None], 2, axis=1))


def test_forward_noise_marginal_variance():
    sch = pk.build_linear_schedule(50, 0.01, 0.1)
    rng = np.random.default_rng(14)
    t = 25
    x0 = np.array([0.3, 0.7])
    n = 200_000
    eps = rng.standard_normal((n, 2))
    xt = pk.forward_noise(sch, x0, t, eps)
    var = xt.var(axis=0)
    np.testing.assert_allclose(var, 1.0 - sch.alpha_bar(t), rtol=0.02)
