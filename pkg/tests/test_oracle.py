import numpy as np
import pytest

import samn.oracle as orc
from samn.probkit import DiagGaussian, kl_diag_gaussians


# ---------------------------------------------------------------------------
# fit_gaussian_mle


def test_mle_two_samples():
    fit = orc.fit_gaussian_mle(samples=np.array([[0.0], [2.0]]))
    np.testing.assert_allclose(fit.mean, [1.0])
    np.testing.assert_allclose(fit.variance, [1.0])


def test_mle_exact_moments():
    target = DiagGaussian.from_variance([3.0], [5.0])
    fit = orc.fit_gaussian_mle(moments=target)
    np.testing.assert_array_equal(fit.mean, [3.0])
    np.testing.assert_allclose(fit.variance, [5.0], rtol=1e-15)


def test_mle_large_sample_clt_bounds():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1_000_000, 1))
    fit = orc.fit_gaussian_mle(samples=x)
    # 3-sigma CLT bounds: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n)
    assert abs(fit.mean[0]) < 0.004
    assert abs(fit.variance[0] - 1.0) < 0.006


def test_mle_uses_biased_variance():
    x = np.array([[0.0], [1.0], [2.0]])
    fit = orc.fit_gaussian_mle(samples=x)
    np.testing.assert_allclose(fit.variance, [2.0 / 3.0])


def test_mle_rejects_degenerate():
    with pytest.raises(ValueError):
        orc.fit_gaussian_mle(samples=np.array([[1.0], [1.0]]))
    with pytest.raises(ValueError):
        orc.fit_gaussian_mle(samples=np.array([[1.0]]))


# ---------------------------------------------------------------------------
# expected_log_density


def test_expected_log_density_closed_form():
    d1 = DiagGaussian.from_variance([1.0], [2.0])
    d2 = DiagGaussian.from_variance([0.0], [4.0])
    expected = -0.5 * np.log(2 * np.pi * 4.0) - (2.0 + 1.0) / 8.0
    np.testing.assert_allclose(orc.expected_log_density(d1, d2), expected, rtol=1e-12)


def test_expected_log_density_matches_mc():
    rng = np.random.default_rng(1)
    d1 = DiagGaussian(rng.normal(0, 1, 3), rng.normal(0, 0.5, 3))
    d2 = DiagGaussian(rng.normal(0, 1, 3), rng.normal(0, 0.5, 3))
    n = 200_000
    x = d1.sample(rng, n)
    from samn.probkit import gaussian_log_pdf

    vals = gaussian_log_pdf(x, d2)
    se = np.std(vals) / np.sqrt(n)
    assert abs(np.mean(vals) - orc.expected_log_density(d1, d2)) <= 3 * se


def test_expected_log_density_dim_mismatch():
    d1 = DiagGaussian([0.0], [0.0])
    d2 = DiagGaussian([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        orc.expected_log_density(d1, d2)


# ---------------------------------------------------------------------------
# theorem1_gap


def test_gap_zero_when_equal():
    p = DiagGaussian([0.3], [0.2])
    assert orc.theorem1_gap(p, p) == 0.0


def test_gap_unit_mean_shift():
    p = DiagGaussian([0.0], [0.0])
    q = DiagGaussian([1.0], [0.0])
    np.testing.assert_allclose(orc.theorem1_gap(p, q), -0.5)


def test_gap_variance_four():
    p = DiagGaussian.from_variance([0.0], [1.0])
    q = DiagGaussian.from_variance([0.0], [4.0])
    np.testing.assert_allclose(orc.theorem1_gap(p, q), -0.3181472, atol=1e-7)


def test_gap_always_nonpositive():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = DiagGaussian(rng.normal(0, 2, 2), rng.normal(0, 1, 2))
        q = DiagGaussian(rng.normal(0, 2, 2), rng.normal(0, 1, 2))
        assert orc.theorem1_gap(p, q) <= 0.0


# ---------------------------------------------------------------------------
# GaussianWorld / verify_theorem1


def test_world_validation():
    p = DiagGaussian([0.0], [0.0])
    with pytest.raises(ValueError):
        orc.GaussianWorld(0.0, 1.0, p, p, p)
    with pytest.raises(ValueError):
        orc.GaussianWorld(0.5, 0.6, p, p, p)
    with pytest.raises(ValueError):
        orc.GaussianWorld(0.5, 0.5, p, p, DiagGaussian([0.0, 0.0], [0.0, 0.0]))


def test_verify_tight_when_q_equals_p():
    p_f = DiagGaussian([0.5, -0.5], [0.1, -0.2])
    world = orc.GaussianWorld(0.4, 0.6, p_f, DiagGaussian([2.0, 2.0], [0.0, 0.0]), p_f)
    report = orc.verify_theorem1(world, n_mc=20_000, seed=0)
    assert report.passed
    assert abs(report.gap_closed) < 1e-12
    assert abs(report.lhs_closed - report.rhs_closed) < 1e-12


def test_verify_hundred_random_worlds():
    rng = np.random.default_rng(3)
    for i in range(100):
        world = orc.random_world(rng)
        report = orc.verify_theorem1(world, n_mc=100_000, seed=i)
        assert report.inequality_holds, f"world {i}"
        assert abs(report.gap_closed - report.gap_formula) <= 1e-10, f"world {i}"
        assert report.mc_consistent, f"world {i}"


def test_verify_widely_separated_world():
    p_f = DiagGaussian.from_variance([0.0], [1.0])
    q_f = DiagGaussian.from_variance([10.0], [1.0])
    world = orc.GaussianWorld(0.5, 0.5, p_f, p_f, q_f)
    report = orc.verify_theorem1(world, n_mc=20_000, seed=4)
    np.testing.assert_allclose(report.gap_closed, -50.0, rtol=1e-12)
    assert report.passed


def test_verify_rejects_small_mc():
    world = orc.random_world(np.random.default_rng(5))
    with pytest.raises(ValueError):
        orc.verify_theorem1(world, n_mc=100)


def test_exact_moment_fit_reproduces_conditional():
    # the asymptotic-optimum assumption: the fitted model matches the
    # target distribution coordinatewise to machine precision
    rng = np.random.default_rng(6)
    world = orc.random_world(rng)
    fit = orc.fit_gaussian_mle(moments=world.p_f)
    np.testing.assert_array_equal(fit.mean, world.p_f.mean)
    np.testing.assert_array_equal(fit.log_variance, world.p_f.log_variance)
    assert kl_diag_gaussians(fit, world.p_f) == 0.0


def test_mc_converges_at_sqrt_rate():
    world = orc.random_world(np.random.default_rng(7))
    errs = {}
    for n in (10_000, 160_000):
        reps = []
        for s in range(8):
            r = orc.verify_theorem1(world, n_mc=n, seed=100 + s)
            reps.append((r.lhs_mc - r.rhs_mc) - r.gap_closed)
        errs[n] = np.sqrt(np.mean(np.square(reps)))
    # 16x the samples should shrink RMS error roughly 4x; allow slack
    assert errs[160_000] < errs[10_000] / 1.5


def test_report_lines_format():
    world = orc.random_world(np.random.default_rng(8))
    report = orc.verify_theorem1(world, n_mc=20_000, seed=0)
    lines = report.lines()
    assert any(line.startswith("gap_closed=") for line in lines)
    assert any(line == "inequality_holds=true" for line in lines)


def test_random_world_strict_mode():
    rng = np.random.default_rng(9)
    for _ in range(20):
        world = orc.random_world(rng, strict=True)
        assert kl_diag_gaussians(world.p_f, world.q_f) >= 1e-6
