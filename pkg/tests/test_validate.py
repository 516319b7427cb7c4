import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from abcpass.errors import ContractViolation
from abcpass.models import NormalModel
from abcpass.statlearn import generate_pilot, learn_projections
from abcpass.validate import (BinnedDensity, SweepGrid, binned_truth, glm_posterior, l1_distance, l1_masses,
                              l1_samples, normal_posterior, prior_baseline, run_sweep, SweepResult)


def test_normal_posterior_mu_mode():
    post = normal_posterior(0.7, 5.0, 10)
    res = optimize.minimize_scalar(lambda m: -post.mu.pdf(m), bounds=(-5, 5), method="bounded",
                                   options={"xatol": 1e-10})
    assert res.x == pytest.approx(0.7, abs=1e-6)


def test_normal_posterior_sigma2_normalized():
    post = normal_posterior(0.0, 5.0, 10)
    total, _ = integrate.quad(post.sigma2.pdf, 0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert abs(total - 1.0) < 1e-6


def test_normal_posterior_sigma2_density_formula():
    # ((n-1)/S2) f_chi2((n-1) sigma2 / S2) with n-1 degrees of freedom
    n, S2 = 10, 5.0
    post = normal_posterior(0.0, S2, n)
    for v in (0.5, 3.0, 5.0, 12.0):
        ref = (n - 1) / S2 * stats.chi2(n - 1).pdf((n - 1) * v / S2)
        assert post.sigma2.pdf(v) == pytest.approx(ref, rel=1e-12)


def test_normal_posterior_sigma2_mode():
    # numerical argmax of the density; the chi-square mode is (n-3) S2/(n-1)
    n, S2 = 10, 5.0
    post = normal_posterior(0.0, S2, n)
    res = optimize.minimize_scalar(lambda v: -post.sigma2.pdf(v), bounds=(0.01, 20), method="bounded",
                                   options={"xatol": 1e-10})
    assert res.x == pytest.approx(S2 * (n - 3) / (n - 1), rel=1e-6)


def test_glm_posterior_identity():
    post = glm_posterior(np.eye(3), [1.0, -2.0, 0.5])
    assert np.allclose(post.mean, [1.0, -2.0, 0.5]) and np.allclose(post.cov, np.eye(3))


def test_glm_posterior_no_data_is_prior():
    prior_cov = np.diag([2.0, 3.0])
    post = glm_posterior(np.zeros((2, 2)), [4.0, 4.0], prior_mean=[1.0, -1.0], prior_cov=prior_cov)
    assert np.allclose(post.mean, [1.0, -1.0]) and np.allclose(post.cov, prior_cov)


def test_glm_posterior_flat_singular():
    with pytest.raises(ContractViolation):
        glm_posterior(np.zeros((2, 2)), [0.0, 0.0])


def test_glm_posterior_against_grid():
    rng = np.random.default_rng(11)
    C = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    s_obs = rng.normal(size=3)
    prior_cov = np.diag([1.5, 2.0, 2.5])
    post = glm_posterior(C, s_obs, prior_cov=prior_cov)
    sd = np.sqrt(np.diag(post.cov))
    axes = [np.linspace(m - 7 * s, m + 7 * s, 121) for m, s in zip(post.mean, sd)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    r = X @ C.T - s_obs
    logp = -0.5 * np.sum(r * r, axis=1) - 0.5 * np.sum(X * X / np.diag(prior_cov), axis=1)
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean = w @ X
    cov = (X - mean).T @ ((X - mean) * w[:, None])
    assert np.all(np.abs(mean - post.mean) / sd < 1e-3)
    assert np.abs(cov - post.cov).max() / np.abs(post.cov).max() < 1e-3


def test_glm_posterior_covariance_spd():
    rng = np.random.default_rng(12)
    for _ in range(100):
        C = rng.normal(size=(4, 4)) + 3 * np.eye(4)
        post = glm_posterior(C, rng.normal(size=4))
        np.linalg.cholesky(post.cov)
        assert np.allclose(post.cov, post.cov.T)


def test_l1_self_distance_floor():
    truth = stats.norm(0.0, 1.0)
    x = truth.rvs(size=1_000_000, random_state=3)
    x = x[np.abs(x) <= 5]
    assert l1_distance(x, truth, -5, 5) < 0.02


def test_l1_prior_vs_sharp_truth():
    truth = binned_truth(stats.norm(0.0, 0.1), -10, 10)
    x = np.random.default_rng(4).uniform(-10, 10, 1_000_000)
    base = l1_masses(BinnedDensity.uniform(-10, 10), truth)
    assert l1_distance(x, truth) == pytest.approx(base, abs=0.01)
    assert prior_baseline({"mu": truth})["mu"] == base


def test_l1_disjoint():
    a = BinnedDensity.from_samples(np.full(2000, 0.05), 0, 1, 10)
    b = BinnedDensity.from_samples(np.full(2000, 0.95), 0, 1, 10)
    assert l1_masses(a, b) == 2.0


def test_l1_identical_masses():
    t = binned_truth(stats.beta(15, 7), 0, 1)
    assert l1_masses(t, t) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_samples_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.beta(2, 5, 3000), rng.beta(3, 3, 2000)
    assert l1_samples(a, b, 0, 1) == l1_samples(b, a, 0, 1)


def test_l1_contract():
    t = binned_truth(stats.uniform(0, 1), 0, 1)
    with pytest.raises(ContractViolation):
        l1_distance(np.full(100, 0.5), t)
    with pytest.raises(ContractViolation):
        l1_distance(np.full(2000, 1.5), t)


def test_binned_density_validation():
    with pytest.raises(ContractViolation):
        BinnedDensity(0, 1, np.full(10, 0.2))
    with pytest.raises(ContractViolation):
        BinnedDensity(0, 1, np.full(5, 0.2))


def test_binned_truth_pdf_and_cdf_agree():
    d = stats.gamma(3, scale=2)
    a = binned_truth(d, 0.1, 15)
    b = binned_truth(d.pdf, 0.1, 15)
    assert l1_masses(a, b) < 1e-8


@pytest.fixture(scope="module")
def normal_sweep_setup():
    model = NormalModel()
    space = NormalModel.default_space()
    pilot = generate_pilot(model, space, 10_000, 1)
    s_obs = np.array([0.0, 5.0])
    truth = normal_posterior(0.0, 5.0, 10).marginals(space)
    return model, space, pilot, s_obs, truth


def test_single_cell_sweep(normal_sweep_setup):
    model, space, pilot, s_obs, truth = normal_sweep_setup
    grid = SweepGrid((0.5,), (0.3,), replicates=2, iterations=5000)
    res = run_sweep(model, "abc-mcmc", grid, truth, space, s_obs, pilot, seed=1)
    best = res.argmin()
    assert best["overall"]["tolerance"] == 0.5 and best["overall"]["width"] == 0.3
    assert len(res.rows) == 2


def test_sweep_all_failed(normal_sweep_setup):
    _, space, pilot, s_obs, truth = normal_sweep_setup

    class Shifted:
        # statistics never come near the pilot's closest rows
        statistic_names = ("xbar", "S2")

        def simulate(self, theta, seed):
            return NormalModel().simulate(theta, seed) + 100.0

    grid = SweepGrid((0.5,), (0.2,), replicates=2, iterations=500)
    res = run_sweep(Shifted(), "abc-mcmc", grid, truth, space, s_obs, pilot, seed=1)
    assert res.failed_cells() == {(0.5, 0.2)}
    assert res.rows[0]["n_failed"] == 2 and math.isnan(res.rows[0]["mean_L1"])
    assert res.argmin()["all_failed"] and math.isnan(res.min_l1("mu"))


def test_failed_cells_excluded_from_argmin():
    res = SweepResult("abc-mcmc", ("a",))
    res.rows = [
        {"tolerance": 0.1, "width": 0.1, "param": "a", "mean_L1": math.nan, "failed": True},
        {"tolerance": 0.5, "width": 0.1, "param": "a", "mean_L1": 0.4, "failed": False},
        {"tolerance": 0.5, "width": 0.3, "param": "a", "mean_L1": 0.2, "failed": False},
    ]
    assert res.argmin()["overall"] == {"tolerance": 0.5, "width": 0.3, "mean_L1": 0.2}
    assert res.min_l1("a") == 0.2


def test_sweep_abc_pass_deterministic(normal_sweep_setup, tmp_path):
    model, space, pilot, s_obs, truth = normal_sweep_setup
    projs = learn_projections(pilot)
    grid = SweepGrid((0.5,), (0.2, 0.4), replicates=2, iterations=3000)
    a = run_sweep(model, "abc-pass", grid, truth, space, s_obs, pilot, projs, seed=3, threads=2)
    b = run_sweep(model, "abc-pass", grid, truth, space, s_obs, pilot, projs, seed=3, threads=1)
    assert a.rows == b.rows
    a.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "method,n_params,tolerance,width,param,mean_L1,n_failed"


def test_sweep_needs_truth(normal_sweep_setup):
    model, space, pilot, s_obs, truth = normal_sweep_setup
    grid = SweepGrid((0.5,), (0.2,), replicates=1, iterations=100)
    with pytest.raises(ContractViolation):
        run_sweep(model, "abc-mcmc", grid, {"mu": truth["mu"]}, space, s_obs, pilot)
