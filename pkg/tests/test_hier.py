import math

import numpy as np
import pytest
from scipy import integrate, stats

from abcpass.errors import ContractViolation
from abcpass.wf.gpd import GPDParams, gpd_cdf, gpd_density, gpd_logpdf, gpd_sample
from abcpass.wf.hier import (HierState, WFContext, WFPriors, default_schedule, gpd_log_likelihood,
                             hyper_grid_posterior, hyper_update, learn_wf_projections, multi_locus_pilot, ne_update,
                             observe, run_wf_chain, s_update, significance, simulate_loci, single_locus_pilot)
from abcpass.wf.sim import LocusTrajectory, SamplingPlan, wf_simulate_locus


def test_gpd_density_at_zero():
    # exponential limit truncated at 1: f(0) = (1/sigma) / (1 - e^{-1/sigma})
    p = GPDParams(0.0, 0.1, 1.0)
    assert gpd_density(0.0, p) == pytest.approx(10 / (1 - math.exp(-10)), rel=1e-12)


def test_gpd_exponential_ratio():
    p = GPDParams(0.0, 0.1, 1.0)
    assert gpd_density(0.2, p) / gpd_density(0.1, p) == pytest.approx(math.exp(-1), rel=1e-12)


def test_gpd_density_closed_form():
    p = GPDParams(0.5, 0.05, 1.0)
    s = np.array([0.0, 0.01, 0.3, 1.0])
    Z = 1 - (1 + 0.5 * 1.0 / 0.05) ** -2.0
    ref = (1 / 0.05) * (1 + 0.5 * s / 0.05) ** -3.0 / Z
    assert np.allclose(gpd_density(s, p), ref, rtol=1e-12, atol=0)
    assert gpd_density(1.5, p) == 0.0 and gpd_density(-0.1, p) == 0.0


def test_gpd_normalized_over_prior():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = GPDParams(rng.uniform(-0.2, 1.0), 10 ** rng.uniform(-2.5, -0.5), 1.0)
        pts = [x for x in (p.scale, 10 * p.scale) if x < p.upper]
        total, _ = integrate.quad(lambda x: gpd_density(x, p), 0, p.upper, points=pts or None, limit=500,
                                  epsabs=1e-13, epsrel=1e-12)
        assert abs(total - 1.0) < 1e-6


def test_gpd_negative_shape_support():
    p = GPDParams(-0.2, 0.1, 1.0)
    assert p.upper == pytest.approx(0.5)
    assert gpd_logpdf(0.6, p) == -math.inf
    x = gpd_sample(p, np.random.default_rng(1), 10_000)
    assert x.max() < 0.5 and x.min() >= 0


def test_gpd_sample_matches_cdf():
    p = GPDParams(0.5, 0.05, 1.0)
    x = gpd_sample(p, np.random.default_rng(2), 50_000)
    Z = float(gpd_cdf(1.0, p))
    assert stats.kstest(x, lambda v: gpd_cdf(v, p) / Z).pvalue > 0.001


def test_gpd_scale_ratio():
    # with negligible truncation, f(0.1 | sigma=0.2) / f(0.1 | sigma=0.1) = e^{0.5} / 2
    a = gpd_log_likelihood([0.1], GPDParams(0.0, 0.2, 1e6))
    b = gpd_log_likelihood([0.1], GPDParams(0.0, 0.1, 1e6))
    assert math.exp(a - b) == pytest.approx(math.exp(0.5) / 2, rel=1e-12)


def test_hyper_update_without_loci_always_accepts():
    priors = WFPriors(dfe=True)
    state = HierState(3.0, [], 0.2, -1.5)
    rng = np.random.default_rng(0)
    for k in range(200):
        state, ok = hyper_update(state, ("chi", "log10sigma")[k % 2], 0.3, priors, rng)
        assert ok


def test_hyper_update_rejects_shrunk_support():
    # a negative shape ends the support at sigma/|chi|; s = 0.5 excludes chi < -0.2 at sigma = 0.1
    priors = WFPriors(dfe=True, chi=(-0.5, 0.0))
    state = HierState(3.0, [0.5], 0.0, -1.0)
    rng = np.random.default_rng(1)
    for _ in range(500):
        new, ok = hyper_update(state, "chi", 10.0, priors, rng)
        if ok:
            assert new.chi > -0.2
        else:
            assert new is state
        assert gpd_log_likelihood(new.s, new.gpd()) > -math.inf


def test_hyper_update_touches_one_component():
    priors = WFPriors(dfe=True)
    state = HierState(3.0, [0.1, 0.2], 0.3, -1.5)
    rng = np.random.default_rng(2)
    for k in range(100):
        new, _ = hyper_update(state, "chi", 0.1, priors, rng)
        assert new.log10sigma == state.log10sigma and np.array_equal(new.s, state.s)
        new, _ = hyper_update(state, "log10sigma", 0.1, priors, rng)
        assert new.chi == state.chi
    with pytest.raises(ContractViolation):
        hyper_update(state, "log10Ne", 0.1, priors, rng)


def test_hyper_grid_posterior_normalized():
    s = gpd_sample(GPDParams(0.5, 0.05), np.random.default_rng(1), 20)
    m = hyper_grid_posterior(s, WFPriors(dfe=True), bins=20, sub=3)
    assert m.shape == (20, 20) and m.sum() == pytest.approx(1.0)


def test_significance_examples():
    ne = np.full(200, 3.0)
    assert significance(ne, np.zeros(200))[0].tolist() == [0.0]
    prob, flag = significance(ne, np.full(200, 0.5))
    assert prob.tolist() == [1.0] and flag.tolist() == [True]
    half = np.r_[np.zeros(100), np.full(100, 0.5)]
    prob, flag = significance(ne, half)
    assert prob.tolist() == [0.5] and flag.tolist() == [False]
    with pytest.raises(ContractViolation):
        significance(ne, np.zeros(10))


@pytest.fixture(scope="module")
def wf_context():
    plan = SamplingPlan.regular(5, 13, 1000)
    rng = np.random.default_rng(5)
    trajs = [wf_simulate_locus(1000, float(s), 0.3, plan, k) for k, s in enumerate(rng.uniform(0, 0.2, 4))]
    obs = observe(trajs)
    priors = WFPriors()
    pilot = single_locus_pilot(obs, priors, 2000, 1)
    _, F = multi_locus_pilot(obs, priors, 300, 1)
    return WFContext(obs, priors, learn_wf_projections(pilot, obs, F))


def test_observe_start_frequency():
    plan = SamplingPlan((0, 10), (100, 100))
    obs = observe([LocusTrajectory(plan, (0, 5)), LocusTrajectory(plan, (40, 50))])
    assert obs.p0.tolist() == [0.01, 0.4]
    with pytest.raises(ContractViolation):
        observe([])


def test_ne_update_keeps_selection(wf_context):
    state = HierState(3.0, [0.05, 0.1, 0.15, 0.2])
    rng = np.random.default_rng(0)
    moved = 0
    for _ in range(50):
        new, ok = ne_update(state, 0.3, wf_context, math.inf, rng)
        assert ok and np.array_equal(new.s, state.s)
        moved += new.log10ne != state.log10ne
    assert moved > 0


def test_s_update_changes_one_locus(wf_context):
    state = HierState(3.0, [0.05, 0.1, 0.15, 0.2])
    rng = np.random.default_rng(1)
    for l in range(4):
        new, stage = s_update(state, l, 0.2, wf_context, math.inf, rng)
        assert stage == 3
        diff = np.flatnonzero(new.s != state.s)
        assert diff.tolist() in ([l], [])
        assert new.log10ne == state.log10ne


def test_s_update_zero_tolerance_rejects(wf_context):
    state = HierState(3.0, [0.05, 0.1, 0.15, 0.2])
    new, stage = s_update(state, 0, 0.2, wf_context, 0.0, np.random.default_rng(2))
    assert stage == 1 and new is state


def test_simulate_loci_seeded(wf_context):
    a = simulate_loci(wf_context.obs, 3.0, [0.1, 0.1], [0, 1], 42)
    b = simulate_loci(wf_context.obs, 3.0, [0.1, 0.1], [0, 1], 42)
    assert np.array_equal(a, b) and a.shape == (2, 5)


def test_wf_chain_counts_and_determinism(wf_context):
    start = [3.0, 0.05, 0.1, 0.15, 0.2]
    widths = [0.3, 0.1, 0.1, 0.1, 0.1]
    a = run_wf_chain(wf_context, start, widths, [math.inf] * 5, 300, 7)
    b = run_wf_chain(wf_context, start, widths, [math.inf] * 5, 300, 7)
    assert np.array_equal(a.records, b.records) and a.records.shape == (300, 5)
    assert a.proposals.sum() == 300 and np.all(a.accepts == a.proposals)
    assert (np.diff(a.records, axis=0) != 0).sum(axis=1).max() <= 1


def test_default_schedule_weights():
    s = default_schedule(WFPriors(dfe=True), 2)
    assert np.allclose(s.probs, np.array([1, 5, 5, 1, 1]) / 13)
    assert len(default_schedule(WFPriors(), 3).probs) == 4


def test_dfe_space_names():
    assert WFPriors(dfe=True).names(2) == ("log10Ne", "chi", "log10sigma", "s_1", "s_2")
    assert WFPriors().space(2).names == ("log10Ne", "s_1", "s_2")
