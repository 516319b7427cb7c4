import math

import numpy as np
import pytest
from scipy import stats

from abcpass.errors import ContractViolation, SimulationError
from abcpass.model import ParameterDef, ParameterSpace, PriorSpec, ProposalKernel, propose_component
from abcpass.models import BinomialCheckModel, GLMModel, NormalModel
from abcpass.sampler import Chain, UpdateSchedule, mh_ratio, run_abc_mcmc, run_abc_pass, standardized_distance
from abcpass.statlearn import BoxCoxTransform, LinearProjection


def identity_projection(name, m, j, sd=1.0):
    beta = np.zeros(m)
    beta[j] = 1.0
    return LinearProjection(name, beta, BoxCoxTransform.identity(m), 0.0, sd)


def python_model(model):
    # hides the compiled hook so the Python loop runs
    class Wrapped:
        statistic_names = model.statistic_names

        def simulate(self, theta, seed):
            return model.simulate(theta, seed)
    return Wrapped()


def test_standardized_distance_examples():
    assert standardized_distance([1, 2], [1, 2], [1, 1]) == 0.0
    assert standardized_distance([1, 0], [0, 0], [1, 1]) == 1.0
    assert standardized_distance([2, 2], [0, 0], [2, 2]) == pytest.approx(math.sqrt(2))
    with pytest.raises(ContractViolation):
        standardized_distance([1, 0], [0, 0], [1, 0])


def test_mh_ratio_examples():
    space = ParameterSpace.uniform({"a": (0, 1)})
    assert mh_ratio([0.2], [0.7], space) == 1.0
    assert mh_ratio([0.2], [1.7], space) == 0.0
    with pytest.raises(ContractViolation):
        mh_ratio([1.5], [0.5], space)


def test_mh_ratio_gpd_conditional():
    space = ParameterSpace((
        ParameterDef("chi", PriorSpec("uniform", -0.2, 1.0)),
        ParameterDef("sigma", PriorSpec("uniform", 0.01, 1.0)),
        ParameterDef("s", PriorSpec("gpd-conditional", 0.0, 1.0, ("chi", "sigma"))),
    ))
    assert mh_ratio([0.0, 0.1, 0.1], [0.0, 0.1, 0.2], space) == pytest.approx(math.exp(-1), rel=1e-12)


def test_schedule():
    with pytest.raises(ContractViolation):
        UpdateSchedule((0.5, 0.6))
    with pytest.raises(ContractViolation):
        UpdateSchedule.from_weights([1, 0])
    s = UpdateSchedule.from_weights([1, 5, 5, 1])
    assert sum(s.probs) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    draws = np.array([s.draw(rng) for _ in range(60_000)])
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.allclose(freq, s.probs, atol=0.01)


@pytest.mark.parametrize("compiled", [True, False])
def test_abc_mcmc_infinite_tolerance_accepts_all(compiled):
    model = NormalModel()
    space = NormalModel.default_space()
    kernel = ProposalKernel.from_fractions(space, 0.1)
    ch = run_abc_mcmc(model, [0.0, 5.0], math.inf, kernel, space, 2000, 3, [0.0, 5.0],
                      use_compiled=compiled)
    assert ch.records.shape == (2000, 2)
    assert ch.iterations == 2000
    assert np.all(ch.acceptance_rate == 1.0)


@pytest.mark.parametrize("compiled", [True, False])
def test_abc_mcmc_zero_tolerance_continuous(compiled):
    model = NormalModel()
    space = NormalModel.default_space()
    kernel = ProposalKernel.from_fractions(space, 0.1)
    ch = run_abc_mcmc(model, [0.0, 5.0], 0.0, kernel, space, 1000, 3, [1.0, 4.0], use_compiled=compiled)
    assert np.all(ch.accepts == 0)
    assert np.all(ch.records == [1.0, 4.0])


@pytest.mark.parametrize("compiled", [True, False])
def test_abc_pass_counts_and_length(compiled):
    model = NormalModel()
    space = NormalModel.default_space()
    projs = {"mu": identity_projection("mu", 2, 0), "sigma2": identity_projection("sigma2", 2, 1)}
    kernel = ProposalKernel.from_fractions(space, 0.2)
    ch = run_abc_pass(model, projs, [0.0, 5.0], [0.5, 1.0], kernel, None, space, 3000, 11, [0.0, 5.0],
                      use_compiled=compiled)
    assert ch.records.shape == (3000, 2)
    assert ch.proposals.sum() == 3000
    assert np.all(ch.accepts <= ch.passes) and np.all(ch.passes <= ch.simulations)
    assert np.all(ch.simulations <= ch.proposals)
    # single-component discipline: consecutive records differ in at most one coordinate
    moved = (np.diff(ch.records, axis=0) != 0).sum(axis=1)
    assert moved.max() <= 1


def test_abc_pass_deterministic():
    model = GLMModel.cyclic(3)
    space = model.default_space(10.0)
    projs = [identity_projection(f"theta{i + 1}", 3, i) for i in range(3)]
    kernel = ProposalKernel.from_fractions(space, 0.1)
    a = run_abc_pass(model, projs, [0.0, 0.0, 0.0], 1.0, kernel, None, space, 500, 99, [0.0, 0.0, 0.0])
    b = run_abc_pass(model, projs, [0.0, 0.0, 0.0], 1.0, kernel, None, space, 500, 99, [0.0, 0.0, 0.0])
    assert np.array_equal(a.records, b.records)


def test_abc_pass_flat_is_reflected_walk():
    # infinite tolerances: each component performs the reflected random walk
    model = GLMModel(np.eye(2))
    space = model.default_space(1.0)
    projs = [identity_projection("theta1", 2, 0), identity_projection("theta2", 2, 1)]
    kernel = ProposalKernel((0.3, 0.3))
    T = 100_000
    ch = run_abc_pass(model, projs, [0.0, 0.0], math.inf, kernel, None, space, T, 5, [0.0, 0.0])
    rng = np.random.default_rng(8)
    x, walk = 0.0, np.empty(T)
    for t in range(T):
        if rng.random() < 0.5:
            x = propose_component(x, 0.3, -1.0, 1.0, rng.random())
        walk[t] = x
    ks = stats.ks_2samp(ch.records[::50, 0], walk[::50])
    assert ks.pvalue > 0.001
    # stationary law of the reflected walk is the uniform prior
    assert stats.kstest(ch.records[::50, 0], stats.uniform(-1, 2).cdf).pvalue > 0.001


def test_python_and_compiled_agree_in_law():
    model = BinomialCheckModel()
    space = BinomialCheckModel.default_space()
    projs = [identity_projection("p", 1, 0)]
    kernel = ProposalKernel((0.15,))
    a = run_abc_pass(model, projs, [14.0], 0.0, kernel, None, space, 40_000, 1, [0.7], use_compiled=True)
    b = run_abc_pass(python_model(model), projs, [14.0], 0.0, kernel, None, space, 40_000, 1, [0.7])
    assert a.config["engine"] == "compiled" and b.config["engine"] == "python"
    assert abs(a.records.mean() - b.records.mean()) < 0.02
    assert abs(a.records.mean() - 15 / 22) < 0.02


def test_hyper_parameter_without_projection():
    space = ParameterSpace((
        ParameterDef("chi", PriorSpec("uniform", -0.2, 1.0)),
        ParameterDef("sigma", PriorSpec("uniform", 0.05, 1.0)),
        ParameterDef("s", PriorSpec("gpd-conditional", 0.0, 1.0, ("chi", "sigma"))),
    ))

    class Echo:
        statistic_names = ("s",)

        def simulate(self, theta, seed):
            return np.array([theta[2] + np.random.default_rng(seed).normal(0, 0.01)])

    projs = [None, None, identity_projection("s", 1, 0)]
    kernel = ProposalKernel((0.1, 0.1, 0.05))
    ch = run_abc_pass(Echo(), projs, [0.2], [math.inf, math.inf, 0.05], kernel, None, space, 3000, 4,
                      [0.3, 0.3, 0.2])
    assert ch.simulations[0] == 0 and ch.simulations[1] == 0
    assert ch.accepts[0] > 0 and ch.accepts[1] > 0
    with pytest.raises(ContractViolation):
        run_abc_pass(Echo(), [None, None, None], [0.2], 1.0, kernel, None, space, 10, 4, [0.3, 0.3, 0.2])


def test_start_outside_prior():
    space = NormalModel.default_space()
    with pytest.raises(ContractViolation):
        run_abc_mcmc(NormalModel(), [0.0, 5.0], 1.0, ProposalKernel((1.0, 1.0)), space, 10, 1, [0.0, 20.0])


def test_failing_simulator_raises():
    class Broken:
        statistic_names = ("x",)

        def simulate(self, theta, seed):
            return np.array([np.nan])

    space = ParameterSpace.uniform({"a": (0, 1)})
    with pytest.raises(SimulationError):
        run_abc_mcmc(Broken(), [0.0], 1.0, ProposalKernel((0.1,)), space, 5, 1, [0.5])


def test_intermittent_failures_are_retried():
    class Flaky:
        statistic_names = ("x",)

        def simulate(self, theta, seed):
            if seed % 3 == 0:
                raise SimulationError("transient")
            return np.array([theta[0]])

    space = ParameterSpace.uniform({"a": (0, 1)})
    ch = run_abc_mcmc(Flaky(), [0.5], math.inf, ProposalKernel((0.1,)), space, 300, 2, [0.5])
    assert ch.sim_failures > 0
    assert ch.accepts[0] == 300


def test_histogram_mode():
    space = NormalModel.default_space()
    kernel = ProposalKernel.from_fractions(space, 0.1)
    ch = run_abc_mcmc(NormalModel(), [0.0, 5.0], math.inf, kernel, space, 1000, 3, [0.0, 5.0], record=False,
                      hist_bins=20, burn_in=100)
    assert ch.records is None
    assert ch.histogram.shape == (2, 20)
    assert ch.histogram.sum(axis=1).tolist() == [900, 900]
    assert ch.iterations == 1000


def test_chain_csv_round_trip(tmp_path):
    space = NormalModel.default_space()
    ch = run_abc_mcmc(NormalModel(), [0.0, 5.0], 2.0, ProposalKernel.from_fractions(space, 0.1), space, 200, 3,
                      [0.0, 5.0], scale=[1.0, 2.0])
    path = tmp_path / "chain.csv"
    ch.to_csv(path)
    names, rec = Chain.read_csv(path)
    assert names == ("mu", "sigma2")
    assert np.array_equal(rec, ch.records)
    assert path.read_text().splitlines()[0] == "iter,mu,sigma2"
    ch.write_diagnostics(tmp_path / "diag.json")
    assert ch.diagnostics()["parameters"]["mu"]["proposals"] == 200
