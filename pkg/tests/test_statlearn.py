import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcpass.errors import ContractViolation, SingularCovarianceError
from abcpass.model import ParameterSpace
from abcpass.models import GLMModel, NormalModel
from abcpass.statlearn import (BoxCoxTransform, LinearProjection, PilotSet, apply_boxcox, fit_boxcox,
                               generate_pilot, learn_projection, learn_projections, load_projections, project,
                               save_projections, select_projection)


def one_stat(lam, shift=0.0):
    return BoxCoxTransform([lam], [shift], [1e-12], [True], [False], [0.0], [1.0])


@pytest.mark.parametrize("lam, x, expected", [(1.0, 3.0, 2.0), (0.0, math.e, 1.0), (2.0, 3.0, 4.0)])
def test_apply_boxcox_examples(lam, x, expected):
    assert apply_boxcox(one_stat(lam), [x])[0] == pytest.approx(expected, rel=1e-14)


def test_apply_boxcox_clamps_and_flags():
    t = BoxCoxTransform([0.0], [0.0], [0.5], [True], [False], [0.5], [2.0])
    y, flags = apply_boxcox(t, [[-1.0], [1.0]], return_flags=True)
    assert flags[:, 0].tolist() == [True, False]
    assert y[0, 0] == pytest.approx(math.log(0.5))


def test_boxcox_lambda_bounds():
    with pytest.raises(ContractViolation):
        one_stat(6.0)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(np.round(np.arange(-50, 51) / 10.0, 1).tolist()), st.floats(0.01, 50), st.floats(0.01, 50))
def test_boxcox_strictly_monotone(lam, a, b):
    t = one_stat(lam)
    if a == b:
        return
    ya, yb = apply_boxcox(t, [a])[0], apply_boxcox(t, [b])[0]
    if np.isfinite(ya) and np.isfinite(yb) and abs(ya - yb) > 1e-12 * max(abs(ya), abs(yb)):
        assert (ya < yb) == (a < b)


def pilot_from(theta, stats, names=("a",), stat_names=None):
    stat_names = stat_names or tuple(f"s{j}" for j in range(stats.shape[1]))
    return PilotSet(names, stat_names, theta, stats)


def test_fit_boxcox_linear_statistic():
    rng = np.random.default_rng(1)
    th = rng.uniform(0, 10, (10_000, 1))
    s = 5.0 + th + rng.normal(0, 1, th.shape)
    t = fit_boxcox(pilot_from(th, s))
    assert abs(t.lam[0] - 1.0) <= 0.1


def test_fit_boxcox_exponential_statistic():
    rng = np.random.default_rng(2)
    th = rng.uniform(0, 3, (10_000, 1))
    s = np.exp(th + rng.normal(0, 0.2, th.shape))
    t = fit_boxcox(pilot_from(th, s))
    assert abs(t.lam[0]) <= 0.1


def test_fit_boxcox_constant_statistic():
    rng = np.random.default_rng(3)
    th = rng.uniform(0, 1, (200, 1))
    s = np.hstack([th + rng.normal(0, 0.1, th.shape), np.full((200, 1), 4.0)])
    t = fit_boxcox(pilot_from(th, s))
    assert t.degenerate.tolist() == [False, True]
    assert t.lam[1] == 1.0 and t.shift[1] == 0.0
    assert apply_boxcox(t, [1.0, 4.0])[1] == 4.0


def test_projection_examples():
    tr = BoxCoxTransform.identity(3)
    p = LinearProjection("a", [0.0, 1.0, 0.0], tr, 0.0, 1.0)
    assert project(p, [4.0, 7.0, 9.0]) == 7.0
    assert project(LinearProjection("a", [0.0, 0.0, 0.0], tr, 0.0, 1.0), [4.0, 7.0, 9.0]) == 0.0
    p2 = LinearProjection("a", [1.0, 1.0], BoxCoxTransform.identity(2), 0.0, 1.0)
    assert project(p2, [2.0, 3.0]) == 5.0


def test_tau_is_order_stable():
    # single rows and batches must give bit-identical projections
    rng = np.random.default_rng(4)
    beta = rng.normal(size=5) * 10 ** rng.uniform(-3, 3, 5)
    p = LinearProjection("a", beta, BoxCoxTransform.identity(5), 0.0, 1.0)
    S = rng.normal(size=(200, 5))
    batch = p.tau(S)[:, 0]
    assert all(p.tau(S[r])[0] == batch[r] for r in range(200))


def test_learn_projection_identity_design():
    model = GLMModel(np.eye(3))
    space = model.default_space(10.0)
    pilot = generate_pilot(model, space, 100_000, 5)
    for i, name in enumerate(space.names):
        p = learn_projection(pilot, name)
        e = np.zeros(3)
        e[i] = 1.0
        assert np.abs(p.beta[0] - e).max() < 0.05
        assert p.heldout_r > 0.9


def test_projection_consistency_rate():
    # the error of beta_hat shrinks roughly as 1/sqrt(P)
    rng = np.random.default_rng(7)
    C = rng.normal(size=(3, 3))
    model = GLMModel(C)
    space = model.default_space(5.0)
    errs = []
    for P in (2_000, 32_000):
        e = []
        for rep in range(8):
            pilot = generate_pilot(model, space, P, 100 + rep)
            b = learn_projection(pilot, "theta1", heldout=0.0).beta[0]
            e.append(np.linalg.norm(b - C[:, 0]) / np.linalg.norm(C[:, 0]))
        errs.append(np.mean(e))
    assert errs[1] < errs[0] / 2


def test_learn_projection_collinear():
    rng = np.random.default_rng(5)
    th = rng.uniform(0, 1, (500, 1))
    s = th + rng.normal(0, 0.1, th.shape)
    pilot = pilot_from(th, np.hstack([s, s]), stat_names=("x", "x_copy"))
    with pytest.raises(SingularCovarianceError) as err:
        learn_projection(pilot, "a", ridge=0.0)
    assert "x" in str(err.value) and "x_copy" in str(err.value)
    learn_projection(pilot, "a", ridge=1e-3)


def test_learn_projection_regression_method():
    rng = np.random.default_rng(6)
    th = rng.uniform(-1, 1, (5000, 1))
    s = np.hstack([2 * th + rng.normal(0, 0.1, th.shape), rng.normal(size=th.shape)])
    p = learn_projection(pilot_from(th, s), "a", method="regression")
    assert p.heldout_r > 0.99
    with pytest.raises(ContractViolation):
        learn_projection(pilot_from(th, s), "a", method="lasso")


def test_select_projection():
    rng = np.random.default_rng(8)
    th = rng.uniform(size=(100, 2))
    pilot = PilotSet(("a", "b"), ("x", "y", "z"), th, rng.normal(size=(100, 3)))
    p = select_projection(pilot, "a", ["z", "x"])
    assert p.rows == 2
    assert np.allclose(p.tau([1.0, 2.0, 3.0]), [3.0, 1.0])


def test_pilot_independent_of_threads():
    model = NormalModel()
    space = NormalModel.default_space()
    a = generate_pilot(model, space, 1000, 42, threads=1)
    b = generate_pilot(model, space, 1000, 42, threads=4)
    assert np.array_equal(a.stats, b.stats) and np.array_equal(a.theta, b.theta)


def test_pilot_python_path():
    class Plain:
        statistic_names = ("x",)

        def simulate(self, theta, seed):
            return np.array([theta[0] + np.random.default_rng(seed).normal()])

    space = ParameterSpace.uniform({"a": (0, 1)})
    p = generate_pilot(Plain(), space, 64, 1, threads=2)
    q = generate_pilot(Plain(), space, 64, 1, threads=1)
    assert np.array_equal(p.stats, q.stats)


def test_pilot_csv_round_trip(tmp_path):
    pilot = generate_pilot(NormalModel(), NormalModel.default_space(), 100, 1)
    pilot.to_csv(tmp_path / "pilot.csv")
    back = PilotSet.from_csv(tmp_path / "pilot.csv", 2)
    assert back.param_names == pilot.param_names and back.stat_names == pilot.stat_names
    assert np.array_equal(back.stats, pilot.stats)


def test_projections_json_round_trip(tmp_path):
    pilot = generate_pilot(NormalModel(), NormalModel.default_space(), 2000, 1)
    projs = learn_projections(pilot)
    save_projections(projs, tmp_path / "p.json")
    back = load_projections(tmp_path / "p.json")
    s = np.array([0.3, 4.0])
    for k in projs:
        assert np.array_equal(back[k].tau(s), projs[k].tau(s))


def test_pilot_set_validation():
    with pytest.raises(ContractViolation):
        PilotSet(("a",), ("x",), np.zeros((3, 1)), np.full((3, 1), np.nan))
    with pytest.raises(ContractViolation):
        PilotSet(("a",), ("x",), np.zeros((3, 2)), np.zeros((3, 1)))
