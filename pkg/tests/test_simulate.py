import warnings

import numpy as np
import pytest

from robustgrowth import (DomainSpec, SimConfig, estimate_growth, simulate_reference,
                          simulate_worst_case, solve_model, wealth_path)
from robustgrowth._symbolic import expression_model
from robustgrowth.exceptions import InsufficientPaths, OutOfDomain, StepRejectionOverflow
from robustgrowth.simulate import (competitor_strategies, ergodic_table, occupation_tv,
                                   reference_bin_mass, tv_distance)
from robustgrowth.worstcase import identity_modification, solve_v


@pytest.fixture(scope="module")
def ou():
    """Unit volatility with a standard normal density on (-4, 4): drift -x/2."""
    dom = DomainSpec((-4.0,), (4.0,), (0.0,), (1.0,), 0.0)
    model = expression_model(dom, "1", "exp(-x1**2/2)/sqrt(2*pi)", "1")
    return model, solve_model(model, [801, 11], validate=False)


def test_zero_strategy_zero_wealth():
    rng = np.random.default_rng(0)
    path = np.cumsum(rng.normal(size=(50, 2)), axis=0)
    w = wealth_path(path, 0.01, lambda x, y: np.zeros((len(x), 1)), np.eye(1))
    assert np.all(w.logv == 0.0)


def test_single_step_wealth_rule():
    path = np.array([[0.3, 0.5], [0.45, 0.4]])
    theta, c, dt = 0.7, 2.0, 0.01
    w = wealth_path(path, dt, lambda x, y: np.full((len(x), 1), theta), np.array([[c]]))
    assert w.logv[-1] == pytest.approx(theta * 0.15 - 0.5 * theta * c * theta * dt, abs=1e-15)


def test_ou_time_average_symmetric(ou):
    model, s = ou
    res = simulate_reference(model, s.drift, SimConfig(T=200, dt=1e-2, n_paths=16, seed=3),
                             sample=s.sample)
    mean, se = res.time_averages()["x1"]
    assert abs(mean) <= 3 * se
    one, _ = res.time_averages()["1"]
    assert one == pytest.approx(1.0, abs=1e-12)
    rows = {r["observable"]: r for r in ergodic_table(res, s.sample.p)}
    assert rows["x1"]["within_3se"]


def test_ou_occupation_matches_density(ou):
    model, s = ou
    res = simulate_reference(model, s.drift, SimConfig(T=500, dt=1e-2, n_paths=16, seed=4),
                             sample=s.sample)
    assert occupation_tv(res, s.sample.p, coord=0) < 0.05


def test_seeded_runs_identical(ou):
    model, s = ou
    cfg = SimConfig(T=20, dt=1e-2, n_paths=4, seed=9, n_record=10)
    a = simulate_reference(model, s.drift, cfg, {"t": s.phi.grad}, sample=s.sample)
    b = simulate_reference(model, s.drift, cfg, {"t": s.phi.grad}, sample=s.sample)
    for name in ("logv", "qv", "integrals", "hist", "final"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.recorded["z"], b.recorded["z"])
    c = simulate_reference(model, s.drift, SimConfig(T=20, dt=1e-2, n_paths=4, seed=10),
                           {"t": s.phi.grad}, sample=s.sample)
    assert not np.array_equal(a.logv, c.logv)


def test_single_step_horizon_is_finite(ou):
    model, s = ou
    kmod = identity_modification(s.sample, s.avg)
    vsol = solve_v(kmod, s.phi, s.sample, s.drift)
    with pytest.warns(UserWarning):
        res = simulate_worst_case(model, kmod, s.phi, vsol,
                                  SimConfig(T=1e-3, dt=1e-3, n_paths=16, seed=0))
    g, se = res.growth("theta_hat")
    assert np.isfinite(g) and np.isfinite(se) and se > 0


def test_mismatch_is_first_order(ou):
    model, s = ou
    kmod = identity_modification(s.sample, s.avg)
    vsol = solve_v(kmod, s.phi, s.sample, s.drift)
    dts = np.array([0.04, 0.02, 0.01])
    gaps = []
    for dt in dts:
        res = simulate_worst_case(model, kmod, s.phi, vsol,
                                  SimConfig(T=1000, dt=dt, n_paths=64, seed=1))
        gaps.append(abs(np.mean(res.extras["mismatch"])))
    slope = np.polyfit(np.log(dts), np.log(gaps), 1)[0]
    assert 0.75 <= slope <= 1.25, (gaps, slope)


def test_growth_needs_sixteen_paths(ou):
    model, s = ou
    res = simulate_reference(model, s.drift, SimConfig(T=10, dt=1e-2, n_paths=4),
                             {"t": s.phi.grad}, sample=s.sample)
    with pytest.raises(InsufficientPaths):
        estimate_growth(res)


def test_reject_policy_overflow(ou):
    model, s = ou
    cfg = SimConfig(T=50, dt=5.0, n_paths=2, boundary_policy="reject")
    with pytest.raises(StepRejectionOverflow):
        simulate_reference(model, s.drift, cfg, sample=s.sample)


def test_initial_state_inside_box(ou):
    model, s = ou
    with pytest.raises(OutOfDomain):
        simulate_reference(model, s.drift, SimConfig(T=1, dt=1e-2, x0=(5.0,)), sample=s.sample)


def test_bad_config():
    for kw in ({"dt": 0.0}, {"T": -1.0}, {"n_paths": 0}, {"boundary_policy": "wrap"}):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_bin_mass_and_tv():
    nodes = np.linspace(0, 1, 11)
    mass = reference_bin_mass(nodes, np.ones(11), np.linspace(0, 1, 5))
    np.testing.assert_allclose(mass, 0.25)
    assert tv_distance([1, 0], [0, 1]) == 1.0


def test_competitors_differ_from_optimum(beta_coarse):
    comp = competitor_strategies(beta_coarse.grid, beta_coarse.phi)
    assert set(comp) == {"x-bump", "y-sine"}
    assert comp["y-sine"].shape == beta_coarse.grid.shape + (1,)
    assert np.max(np.abs(comp["x-bump"] - beta_coarse.phi.grad)) > 0.1
