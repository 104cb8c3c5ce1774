import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustgrowth import (DomainSpec, audit_assumptions, beta_model, check_beta_params,
                          test_function_energies)
from robustgrowth._symbolic import expression_model
from robustgrowth.assumptions import (check_concavity, constant_weight_energies, energy_sequence,
                                      mollified_ramp)
from robustgrowth.averaging import sample_model
from robustgrowth.catalog import BETA_DEFAULTS
from robustgrowth.exceptions import ParamViolation, ResolutionTooCoarse
from robustgrowth.model import build_grid


def test_default_params_pass():
    assert check_beta_params(BETA_DEFAULTS).passed


def test_alpha_one_fails():
    res = check_beta_params({**BETA_DEFAULTS, "alpha1": 1.0})
    assert not res.passed and res.violations


def test_beta_at_upper_bound_fails():
    res = check_beta_params({**BETA_DEFAULTS, "alpha1": 2.0, "beta1": 3.0})
    assert not res.passed


def test_beta_model_refuses_bad_params():
    with pytest.raises(ParamViolation):
        beta_model({"alpha1": 1.0})
    with pytest.raises(ParamViolation):
        beta_model({"gamma": 1.0})


def test_flat_factor_is_concave():
    dom = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 1e-3)
    model = expression_model(dom, "1", "1", "1")
    sample = sample_model(model, build_grid(dom, 21))
    for k in (0.5, 1.0, 3.0):
        assert check_concavity(sample, k).passed


def test_beta_audit_with_k2(beta_star, beta_solved):
    model, _ = beta_star
    rep = audit_assumptions(model, beta_solved.avg, k_exponent=2.0)
    assert rep.concavity.passed
    assert all(s.finite for s in rep.sweeps)
    assert rep.passed, rep.to_dict()


def test_mollified_ramp_shape():
    x = np.linspace(0, 1, 4001)
    val, der = mollified_ramp(x, 8)
    assert val[0] == pytest.approx(0.0, abs=1e-14) and val[-1] == pytest.approx(0.0, abs=1e-14)
    assert val[2000] == pytest.approx(1.0)
    assert np.all((val >= -1e-14) & (val <= 1 + 1e-14))
    np.testing.assert_allclose(np.gradient(val, x), der, atol=0.05)


def test_energies_decay_on_beta_model(beta_solved):
    table = test_function_energies(beta_solved.avg, (8, 16, 32))
    assert table.decreasing_from(8)
    for r in table.ratios("phi") + table.ratios("psi"):
        assert r >= 1.5


def test_constant_weight_counterexample():
    table = constant_weight_energies((8, 16, 32))
    assert all(np.diff(table.e_phi) > 0)
    assert not table.decreasing


def test_coarse_axis_refused():
    axis = np.linspace(0, 1, 21)
    with pytest.raises(ResolutionTooCoarse):
        energy_sequence(axis, np.ones_like(axis), (32,), 0.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(6, 40))
def test_ramp_bounded_and_plateau(n):
    # the rising and falling ramps meet at the midpoint for n <= 5
    x = np.linspace(0, 1, 16 * n + 1)
    val, _ = mollified_ramp(x, n)
    assert np.all(val >= -1e-12) and np.all(val <= 1 + 1e-12)
    assert val[len(x) // 2] == pytest.approx(1.0)
