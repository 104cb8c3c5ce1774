import warnings

import numpy as np
import pytest

from robustgrowth import (assemble_beta, build_k_modification, check_m1_identity, slice_rhs,
                          solve_model, solve_v, solve_v_slice)
from robustgrowth.exceptions import BadNesting, ModelError, WrongSetting
from robustgrowth.worstcase import (averaged_modification, identity_modification,
                                    poincare_check, slice_rhs_field, smooth_transition,
                                    smoothstep, solve_v_slice_1d)


def test_transitions_are_monotone_and_pinned():
    u = np.linspace(0, 1, 101)
    for fn in (smoothstep, smooth_transition):
        v = fn(u)[0] if isinstance(fn(u), tuple) else fn(u)
        assert v[0] == 0.0 and v[-1] == 1.0
        assert np.all(np.diff(v) >= 0)


def test_identity_modification_keeps_cx(beta_coarse):
    s = beta_coarse
    kmod = identity_modification(s.sample, s.avg)
    np.testing.assert_allclose(kmod.ctilde, s.sample.cx, rtol=1e-12)


def test_averaged_modification_preserves_exactly(beta_coarse):
    s = beta_coarse
    kmod = averaged_modification(s.sample, s.avg)
    assert kmod.preservation_error(s.avg.A) < 1e-12


def test_cutoff_preserves_A(beta_worst, beta_coarse):
    kmod, _ = beta_worst
    assert kmod.preservation_error(beta_coarse.avg.A) <= 1e-8
    x = beta_coarse.grid.e_axes[0]
    inside = (x >= 0.2) & (x <= 0.8)
    assert np.all(kmod.eta[inside] == 1.0)
    assert np.all(kmod.eta[(x < 0.1) | (x > 0.9)] == 0.0)


def test_bad_nesting_rejected(beta_coarse):
    s = beta_coarse
    with pytest.raises(BadNesting):
        build_k_modification(s.sample, s.avg, [(0.1, 0.9)], [(0.2, 0.8)])


def test_rhs_vanishes_outside_V(beta_worst, beta_coarse):
    kmod, _ = beta_worst
    f = slice_rhs_field(kmod, beta_coarse.phi)
    x = beta_coarse.grid.e_axes[0]
    outside = (x < 0.1) | (x > 0.9)
    assert np.max(np.abs(f[outside])) <= 1e-8 * np.max(np.abs(f))


def test_rhs_vanishes_for_averaged_modification(beta_coarse):
    s = beta_coarse
    f = slice_rhs_field(averaged_modification(s.sample, s.avg), s.phi)
    assert np.max(np.abs(f)) < 1e-8 * np.max(np.abs(s.avg.ddA))


def test_slice_mean_inside_K(beta_worst, beta_coarse):
    kmod, _ = beta_worst
    i = int(np.argmin(np.abs(beta_coarse.grid.e_axes[0] - 0.5)))
    fx = slice_rhs(kmod, beta_coarse.phi, i)
    grid = beta_coarse.grid
    assert abs(grid.integrate_d(fx)) / grid.volume_d <= 1e-6 * np.max(np.abs(fx)) + 1e-12


def test_slice_zero_data():
    y = np.linspace(0.01, 0.99, 101)
    w = np.full(y.size, y[1] - y[0])
    w[[0, -1]] *= 0.5
    u, du, diag = solve_v_slice(np.ones((y.size, 1, 1)), np.zeros((y.size, 1)), np.zeros(y.size),
                                [y], w)
    assert np.max(np.abs(u)) == 0.0 and diag.J == 0.0


def test_slice_potential_drift_is_matched():
    y = np.linspace(0.01, 0.99, 401)
    w = np.full(y.size, y[1] - y[0])
    w[[0, -1]] *= 0.5
    a = 1.0 + y
    zeta = np.cos(3 * y)
    xi = -3 * np.sin(3 * y)
    u, du, diag = solve_v_slice(a[:, None, None], xi[:, None], np.zeros(y.size), [y], w)
    target = zeta - np.sum(zeta * a * w) / np.sum(a * w)
    np.testing.assert_allclose(u, target, atol=1e-5)
    assert abs(diag.J) < 1e-12


def test_slice_sine_ode():
    lo, hi = 0.001, 0.999
    y = np.linspace(lo, hi, 2001)
    w = np.full(y.size, y[1] - y[0])
    w[[0, -1]] *= 0.5
    f = np.sin(2 * np.pi * y)
    u, du, F, fc, _ = solve_v_slice_1d(np.ones(y.size), np.zeros(y.size), f, y, w)
    k = 2 * np.pi
    mean = (np.cos(k * lo) - np.cos(k * hi)) / k / (hi - lo)
    # u'' = f - mean, u'(lo) = 0, weighted mean zero
    exact = (-(np.sin(k * y) - np.sin(k * lo)) / k ** 2 + np.cos(k * lo) * (y - lo) / k
             - mean * (y - lo) ** 2 / 2)
    exact -= np.sum(exact * w) / np.sum(w)
    np.testing.assert_allclose(u, exact, atol=1e-6)


def test_slice_two_dimensional_potential():
    ax = np.linspace(0.01, 0.99, 41)
    w1 = np.full(ax.size, ax[1] - ax[0])
    w1[[0, -1]] *= 0.5
    W = np.outer(w1, w1)
    Y1, Y2 = np.meshgrid(ax, ax, indexing="ij")
    zeta = Y1 ** 2 + Y1 * Y2
    xi = np.stack([2 * Y1 + Y2, Y1], -1)
    a = np.broadcast_to(np.eye(2), ax.shape * 2 + (2, 2))
    u, grad, diag = solve_v_slice(a, xi, np.zeros(W.shape), [ax, ax], W)
    target = zeta - np.sum(zeta * W) / np.sum(W)
    np.testing.assert_allclose(u, target, atol=1e-3)
    assert diag.bound_ok


def test_beta_field_zero_for_reversible_model():
    from robustgrowth import exogenous_model
    model, _ = exogenous_model("1 + y1", "1", "1", eps=1e-4)
    s = solve_model(model, 41)
    kmod = identity_modification(s.sample, s.avg)
    vsol = solve_v(kmod, s.phi, s.sample, s.drift)
    beta = assemble_beta(kmod, vsol, s.phi, s.drift, s.sample)
    assert np.max(np.abs(beta.beta)) < 1e-12
    assert beta.divergence_free


def test_beta_field_divergence_free_on_beta_model(beta_worst, beta_coarse):
    kmod, vsol = beta_worst
    s = beta_coarse
    beta = assemble_beta(averaged_modification(s.sample, s.avg),
                         solve_v(averaged_modification(s.sample, s.avg), s.phi, s.sample, s.drift),
                         s.phi, s.drift, s.sample)
    assert beta.divergence_free, beta.max_ratio


def test_slice_bound_holds(beta_worst):
    _, vsol = beta_worst
    assert np.all(vsol.bound_ok)
    assert np.all(vsol.wnorm_lhs <= 1.05 * vsol.wnorm_rhs)


def test_m1_identity_flux_form(beta_coarse):
    s = beta_coarse
    kmod = identity_modification(s.sample, s.avg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vsol = solve_v(kmod, s.phi, s.sample, s.drift, mean_policy="project")
    ident = check_m1_identity(vsol)
    assert ident.flux_passed, ident.flux_gap


def test_m1_identity_needs_unmodified(beta_worst):
    _, vsol = beta_worst
    with pytest.raises(WrongSetting):
        check_m1_identity(vsol)


def test_poincare_on_uniform_weight():
    ax = np.linspace(0, 1, 401)
    w1 = np.full(ax.size, ax[1] - ax[0])
    w1[[0, -1]] *= 0.5
    res = poincare_check([ax], w1, np.ones(ax.size))
    assert res["violations"] == 0 and res["max_ratio"] <= 1.0
