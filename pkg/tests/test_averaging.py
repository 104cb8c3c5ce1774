import numpy as np
import pytest

from robustgrowth import (DomainSpec, average_covariance, build_grid, drift_fields,
                          effective_covariance, exogenous_model, marginal_density, sample_model,
                          y_average_covariance)
from robustgrowth._symbolic import expression_model


def _identity_product_model():
    dom = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 1e-3)
    return expression_model(dom, "1", "(6*x1*(1 - x1))*(2*y1)", "1")


def test_identity_cx_gives_marginal():
    model = _identity_product_model()
    grid = build_grid(model.domain, 101)
    A = average_covariance(model, grid)
    pX = marginal_density(model, grid)
    x = grid.e_axes[0]
    # the factor marginal 2y loses mass 2e-3 on the truncated box
    np.testing.assert_allclose(A[..., 0, 0], 6 * x * (1 - x), rtol=3e-3)
    np.testing.assert_allclose(pX, A[..., 0, 0], rtol=1e-12)
    np.testing.assert_allclose(effective_covariance(A, pX)[..., 0, 0], 1.0, rtol=1e-12)


def test_identity_cy_gives_y_marginal():
    model = _identity_product_model()
    grid = build_grid(model.domain, 101)
    B = y_average_covariance(model, grid)
    y = grid.d_axes[0]
    # the x-marginal 6x(1-x) integrates to 1 by the trapezoid rule up to O(h^2)
    np.testing.assert_allclose(B[..., 0, 0], 2 * y, rtol=2e-4)


def test_beta_A_at_half(beta_solved):
    grid = beta_solved.grid
    i = int(np.argmin(np.abs(grid.e_axes[0] - 0.5)))
    assert grid.e_axes[0][i] == pytest.approx(0.5)
    # A(1/2) = 6 (1/2)^2 (1/2)^2 (1/4 + 7/10)
    assert beta_solved.avg.A[i, 0, 0] == pytest.approx(0.35625, rel=1e-5)


def test_beta_B_shape(beta_solved):
    y = beta_solved.grid.d_axes[0]
    ratio = beta_solved.avg.B[..., 0, 0] / (y ** 2 * (1 - y) ** 2)
    assert np.ptp(ratio) / np.mean(ratio) < 1e-3


def test_exogenous_factorisation():
    model, _ = exogenous_model("1 + y1", "30*x1**2*(1 - x1)**2", "1", eps=1e-3)
    grid = build_grid(model.domain, 201)
    A = average_covariance(model, grid)
    pX = marginal_density(model, grid)
    cbar = effective_covariance(A, pX)[..., 0, 0]
    assert np.ptp(cbar) < 1e-12
    # Abar = int_0^1 (1 + y) dy
    assert cbar[0] == pytest.approx(1.5, rel=3e-3)


def test_flat_model_has_zero_drift():
    dom = DomainSpec((0.0, 0.0), (1.0, 1.0), (0.0,), (1.0,), 0.0)
    model = expression_model(dom, [["1", "0"], ["0", "1"]], "1", "1")
    drift = drift_fields(model, build_grid(dom, 11))
    assert np.max(np.abs(drift.ell)) == 0.0


def test_gaussian_drift_is_minus_half_x():
    dom = DomainSpec((-4.0,), (4.0,), (0.0,), (1.0,), 0.0)
    model = expression_model(dom, "1", "exp(-x1**2/2)/sqrt(2*pi)", "1")
    grid = build_grid(dom, 81)
    drift = drift_fields(model, grid)
    np.testing.assert_allclose(drift.ellX[..., 0], -0.5 * grid.x_mesh[..., 0]
                               * np.ones(grid.shape), atol=1e-4)
    np.testing.assert_allclose(drift.ellY, 0.0, atol=1e-12)


def test_sample_is_finite(beta_solved):
    s = beta_solved.sample
    for arr in (s.cx, s.p, s.cy, s.cxp_dx, s.cxp_dxx, s.cyp_dy):
        assert np.all(np.isfinite(arr))
