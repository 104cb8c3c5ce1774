import numpy as np
import pytest

from robustgrowth import (CATALOG, exogenous_model, get_entry, list_entries, model_from_config,
                          solve_model, tractable_model)
from robustgrowth.exceptions import ParamViolation, PDViolation
from robustgrowth.verification import phi_oracle_gap

ORACLE_ENTRIES = [name for name, e in CATALOG.items() if e.build()[1].phi_exact is not None]


def _interior_points(model, k=7):
    lo, hi = model.domain.lo[: model.d], model.domain.hi[: model.d]
    t = np.linspace(0.1, 0.9, k)
    mesh = np.stack(np.meshgrid(*[a + t * (b - a) for a, b in zip(lo, hi)], indexing="ij"), -1)
    return mesh.reshape(-1, model.d)


@pytest.mark.parametrize("name", ORACLE_ENTRIES)
def test_oracle_gradient_consistent(name):
    model, oracle = get_entry(name).build()
    pts = _interior_points(model)
    h = 1e-5
    for i in range(model.d):
        e = np.zeros(model.d)
        e[i] = h
        fd = (oracle.phi_exact(pts + e) - oracle.phi_exact(pts - e)) / (2 * h)
        np.testing.assert_allclose(fd, oracle.theta_exact(pts)[:, i], atol=1e-6)


@pytest.mark.parametrize("name", ORACLE_ENTRIES)
def test_numeric_phi_matches_oracle(name):
    entry = get_entry(name)
    model, oracle = entry.build()
    sol = solve_model(model, entry.grid).phi
    assert phi_oracle_gap(sol, oracle) <= 1e-3


def test_uniform_exogenous_oracle():
    _, oracle = exogenous_model("1 + y1", "1", "1")
    pts = np.array([[0.2], [0.6]])
    assert np.ptp(oracle.phi_exact(pts)) == 0.0
    assert np.all(oracle.theta_exact(pts) == 0.0)
    assert oracle.lambda_exact == 0.0


def test_exogenous_theta_ignores_volatility():
    pts = np.array([[0.2], [0.5], [0.8]])
    thetas = [exogenous_model(cx, "30*x1**2*(1 - x1)**2", "1")[1].theta_exact(pts)
              for cx in ("1 + y1", "3 + sin(y1)")]
    np.testing.assert_array_equal(thetas[0], thetas[1])


def test_exogenous_rejects_x_dependence():
    with pytest.raises(ParamViolation):
        exogenous_model("1 + x1", "1", "1")


def test_trivial_tractable_is_flat():
    _, oracle = tractable_model(["1", "1"], [["1", "0"], ["0", "1"]], "1",
                                [["1", "1"], ["1", "1"]], "1", "1")
    pts = np.array([[0.2, 0.3], [0.7, 0.9]])
    assert np.ptp(oracle.phi_exact(pts)) == 0.0


def test_tractable_rejects_bad_dependence():
    with pytest.raises(ParamViolation):
        tractable_model(["1 + x2", "1"], [["1", "0"], ["0", "1"]], "1",
                        [["1", "1"], ["1", "1"]], "1", "1")


def test_tractable_rejects_indefinite():
    with pytest.raises(PDViolation):
        tractable_model(["1", "1"], [["1", "3"], ["3", "1"]], "1",
                        [["1", "1"], ["1", "1"]], "1", "1")


def test_beta_lambda_oracle_positive():
    _, oracle = get_entry("beta-default").build()
    assert oracle.lambda_exact > oracle.lambda_truncated > 0


def test_listing_and_lookup():
    names = [e["name"] for e in list_entries()]
    assert names == list(CATALOG)
    with pytest.raises(KeyError):
        get_entry("nope")


def test_config_families():
    beta = model_from_config({"family": "beta", "params": {"a1": 3.0}, "eps": 1e-3})
    assert beta.family == "beta" and beta.params["a1"] == 3.0
    expr = model_from_config({"family": "expression",
                              "domain": {"e_lo": [0], "e_hi": [1], "d_lo": [0], "d_hi": [1],
                                         "boundary_eps": 0.0},
                              "params": {"cx": "1", "density": "1", "cy": "1"}})
    assert expr.d == 1
    ex = model_from_config({"family": "example", "params": {"name": "exogenous-uniform"}})
    assert ex.family == "exogenous"
    with pytest.raises(ParamViolation):
        model_from_config({"family": "unknown"})


def test_tabulated_roundtrip(tmp_path, beta_star):
    from robustgrowth.model import build_grid, write_field_csv
    model, _ = beta_star
    grid = build_grid(model.domain, 41)
    cx = model.cx(grid.x_mesh, grid.y_mesh)[..., 0, 0]
    write_field_csv(tmp_path / "cx.csv", grid, cx)
    write_field_csv(tmp_path / "p.csv", grid, model.density(grid.x_mesh, grid.y_mesh))
    write_field_csv(tmp_path / "cy.csv", grid, model.cy(grid.x_mesh, grid.y_mesh)[..., 0, 0])
    doc = {"family": "tabulated", "domain": model.domain.to_dict(),
           "params": {"cx": [["cx.csv"]], "density": "p.csv", "cy": [["cy.csv"]]}}
    tab = model_from_config(doc, base_dir=tmp_path)
    np.testing.assert_allclose(tab.cx(grid.x_mesh, grid.y_mesh)[..., 0, 0], cx, rtol=1e-12)
