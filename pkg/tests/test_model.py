import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustgrowth import DomainSpec, MarketModel, build_grid, validate_model
from robustgrowth.exceptions import BadResolution, InvalidDomain


def _const_model(density=1.0, cx=None):
    dom = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 0.0)

    def cx_eval(x, y):
        out = np.ones(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (1, 1))
        return out if cx is None else cx(x, y, out)

    return MarketModel(dom, cx_eval,
                       lambda x, y: np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]), density),
                       lambda x, y: np.ones(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (1, 1)))


def test_three_node_trapezoid(unit_grid):
    np.testing.assert_allclose(unit_grid.e_axes[0], [0.1, 0.5, 0.9])
    np.testing.assert_allclose(unit_grid.axis_weights[0], [0.2, 0.4, 0.2])


def test_two_nodes_rejected():
    dom = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 0.0)
    with pytest.raises(BadResolution):
        build_grid(dom, 2)


def test_resolution_count_must_match_axes():
    dom = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 0.0)
    with pytest.raises(BadResolution):
        build_grid(dom, [5, 5, 5])


@pytest.mark.parametrize("args", [((0.0,), (0.0,), (0.0,), (1.0,), 0.0),
                                  ((0.0,), (1.0,), (0.0,), (np.inf,), 0.0),
                                  ((0.0,), (1.0,), (0.0,), (1.0,), 0.6),
                                  ((0.0,), (1.0,), (0.0,), (1.0,), -1.0)])
def test_bad_domains(args):
    with pytest.raises(InvalidDomain):
        DomainSpec(*args)


def test_truncated_box_and_roundtrip():
    dom = DomainSpec((0.0, -1.0), (1.0, 1.0), (0.0,), (2.0,), 0.01)
    assert (dom.d, dom.m) == (2, 1)
    np.testing.assert_allclose(dom.lo, [0.01, -0.99, 0.01])
    assert DomainSpec.from_dict(dom.to_dict()) == dom


def test_integrate_constant_is_volume():
    dom = DomainSpec((0.0, 0.0), (2.0, 1.0), (0.0,), (3.0,), 0.0)
    grid = build_grid(dom, [5, 7, 4])
    assert grid.integrate(np.ones(grid.shape)) == pytest.approx(6.0)


def test_beta_model_validates(beta_star):
    model, _ = beta_star
    report = validate_model(model, build_grid(model.domain, 201))
    assert report.passed, report.failed()


def test_density_two_fails_mass():
    model = _const_model(density=2.0)
    report = validate_model(model, build_grid(model.domain, 21))
    assert "density_mass" in report.failed()
    mass = [c for c in report.checks if c.name == "density_mass"][0].value
    assert mass == pytest.approx(2.0)


def test_asymmetric_cx_fails_symmetry():
    def cx(x, y, out):
        out = np.repeat(np.repeat(out, 2, -1), 2, -2) * np.eye(2)
        out[..., 0, 1] = 0.5
        return out

    dom = DomainSpec((0.0, 0.0), (1.0, 1.0), (0.0,), (1.0,), 0.0)
    shape = lambda x, y: np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    model = MarketModel(dom, lambda x, y: cx(x, y, np.ones(shape(x, y) + (1, 1))),
                        lambda x, y: np.ones(shape(x, y)),
                        lambda x, y: np.ones(shape(x, y) + (1, 1)))
    report = validate_model(model, build_grid(dom, 5))
    assert any(name.startswith("cx") and "sym" in name for name in report.failed())


def test_catalog_entries_validate():
    from robustgrowth import CATALOG
    for name, entry in CATALOG.items():
        model, _ = entry.build()
        n = min(entry.grid, 101) if model.d == 1 else min(entry.grid, 31)
        assert validate_model(model, build_grid(model.domain, n)).passed, name


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 60), eps=st.floats(0.0, 0.2), length=st.floats(0.5, 5.0))
def test_weights_sum_to_box_length(n, eps, length):
    dom = DomainSpec((0.0,), (length,), (0.0,), (1.0,), eps)
    grid = build_grid(dom, n)
    assert grid.axis_weights[0].sum() == pytest.approx(length - 2 * eps, rel=1e-12)
    assert np.all(np.diff(grid.e_axes[0]) > 0)
