"""Acceptance criteria on the Beta model with default parameters.

Every test prints one PASS/FAIL line; the lines are repeated together in the
terminal summary.  Tolerances are fixed constants below.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import record_criterion
from robustgrowth import (SimConfig, beta_model, simulate_reference, simulate_worst_case,
                          solve_model, solve_phi)
from robustgrowth.assumptions import constant_weight_energies, test_function_energies
from robustgrowth.cli import main
from robustgrowth.exceptions import BoundViolated
from robustgrowth.simulate import competitor_strategies, occupation_tv
from robustgrowth.verification import ibp_gap, phi_oracle_gap, stationarity
from robustgrowth.worstcase import (build_k_modification, check_m1_identity,
                                    identity_modification, poincare_check, solve_v)

GRID = 401
EPS = 1e-3
PHI_TOL = 1e-3
PHI_SECONDS = 5.0
EL_TOL = 1e-6
IBP_TOL = 1e-4
IBP_SECONDS = 10.0
PRESERVATION_TOL = 1e-8
K_BOX = [(0.2, 0.8)]
V_BOX = [(0.1, 0.9)]
BOUND_SLACK = 0.05
M1_TOL = 2e-2
T_LONG = 2e4
DT = 1e-3
TV_TOL = 0.05
TV_PATHS = 16
TV_SECONDS = 120.0
GROWTH_PATHS = 64
GROWTH_REL = 0.05
ENERGY_FACTOR = 1.5
ENERGY_SCHEDULE = (8, 16, 32)
POINCARE_COUNT = 20


@pytest.fixture(scope="module")
def star():
    model, oracle = beta_model(eps=EPS)
    start = time.perf_counter()
    solved = solve_model(model, GRID)
    return model, oracle, solved, time.perf_counter() - start


@pytest.fixture(scope="module")
def worst(star):
    _, _, s, _ = star
    kmod = build_k_modification(s.sample, s.avg, K_BOX, V_BOX)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundViolated)
        vsol = solve_v(kmod, s.phi, s.sample, s.drift, mean_policy="project")
    return kmod, vsol


@pytest.fixture(scope="module")
def growth_runs(star, worst):
    model, _, s, _ = star
    kmod, vsol = worst
    cfg = SimConfig(T=T_LONG, dt=DT, n_paths=GROWTH_PATHS, seed=2024)
    wc = simulate_worst_case(model, kmod, s.phi, vsol, cfg, competitor_strategies(s.grid, s.phi))
    ref = simulate_reference(model, s.drift, cfg, {"theta_hat": s.phi.grad}, sample=s.sample)
    return wc, ref


def test_criterion_01_closed_form(star):
    _, oracle, s, seconds = star
    gap = phi_oracle_gap(s.phi, oracle)
    ok = gap <= PHI_TOL and seconds < PHI_SECONDS
    assert record_criterion(1, "phi matches the closed form", ok,
                            f"L-inf gap {gap:.2e} <= {PHI_TOL:g}, {seconds:.2f} s < {PHI_SECONDS:g} s")


def test_criterion_02_stationarity(star):
    _, _, s, _ = star
    # the closed form is stationary exactly; the finite-element solve on the same A is not
    closed = stationarity(s.phi, s.avg, count=10)
    fem = stationarity(solve_phi(s.avg, method="fd-solve"), s.avg, count=10)
    ok = max(closed, fem) <= EL_TOL
    assert record_criterion(2, "Euler-Lagrange stationarity along 10 bumps", ok,
                            f"max |dE| closed form {closed:.2e}, finite elements {fem:.2e}, "
                            f"<= {EL_TOL:g}")


def test_criterion_03_integration_by_parts(star):
    _, _, s, _ = star
    start = time.perf_counter()
    gap = ibp_gap(s.avg, count=5)
    seconds = time.perf_counter() - start
    ok = gap <= IBP_TOL and seconds < IBP_SECONDS
    assert record_criterion(3, "growth functionals agree for 5 random test functions", ok,
                            f"max gap {gap:.2e} <= {IBP_TOL:g}, {seconds:.2f} s")


def test_criterion_04_preservation(star, worst):
    _, _, s, _ = star
    kmod, _ = worst
    err = kmod.preservation_error(s.avg.A)
    assert record_criterion(4, "K-modification preserves A nodewise", err <= PRESERVATION_TOL,
                            f"max relative error {err:.2e} <= {PRESERVATION_TOL:g}")


def test_criterion_05_slice_bound(worst):
    _, vsol = worst
    ratio = np.max(vsol.wnorm_lhs / np.where(vsol.wnorm_rhs > 0, vsol.wnorm_rhs, np.inf))
    ok = bool(np.all(vsol.wnorm_lhs <= (1 + BOUND_SLACK) * vsol.wnorm_rhs))
    assert record_criterion(5, "per-slice norm bound on every x-slice", ok,
                            f"max ratio {ratio:.3f} <= {1 + BOUND_SLACK:g}")


@pytest.fixture(scope="module")
def m1(star):
    _, _, s, _ = star
    ident = identity_modification(s.sample, s.avg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundViolated)
        vsol = solve_v(ident, s.phi, s.sample, s.drift, mean_policy="project")
    return check_m1_identity(vsol, M1_TOL)


def test_criterion_06_m1_identity(m1):
    # the right-hand side with f^x itself; see the flux-form test below
    ok = m1.gap <= M1_TOL
    assert record_criterion(6, "m=1 identity, right-hand side with f^x", ok,
                            f"relative gap {m1.gap:.3f} vs {M1_TOL:g}; "
                            f"lhs {m1.lhs:.5g}, rhs {m1.rhs:.5g}")


def test_criterion_06_m1_identity_flux_form(m1):
    ok = m1.flux_gap <= M1_TOL
    assert record_criterion(6, "m=1 identity, right-hand side with the flux of f^x", ok,
                            f"relative gap {m1.flux_gap:.2e} <= {M1_TOL:g}")


def test_criterion_07_ergodicity(star, worst):
    model, _, s, _ = star
    kmod, vsol = worst
    start = time.perf_counter()
    res = simulate_worst_case(model, kmod, s.phi, vsol,
                              SimConfig(T=T_LONG, dt=DT, n_paths=TV_PATHS, seed=7))
    seconds = time.perf_counter() - start
    tv = occupation_tv(res, s.sample.p, coord=0)
    ok = tv <= TV_TOL and seconds < TV_SECONDS
    assert record_criterion(7, "worst-case X occupation matches p_X", ok,
                            f"TV {tv:.4f} <= {TV_TOL:g}, {seconds:.1f} s < {TV_SECONDS:g} s")


@pytest.mark.parametrize("measure", ["worst-case", "reference"])
def test_criterion_08_growth(star, growth_runs, measure):
    _, _, s, _ = star
    res = growth_runs[0] if measure == "worst-case" else growth_runs[1]
    lam = s.phi.lambda_
    g, se = res.growth("theta_hat")
    tol = max(3 * se, GROWTH_REL * lam)
    ok = abs(g - lam) <= tol
    assert record_criterion(8, f"growth of theta_hat under the {measure} measure", ok,
                            f"g {g:.5f} +- {se:.1e}, lambda {lam:.5f}, tolerance {tol:.4f}")


@pytest.mark.parametrize("name", ["x-bump", "y-sine"])
def test_criterion_09_competitors(growth_runs, name):
    wc = growth_runs[0]
    g_opt, se = wc.growth("theta_hat")
    g_c, _ = wc.growth(name)
    ok = g_c <= g_opt + 3 * se
    assert record_criterion(9, f"competitor {name} does not beat theta_hat", ok,
                            f"g {g_c:.5f} vs {g_opt:.5f} + 3 x {se:.1e}")


def test_criterion_10_energies(star):
    _, _, s, _ = star
    table = test_function_energies(s.avg, ENERGY_SCHEDULE)
    ratios = table.ratios("phi") + table.ratios("psi")
    counter = constant_weight_energies(ENERGY_SCHEDULE)
    nondecreasing = bool(np.all(np.diff(counter.e_phi) >= 0))
    ok = min(ratios) >= ENERGY_FACTOR and nondecreasing
    assert record_criterion(10, "test-function energies decay; constant weight does not", ok,
                            f"min ratio {min(ratios):.2f} >= {ENERGY_FACTOR:g}, constant-weight "
                            f"energies {', '.join(f'{e:.3g}' for e in counter.e_phi)}")


def test_criterion_11_determinism(tmp_path):
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        base = ["--example", "beta-default", "--grid", "201", "--out", str(out)]
        assert main(["solve"] + base) == 0
        assert main(["simulate"] + base + ["--T", "50", "--paths", "16", "--seed", "11",
                                           "--record", "20"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                     if p.name != "manifest.json"})
    same = runs[0] == runs[1]
    assert record_criterion(11, "repeated seeded runs are byte-identical", same,
                            f"{len(runs[0])} output files compared")


def test_criterion_12_poincare(star, worst):
    _, _, s, _ = star
    _, vsol = worst
    grid = s.grid
    worst_ratio, violations = 0.0, 0
    for i in (grid.shape_e[0] // 4, grid.shape_e[0] // 2, 3 * grid.shape_e[0] // 4):
        res = poincare_check(grid.d_axes, grid.d_weights, vsol.w[i], count=POINCARE_COUNT)
        worst_ratio = max(worst_ratio, res["max_ratio"])
        violations += res["violations"]
    ok = violations == 0
    assert record_criterion(12, "weighted Poincare inequality", ok,
                            f"{violations} violations in 3 x {POINCARE_COUNT} functions, "
                            f"max ratio {worst_ratio:.3f}")
