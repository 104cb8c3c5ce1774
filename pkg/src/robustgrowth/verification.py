"""Verification suite: oracle, identity and Monte Carlo checks for a catalog entry.

Each check yields a row ``(name, value, tolerance, status)``.  ``status`` is
``pass``, ``fail`` or ``xfail``.  ``xfail`` marks either a run below the
entry's reference resolution or a check documented as not holding in its
literal form.  Rows flagged ``primary`` correspond to acceptance criteria; the
others are diagnostics.  The verdict fails only on a primary ``fail`` row.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._testfunctions import bump_library, random_bump_sum
from .assumptions import constant_weight_energies, test_function_energies
from .averaging import averaged_fields, drift_fields, sample_model
from .catalog import get_entry
from .exceptions import BoundViolated, ResolutionTooCoarse, ResolutionWarning
from .growth import (discrete_problem, energy_directional_derivative, energy_identity_growth,
                     ibp_growth_functional, solve_phi)
from .model import build_grid, validate_model
from .pipeline import default_boxes, grid_sizes
from .simulate import (SimConfig, competitor_strategies, occupation_tv, simulate_reference,
                       simulate_worst_case)
from .worstcase import (assemble_beta, build_k_modification, check_m1_identity,
                        identity_modification, poincare_check, solve_v)

ORACLE_TOL = 1e-3
TRIM = 0.05
EL_TOL = 1e-6
IBP_TOL = 1e-4
PRESERVATION_TOL = 1e-8
M1_TOL = 2e-2
TV_TOL = 0.05
GROWTH_REL_TOL = 0.05
ENERGY_FACTOR = 1.5
# polynomial bumps with these radii (fraction of the box width) keep the quadrature
# error of the two functionals well below IBP_TOL on every reference grid
IBP_RADII = (0.2, 0.4)


@dataclass(frozen=True)
class CheckRow:
    name: str
    value: float
    tolerance: float
    status: str
    note: str = ""
    primary: bool = True

    @property
    def counts(self) -> bool:
        return self.primary and self.status != "xfail"

    def to_dict(self) -> dict:
        return {"check": self.name, "value": self.value, "tolerance": self.tolerance,
                "status": self.status, "primary": self.primary, "note": self.note}


def _row(name, value, tol, ok, note="", coarse=False, expected_false=False, primary=True):
    value = float(value)
    if ok:
        return CheckRow(name, value, float(tol), "pass", note, primary)
    if expected_false:
        return CheckRow(name, value, float(tol), "xfail", note, primary)
    if coarse:
        return CheckRow(name, value, float(tol), "xfail", "below reference resolution" +
                        (f"; {note}" if note else ""), primary)
    return CheckRow(name, value, float(tol), "fail", note, primary)


def trimmed_mask(grid, trim: float = TRIM):
    """E-grid mask removing ``trim`` of the box width at each face."""
    mask = np.ones(grid.shape_e, dtype=bool)
    for k, ax in enumerate(grid.e_axes):
        L = ax[-1] - ax[0]
        keep = (ax >= ax[0] + trim * L) & (ax <= ax[-1] - trim * L)
        shape = [1] * grid.d
        shape[k] = -1
        mask &= keep.reshape(shape)
    return mask


def phi_oracle_gap(sol, oracle, trim: float = TRIM) -> float:
    """L-infinity gap to the closed form on the trimmed interior, after aligning the constant."""
    grid = sol.grid
    mask = trimmed_mask(grid, trim)
    diff = sol.phi - oracle.phi_exact(grid.e_points)
    diff = diff[mask]
    return float(np.max(np.abs(diff - diff.mean())))


def stationarity(sol, avg, count: int = 10, seed: int = 0) -> float:
    """Largest directional derivative of the variational energy along bump directions.

    Closed-form and gradient-case solutions carry an exact gradient, so the
    continuous energy is differentiated along each bump.  Finite-element
    solutions are checked against the discrete energy they minimise, with the
    bumps sampled at the nodes.
    """
    grid = avg.grid
    bumps = bump_library(grid.domain.lo[: grid.d], grid.domain.hi[: grid.d], count, seed=seed)
    if sol.method == "fd-solve":
        prob = discrete_problem(avg)
        return max(abs(prob.directional_derivative(sol.phi, b.evaluate(grid.e_points)[0]))
                   for b in bumps)
    return max(abs(energy_directional_derivative(sol.grad, b.evaluate(grid.e_points)[1], avg))
               for b in bumps)


def ibp_gap(avg, count: int = 5) -> float:
    """Largest gap between the two growth functionals over random bump sums."""
    grid = avg.grid
    lo, hi = grid.domain.lo[: grid.d], grid.domain.hi[: grid.d]
    gaps = []
    for s in range(count):
        bumps = random_bump_sum(lo, hi, 3, seed=100 + s, radius_range=IBP_RADII, profile="poly")
        _, g, H = bumps.evaluate(grid.e_points)
        gaps.append(abs(ibp_growth_functional(g, H, avg) - energy_identity_growth(g, avg)))
    return max(gaps)


def run_verification(name: str, grid_n=None, eps=None, monte_carlo: bool = True,
                     T: float = 2000.0, dt: float = 1e-3, n_paths: int = 16,
                     seed: int = 0) -> list:
    """Run every applicable check for catalog entry ``name``."""
    entry = get_entry(name)
    model, oracle = entry.build(eps=eps)
    n_list = grid_sizes(model, entry.grid if grid_n is None else grid_n)
    coarse = min(n_list) < entry.grid
    rows = []
    grid = build_grid(model.domain, n_list)
    rep = validate_model(model, grid)
    rows.append(_row("model validation", len(rep.failed()), 0, rep.passed,
                     ", ".join(rep.failed()), coarse))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        sample = sample_model(model, grid)
        avg = averaged_fields(model, grid, sample)
        drift = drift_fields(model, grid, sample)
        sol = solve_phi(avg)
    if oracle.phi_exact is not None:
        gap = phi_oracle_gap(sol, oracle)
        rows.append(_row("phi vs closed form (trimmed L-inf)", gap, ORACLE_TOL, gap <= ORACLE_TOL,
                         sol.method, coarse))
    if oracle.lambda_truncated is not None:
        rel = abs(sol.lambda_ - oracle.lambda_truncated) / max(abs(oracle.lambda_truncated), 1e-12)
        ok = rel <= ORACLE_TOL or abs(sol.lambda_ - oracle.lambda_truncated) <= 1e-10
        rows.append(_row("lambda vs quadrature of closed form (relative)", rel, ORACLE_TOL, ok,
                         f"lambda = {sol.lambda_:.10g}", coarse))
    el = stationarity(sol, avg)
    rows.append(_row("Euler-Lagrange stationarity (10 bumps)", el, EL_TOL, el <= EL_TOL, "",
                     coarse))
    ib = ibp_gap(avg)
    rows.append(_row("integration-by-parts identity (5 bump sums)", ib, IBP_TOL, ib <= IBP_TOL,
                     "", coarse))
    K, V = default_boxes(grid)
    kmod = build_k_modification(sample, avg, K, V)
    pres = kmod.preservation_error(avg.A)
    rows.append(_row("K-modification preserves A (relative)", pres, PRESERVATION_TOL,
                     pres <= PRESERVATION_TOL, "", coarse))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundViolated)
        vsol = solve_v(kmod, sol, sample, drift, mean_policy="project")
    ratio = float(np.max(np.divide(vsol.wnorm_lhs, vsol.wnorm_rhs,
                                   out=np.zeros_like(vsol.wnorm_lhs),
                                   where=vsol.wnorm_rhs > 0)))
    rows.append(_row("per-slice norm bound (max ratio, 5% slack)", ratio, 1.05,
                     bool(np.all(vsol.bound_ok)), "", coarse))
    beta = assemble_beta(kmod, vsol, sol, drift, sample)
    rows.append(_row("beta divergence-free (max ratio to tolerance)", beta.max_ratio, 1.0,
                     beta.divergence_free, "limited by the x-resolution of the cutoff",
                     coarse, primary=False))
    pc = poincare_check(grid.d_axes, grid.d_weights, vsol.w[(grid.shape_e[0] // 2,) * grid.d])
    rows.append(_row("weighted Poincare (violations of 20)", pc["violations"], 0,
                     pc["violations"] == 0, f"max ratio {pc['max_ratio']:.4g}", coarse))
    if grid.m == 1 and sol.gradient_case:
        ident = identity_modification(sample, avg)
        vi = solve_v(ident, sol, sample, drift, mean_policy="project")
        m1 = check_m1_identity(vi, M1_TOL)
        rows.append(_row("m=1 identity, literal right-hand side (relative gap)", m1.gap, M1_TOL,
                         m1.passed, "documented: does not hold as printed; the flux form does",
                         coarse, expected_false=True))
        rows.append(_row("m=1 identity, flux form (relative gap)", m1.flux_gap, M1_TOL,
                         m1.flux_passed, "", coarse))
    if model.family == "beta":
        rows.extend(_energy_rows(avg, coarse))
    if monte_carlo:
        rows.extend(_monte_carlo_rows(model, sample, avg, drift, sol, kmod, vsol, T, dt, n_paths,
                                      seed, coarse))
    return rows


def _energy_rows(avg, coarse):
    name = "test-function energy decay (min ratio per doubling)"
    try:
        tab = test_function_energies(avg, (8, 16, 32))
    except ResolutionTooCoarse as exc:
        return [_row(name, np.nan, ENERGY_FACTOR, False, str(exc), coarse)]
    worst = min(min(tab.ratios("phi")), min(tab.ratios("psi")))
    rows = [_row(name, worst, ENERGY_FACTOR, worst >= ENERGY_FACTOR, "", coarse)]
    cw = constant_weight_energies((8, 16, 32))
    rows.append(_row("constant-weight counterexample energy does not decay (max ratio)",
                     max(cw.ratios("phi")), 1.0, max(cw.ratios("phi")) <= 1.0))
    return rows


def _monte_carlo_rows(model, sample, avg, drift, sol, kmod, vsol, T, dt, n_paths, seed, coarse):
    rows = []
    grid = avg.grid
    cfg = SimConfig(T=T, dt=dt, n_paths=n_paths, seed=seed)
    wc = simulate_worst_case(model, kmod, sol, vsol, cfg,
                             strategies=competitor_strategies(grid, sol))
    ref = simulate_reference(model, drift, cfg, strategies={"theta_hat": sol.grad}, sample=sample)
    tv = occupation_tv(wc, sample.p, 0)
    rows.append(_row("worst-case occupation vs p_X (TV, 50 bins)", tv, TV_TOL, tv <= TV_TOL,
                     f"T={T:g}, dt={dt:g}, {n_paths} paths", coarse))
    lam = sol.lambda_
    g_hat, se = wc.growth("theta_hat")
    tol = max(3 * se, GROWTH_REL_TOL * abs(lam))
    rows.append(_row("growth of theta_hat, worst case (|g - lambda|)", abs(g_hat - lam), tol,
                     abs(g_hat - lam) <= tol, f"g = {g_hat:.6g} +- {se:.2g}", coarse))
    g_ref, se_ref = ref.growth("theta_hat")
    tol_r = max(3 * se_ref, GROWTH_REL_TOL * abs(lam))
    rows.append(_row("growth of theta_hat, reference (|g - lambda|)", abs(g_ref - lam), tol_r,
                     abs(g_ref - lam) <= tol_r, f"g = {g_ref:.6g} +- {se_ref:.2g}", coarse))
    for name in ("x-bump", "y-sine"):
        diff = wc.growth_samples(name) - wc.growth_samples("theta_hat")
        g_c, se_c = wc.growth(name)
        excess = g_c - g_hat
        rows.append(_row(f"competitor {name} does not beat theta_hat (excess growth)", excess,
                         3 * se, excess <= 3 * se,
                         f"paired difference {diff.mean():.4g} +- "
                         f"{diff.std(ddof=1) / np.sqrt(diff.size):.2g}", coarse))
    return rows


def verdict(rows) -> bool:
    """True unless a primary row failed."""
    return not any(r.primary and r.status == "fail" for r in rows)
