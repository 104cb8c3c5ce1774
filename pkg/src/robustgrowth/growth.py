"""Optimal generating function, robust growth rate and growth functionals.

The optimal generating function solves ``div(A grad phi - 1/2 div A) = 0`` on
the truncated box with natural boundary conditions.  Three solution paths are
available:

``"1d-closed-form"``
    ``phi = 1/2 log A`` when ``d = 1``.
``"gradient-case"``
    ``A^{-1} div A = grad h`` (zero curl); ``phi = h / 2``.
``"fd-solve"``
    Q1 finite elements for the divergence-form operator, solved by
    preconditioned conjugate gradients on the zero-mean subspace.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._fem import Q1Space, solve_zero_mean
from .averaging import AveragedFields
from .exceptions import OutOfDomain, ResolutionWarning, SingularSystem
from .model import Grid

PATH_CONSISTENCY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class GradientCase:
    """Result of the gradient-case detector: ``G = A^{-1} div A = grad h``."""

    h: np.ndarray
    G: np.ndarray
    dG: np.ndarray
    curl: float
    curl_tol: float
    path_consistency: float


@dataclass(frozen=True, eq=False)
class PhiSolution:
    """Optimal generating function on the E-grid.

    ``phi`` has zero grid mean; ``phi + gauge_offset`` is the un-normalised
    solution (for the closed form, exactly ``1/2 log A``).
    """

    grid: Grid
    phi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    lambda_: float
    method: str
    residual: float
    energy: float
    gauge_offset: float = 0.0
    gradient_case: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.grad

    def strategy(self, x):
        return strategy_weights(self, x)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "lambda": self.lambda_,
            "method": self.method,
            "residual": self.residual,
            "energy": self.energy,
            "gauge_offset": self.gauge_offset,
            "gradient_case": self.gradient_case,
            "grid": {"shape": list(g.shape_e), "lo": list(g.domain.lo[: g.d]),
                     "hi": list(g.domain.hi[: g.d])},
            "diagnostics": self.diagnostics,
        }


# ------------------------------------------------------------ helpers

def _grid_mean_e(grid: Grid, f) -> float:
    return float(grid.integrate_e(f) / grid.e_weights.sum())


def fd_gradient_e(grid: Grid, f):
    """Second-order finite-difference gradient of an E-grid scalar field."""
    f = np.asarray(f, dtype=float)
    parts = [np.gradient(f, h, axis=k, edge_order=2) for k, h in enumerate(grid.spacing_e)]
    return np.stack(parts, axis=-1)


def fd_hessian_e(grid: Grid, f):
    g = fd_gradient_e(grid, f)
    rows = [np.stack([np.gradient(g[..., i], h, axis=k, edge_order=2)
                      for k, h in enumerate(grid.spacing_e)], axis=-1) for i in range(grid.d)]
    H = np.stack(rows, axis=-2)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def normalised_field(avg: AveragedFields):
    """``G = A^{-1} div A`` and its exact derivatives ``dG[..., k, j] = d_k G_j``."""
    A, dA = avg.A, avg.dA
    divA = avg.divA
    G = np.linalg.solve(A, divA[..., None])[..., 0]
    # d_k G = -A^{-1} (d_k A) G + A^{-1} d_k(div A)
    dAG = np.einsum("...kij,...j->...ki", dA, G)
    rhs = -dAG + avg.d_divA
    dG = np.linalg.solve(A[..., None, :, :], rhs[..., None])[..., 0]
    return G, dG


# ------------------------------------------------------ gradient case

def _cumulative_corrected(f, df, h, axis):
    """Cumulative trapezoid with the Euler-Maclaurin end correction (fourth order)."""
    f = np.moveaxis(f, axis, 0)
    df = np.moveaxis(df, axis, 0)
    cells = 0.5 * h * (f[1:] + f[:-1]) - h * h / 12.0 * (df[1:] - df[:-1])
    out = np.concatenate([np.zeros_like(f[:1]), np.cumsum(cells, axis=0)], axis=0)
    return np.moveaxis(out, 0, axis)


def _path_integral(G, dG, grid: Grid, order):
    """Integrate ``G = grad h`` along axis-ordered paths from the lower corner.

    The path to a node first moves along ``order[0]`` with every other
    coordinate at its lower bound, then along ``order[1]``, and so on.
    """
    d = grid.d
    h_field = np.zeros(grid.shape_e)
    for pos, k in enumerate(order):
        later = order[pos + 1:]
        sl = tuple(slice(0, 1) if a in later else slice(None) for a in range(d))
        seg = _cumulative_corrected(G[sl + (k,)], dG[sl + (k, k)], grid.spacing_e[k], k)
        h_field = h_field + np.broadcast_to(seg, grid.shape_e)
    return h_field


def detect_gradient_case(avg: AveragedFields, curl_tol: float | None = None) -> GradientCase | None:
    """Return ``h`` with ``grad h = A^{-1} div A`` if the curl vanishes, else ``None``.

    The curl is computed from exact derivatives of ``A``; the default
    tolerance is ``1e-6 max|G|``.
    """
    grid = avg.grid
    d = grid.d
    G, dG = normalised_field(avg)
    if d == 1:
        h = np.log(avg.A[..., 0, 0])
        return GradientCase(h, G, dG, 0.0, 0.0, 0.0)
    gmax = float(np.max(np.abs(G)))
    tol = curl_tol if curl_tol is not None else 1e-6 * max(gmax, 1e-300)
    curl = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            curl = max(curl, float(np.max(np.abs(dG[..., i, j] - dG[..., j, i]))))
    if curl > tol:
        return None
    h1 = _path_integral(G, dG, grid, tuple(range(d)))
    h2 = _path_integral(G, dG, grid, tuple(reversed(range(d))))
    consistency = float(np.max(np.abs((h1 - h1.mean()) - (h2 - h2.mean()))))
    if consistency > PATH_CONSISTENCY_TOL:
        warnings.warn(f"path-ordered integration differs by {consistency:.2e} between axis "
                      "orders; refine the grid", ResolutionWarning, stacklevel=2)
    return GradientCase(0.5 * (h1 + h2), G, dG, curl, tol, consistency)


# ------------------------------------------------------------- energies

def variational_energy(phi, avg: AveragedFields, grad=None) -> float:
    """``int (1/2 A^{-1} div A - grad phi)' A (1/2 A^{-1} div A - grad phi)`` by trapezoid quadrature.

    ``grad`` may be supplied (exact gradient); otherwise it is obtained by
    finite differences of ``phi``.
    """
    grid = avg.grid
    g = fd_gradient_e(grid, phi) if grad is None else np.asarray(grad, dtype=float)
    half_G = 0.5 * np.linalg.solve(avg.A, avg.divA[..., None])[..., 0]
    r = half_G - g
    return float(grid.integrate_e(np.einsum("...i,...ij,...j->...", r, avg.A, r)))


def energy_directional_derivative(grad_phi, grad_psi, avg: AveragedFields) -> float:
    """Exact derivative of ``eps -> variational_energy(phi + eps psi)`` at ``eps = 0``."""
    half_G = 0.5 * np.linalg.solve(avg.A, avg.divA[..., None])[..., 0]
    r = half_G - grad_phi
    return float(-2.0 * avg.grid.integrate_e(np.einsum("...i,...ij,...j->...", r, avg.A, grad_psi)))


def divA_energy(avg: AveragedFields) -> float:
    """``int div A' A^{-1} div A``."""
    divA = avg.divA
    return float(avg.grid.integrate_e(
        np.einsum("...i,...i->...", divA, np.linalg.solve(avg.A, divA[..., None])[..., 0])))


def ibp_growth_functional(grad, hess, avg: AveragedFields) -> float:
    """Growth rate of the portfolio generated by ``phi``: ``-1/2 int Tr(A (hess + grad grad'))``.

    This is the log-space form of ``-1/2 int Tr(A hess(e^phi)) / e^phi`` and
    never exponentiates ``phi``.
    """
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    M = hess + grad[..., :, None] * grad[..., None, :]
    return float(-0.5 * avg.grid.integrate_e(np.einsum("...ij,...ji->...", avg.A, M)))


def energy_identity_growth(grad, avg: AveragedFields) -> float:
    """Same growth functional after integration by parts (compactly supported ``phi``).

    ``1/8 int div A' A^{-1} div A - 1/2 variational_energy(phi)``.
    """
    return 0.125 * divA_energy(avg) - 0.5 * variational_energy(None, avg, grad=grad)


def growth_rate(grad, avg: AveragedFields) -> float:
    """``lambda = 1/2 int grad phi' A grad phi``."""
    grad = grad.grad if isinstance(grad, PhiSolution) else np.asarray(grad, dtype=float)
    val = float(0.5 * avg.grid.integrate_e(np.einsum("...i,...ij,...j->...", grad, avg.A, grad)))
    return max(val, 0.0)


def flux_residual(grad, avg: AveragedFields) -> float:
    """L2 norm of ``A grad phi - 1/2 div A`` over E (zero in the gradient case)."""
    r = np.einsum("...ij,...j->...i", avg.A, grad) - 0.5 * avg.divA
    return float(np.sqrt(avg.grid.integrate_e(np.sum(r * r, axis=-1))))


# --------------------------------------------------------------- solver

@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    """Q1 discretisation of the variational problem on the E-grid."""

    space: Q1Space
    K: object
    b: np.ndarray
    const: float

    def energy(self, phi) -> float:
        u = np.asarray(phi, dtype=float).reshape(-1)
        return float(u @ (self.K @ u) - 2.0 * self.b @ u + self.const)

    def directional_derivative(self, phi, psi) -> float:
        u = np.asarray(phi, dtype=float).reshape(-1)
        v = np.asarray(psi, dtype=float).reshape(-1)
        return float(2.0 * v @ (self.K @ u - self.b))


def discrete_problem(avg: AveragedFields) -> DiscreteProblem:
    grid = avg.grid
    space = Q1Space(grid.shape_e, grid.spacing_e)
    A = avg.A.reshape(-1, grid.d, grid.d)
    divA = avg.divA.reshape(-1, grid.d)
    K = space.stiffness(A)
    b = space.load_grad(0.5 * divA)
    Ag = space.to_gauss(A)
    dg = space.to_gauss(divA)
    const = 0.25 * space.integrate(np.einsum("cgi,cgi->cg", dg,
                                             np.linalg.solve(Ag, dg[..., None])[..., 0]),
                                   at_gauss=True)
    return DiscreteProblem(space, K, b, const)


def _fd_solve(avg: AveragedFields, tol, max_iter):
    grid = avg.grid
    if np.min(np.linalg.eigvalsh(avg.A)) <= 0:
        raise SingularSystem("A is not positive definite at every node")
    prob = discrete_problem(avg)
    u, rel, its = solve_zero_mean(prob.K, prob.b, grid.e_weights, tol=tol, max_iter=max_iter)
    phi = u.reshape(grid.shape_e)
    return phi, prob, rel, its


def solve_phi(avg: AveragedFields, method: str = "auto", tol: float = 1e-10,
              max_iter: int | None = None, curl_tol: float | None = None) -> PhiSolution:
    """Optimal generating function and growth rate.

    ``method`` is ``"auto"`` (closed form, then gradient case, then
    finite elements) or one of the three method tags to force a path.
    """
    grid = avg.grid
    d = grid.d
    diag = {}
    gc = None
    if method in ("auto", "1d-closed-form", "gradient-case"):
        if method == "1d-closed-form" and d != 1:
            raise ValueError("the closed form requires d = 1")
        gc = detect_gradient_case(avg, curl_tol)
        if method == "gradient-case" and gc is None:
            raise ValueError("A^{-1} div A is not a gradient for this model")
    if gc is not None and method in ("auto", "1d-closed-form", "gradient-case"):
        tag = "1d-closed-form" if d == 1 and method != "gradient-case" else "gradient-case"
        raw = 0.5 * gc.h
        grad = 0.5 * gc.G
        hess = 0.5 * 0.5 * (gc.dG + np.swapaxes(gc.dG, -1, -2))
        diag.update({"curl": gc.curl, "curl_tol": gc.curl_tol,
                     "path_consistency": gc.path_consistency})
        residual = flux_residual(grad, avg)
        energy = variational_energy(None, avg, grad=grad)
    elif method in ("auto", "fd-solve"):
        tag = "fd-solve"
        raw, prob, rel, its = _fd_solve(avg, tol, max_iter)
        grad = fd_gradient_e(grid, raw)
        hess = fd_hessian_e(grid, raw)
        residual = rel
        energy = prob.energy(raw)
        diag.update({"iterations": its, "discrete_energy": energy,
                     "nodal_energy": variational_energy(None, avg, grad=grad)})
    else:
        raise ValueError(f"unknown method {method!r}")
    offset = _grid_mean_e(grid, raw)
    phi = raw - offset
    lam = growth_rate(grad, avg)
    diag["divA_energy_over_8"] = 0.125 * divA_energy(avg)
    return PhiSolution(grid, phi, grad, hess, lam, tag, residual, energy, offset,
                       gc is not None, diag)


# ------------------------------------------------------------ strategy

def strategy_weights(solution: PhiSolution, x) -> np.ndarray:
    """``theta(x) = grad phi(x)`` by multilinear interpolation; depends on ``x`` only."""
    grid = solution.grid
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    if scalar:
        x = x.reshape(1)
    if x.shape[-1] != grid.d:
        if grid.d == 1:
            x = x[..., None]
        else:
            raise OutOfDomain(f"expected points with {grid.d} coordinates")
    lo = grid.domain.lo[: grid.d]
    hi = grid.domain.hi[: grid.d]
    slack = 1e-12 * (hi - lo)
    if np.any(x < lo - slack) or np.any(x > hi + slack):
        raise OutOfDomain("point outside the truncated E box")
    x = np.clip(x, lo, hi)
    interp = RegularGridInterpolator(grid.e_axes, solution.grad, method="linear")
    out = interp(x.reshape(-1, grid.d)).reshape(x.shape[:-1] + (grid.d,))
    return out[0] if scalar else out


def interpolate_e(grid: Grid, values, x):
    """Multilinear interpolation of an E-grid field at points ``x`` (clipped to the box)."""
    lo = grid.domain.lo[: grid.d]
    hi = grid.domain.hi[: grid.d]
    x = np.clip(np.asarray(x, dtype=float), lo, hi)
    interp = RegularGridInterpolator(grid.e_axes, values, method="linear")
    return interp(x.reshape(-1, grid.d)).reshape(x.shape[:-1] + np.shape(values)[grid.d:])
