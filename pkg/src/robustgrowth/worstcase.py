"""K-modification, auxiliary potential and the worst-case drift fields.

Notation on the F-grid: ``G = c~_X p`` is the modified covariance times the
density,

    G = eta c_X p + (1 - eta) A / |D|,

so that ``int_D G dy = A`` holds exactly under the grid quadrature (because
``|D|`` is the quadrature volume of the truncated factor box).  The modified
drift is ``l~_X = 1/2 G^{-1} div_x G`` and the slice right-hand side is

    f^x = div_x(c~_X (l~_X - grad phi) p) = div_x(1/2 div_x G - G grad phi).

For each x-node the potential ``v`` minimises
``J(u) = 1/2 int (grad u - xi)' a (grad u - xi) + int f u`` over D with
``a = c_Y p`` and ``xi = l_Y``, i.e. ``div(a (grad u - xi)) = f`` with
zero-flux boundary conditions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import expit

from ._fem import Q1Space, solve_zero_mean
from ._testfunctions import Bump, bump_library
from .averaging import AveragedFields, DriftFields, ModelSample
from .exceptions import (BadNesting, BoundViolated, MeanNotZero, SingularSlice,
                         WrongSetting)
from .growth import PhiSolution
from .model import Grid

BOUND_SLACK = 0.05
F_MEAN_REL_TOL = 1e-6
# absolute floor so a right-hand side that is zero up to rounding is accepted
F_MEAN_ABS_TOL = 1e-12
DIV_FREE_REL_TOL = 1e-5
M1_TOL = 2e-2


# ------------------------------------------------------------------ cutoff

def smoothstep(u):
    """Quintic smoothstep ``6u^5 - 15u^4 + 10u^3`` clamped to [0, 1], with two derivatives (C^2)."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    s = u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    ds = 30.0 * u * u * (u - 1.0) ** 2
    dds = 60.0 * u * (u - 1.0) * (2.0 * u - 1.0)
    return s, ds, dds


def smooth_transition(u):
    """C-infinity step ``expit(1/(1-u) - 1/u)`` on (0, 1), 0 below and 1 above, with two derivatives.

    Every derivative vanishes at both ends, so the cutoff built from it is smooth.
    """
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    ui = np.where(inside, u, 0.5)
    z = 1.0 / (1.0 - ui) - 1.0 / ui
    dz = 1.0 / (1.0 - ui) ** 2 + 1.0 / ui ** 2
    ddz = 2.0 / (1.0 - ui) ** 3 - 2.0 / ui ** 3
    sig = expit(z)
    q = sig * expit(-z)
    s = np.where(inside, sig, np.where(u >= 1.0, 1.0, 0.0))
    ds = np.where(inside, q * dz, 0.0)
    dds = np.where(inside, q * (1.0 - 2.0 * sig) * dz * dz + q * ddz, 0.0)
    return s, ds, dds


PROFILES = {"smooth": smooth_transition, "quintic": smoothstep}


def cutoff_1d(t, k_lo, k_hi, v_lo, v_hi, profile: str = "smooth"):
    """Equal to 1 on ``[k_lo, k_hi]``, 0 outside ``(v_lo, v_hi)``, smooth in between."""
    step = PROFILES[profile]
    t = np.asarray(t, dtype=float)
    up, dup, ddup = step((t - v_lo) / (k_lo - v_lo))
    dn, ddn, dddn = step((v_hi - t) / (v_hi - k_hi))
    left = t < k_lo
    val = np.where(left, up, dn)
    d1 = np.where(left, dup / (k_lo - v_lo), -ddn / (v_hi - k_hi))
    d2 = np.where(left, ddup / (k_lo - v_lo) ** 2, dddn / (v_hi - k_hi) ** 2)
    return val, d1, d2


def _tensor_cutoff(points, k_box, v_box, profile="smooth"):
    """Tensor-product cutoff with exact gradient and Hessian on points ``(..., d)``."""
    d = points.shape[-1]
    vals, d1s, d2s = [], [], []
    for k in range(d):
        v, a, b = cutoff_1d(points[..., k], k_box[k][0], k_box[k][1], v_box[k][0], v_box[k][1],
                            profile)
        vals.append(v)
        d1s.append(a)
        d2s.append(b)
    eta = np.prod(vals, axis=0)
    grad = np.empty(points.shape[:-1] + (d,))
    hess = np.empty(points.shape[:-1] + (d, d))
    for i in range(d):
        rest = np.prod([vals[j] for j in range(d) if j != i], axis=0) if d > 1 else 1.0
        grad[..., i] = d1s[i] * rest
        for j in range(d):
            if i == j:
                hess[..., i, i] = d2s[i] * rest
            else:
                rest2 = (np.prod([vals[l] for l in range(d) if l not in (i, j)], axis=0)
                         if d > 2 else 1.0)
                hess[..., i, j] = d1s[i] * d1s[j] * rest2
    return eta, grad, hess


# ----------------------------------------------------------- K-modification

@dataclass(frozen=True, eq=False)
class KModification:
    """Modified covariance on the F-grid with its derivatives.

    ``eta`` lives on the E-grid; ``G``, ``dG``, ``ddG`` on the F-grid with the
    derivative conventions of :mod:`robustgrowth.averaging`.
    """

    grid: Grid
    kind: str
    K_box: tuple | None
    V_box: tuple | None
    eta: np.ndarray
    deta: np.ndarray
    ddeta: np.ndarray
    G: np.ndarray
    dG: np.ndarray
    ddG: np.ndarray
    p: np.ndarray

    @property
    def ctilde(self) -> np.ndarray:
        return self.G / self.p[..., None, None]

    @property
    def divG(self) -> np.ndarray:
        return np.einsum("...jij->...i", self.dG)

    @property
    def elltilde(self) -> np.ndarray:
        """``l~_X = 1/2 G^{-1} div_x G``."""
        return 0.5 * np.linalg.solve(self.G, self.divG[..., None])[..., 0]

    def preservation_error(self, A) -> float:
        """Largest entrywise relative gap between ``int_D G dy`` and ``A``."""
        integ = self.grid.average_over_d(self.G)
        scale = np.maximum(np.abs(A), np.max(np.abs(A), axis=(-1, -2), keepdims=True) * 1e-300)
        return float(np.max(np.abs(integ - A) / np.where(scale > 0, scale, 1.0)))

    def on_k_nodes(self) -> np.ndarray:
        """Boolean E-grid mask of nodes inside K (where ``eta == 1``)."""
        return self.eta == 1.0


def _validate_boxes(grid: Grid, K_box, V_box):
    d = grid.d
    lo = grid.domain.lo[:d]
    hi = grid.domain.hi[:d]
    K = np.asarray(K_box, dtype=float).reshape(d, 2)
    V = np.asarray(V_box, dtype=float).reshape(d, 2)
    for k in range(d):
        if not (lo[k] <= V[k, 0] < K[k, 0] <= K[k, 1] < V[k, 1] <= hi[k]):
            raise BadNesting(f"need E_lo <= V_lo < K_lo <= K_hi < V_hi <= E_hi on axis {k}: "
                             f"K={tuple(K[k])}, V={tuple(V[k])}, E=({lo[k]}, {hi[k]})")
    return tuple(map(tuple, K)), tuple(map(tuple, V))


def _assemble(grid, sample: ModelSample, avg: AveragedFields, eta, deta, ddeta, kind, K, V):
    vol = grid.volume_d
    cxp = sample.cxp
    A = grid.expand_e(avg.A)
    dA = grid.expand_e(avg.dA)
    ddA = grid.expand_e(avg.ddA)
    e = grid.expand_e(eta)[..., None, None]
    de = grid.expand_e(deta)
    dde = grid.expand_e(ddeta)
    Ab = A / vol
    diff = cxp - Ab
    G = e * cxp + (1.0 - e) * Ab
    dG = (de[..., :, None, None] * diff[..., None, :, :]
          + e[..., None, :, :] * sample.cxp_dx
          + (1.0 - e[..., None, :, :]) * dA / vol)
    ddiff = sample.cxp_dx - dA / vol  # d_k (cxp - A/|D|)
    ddG = (dde[..., :, :, None, None] * diff[..., None, None, :, :]
           + de[..., :, None, None, None] * ddiff[..., None, :, :, :]
           + de[..., None, :, None, None] * ddiff[..., :, None, :, :]
           + e[..., None, None, :, :] * sample.cxp_dxx
           + (1.0 - e[..., None, None, :, :]) * ddA / vol)
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    return KModification(grid, kind, K, V, eta, deta, ddeta, G, dG, ddG, sample.p)


def build_k_modification(sample: ModelSample, avg: AveragedFields, K_box, V_box,
                         profile: str = "smooth") -> KModification:
    """``c~_X = eta c_X + (1 - eta) A / (p |D|)`` with a tensor-product cutoff ``eta``.

    ``profile`` selects the 1-D transition: ``"smooth"`` (C-infinity, default)
    or ``"quintic"`` (C^2 polynomial smoothstep).
    """
    grid = sample.grid
    K, V = _validate_boxes(grid, K_box, V_box)
    eta, deta, ddeta = _tensor_cutoff(grid.e_points, K, V, profile)
    return _assemble(grid, sample, avg, eta, deta, ddeta, "cutoff", K, V)


def identity_modification(sample: ModelSample, avg: AveragedFields) -> KModification:
    """``eta == 1``: the unmodified covariance."""
    grid = sample.grid
    eta = np.ones(grid.shape_e)
    return _assemble(grid, sample, avg, eta, np.zeros(grid.shape_e + (grid.d,)),
                     np.zeros(grid.shape_e + (grid.d, grid.d)), "identity", None, None)


def averaged_modification(sample: ModelSample, avg: AveragedFields) -> KModification:
    """``eta == 0``: ``c~_X = A / (p |D|)`` everywhere."""
    grid = sample.grid
    eta = np.zeros(grid.shape_e)
    return _assemble(grid, sample, avg, eta, np.zeros(grid.shape_e + (grid.d,)),
                     np.zeros(grid.shape_e + (grid.d, grid.d)), "averaged", None, None)


# ------------------------------------------------------------- slice RHS

def slice_rhs_field(kmod: KModification, phi: PhiSolution) -> np.ndarray:
    """``f^x(y)`` on the whole F-grid (all x-slices at once)."""
    grid = kmod.grid
    gphi = grid.expand_e(phi.grad)
    hphi = grid.expand_e(phi.hess)
    term1 = 0.5 * np.einsum("...ijij->...", kmod.ddG)
    term2 = np.einsum("...iij,...j->...", kmod.dG, gphi)
    term3 = np.einsum("...ij,...ij->...", kmod.G, hphi)
    return term1 - term2 - term3


def slice_means(grid: Grid, f) -> np.ndarray:
    """``int_D f^x dy`` for every x-node."""
    return grid.average_over_d(f)


def check_slice_means(grid: Grid, f, rel_tol: float = F_MEAN_REL_TOL, enforce: str = "raise"):
    """Verify (or project out) the slice means of ``f``.

    ``enforce`` is ``"raise"`` (MeanNotZero above tolerance), ``"project"``
    (subtract the mean on every slice and report it) or ``"ignore"``.
    """
    means = slice_means(grid, f)
    scale = float(np.max(np.abs(f))) if f.size else 0.0
    tol = rel_tol * scale + F_MEAN_ABS_TOL
    worst = float(np.max(np.abs(means))) / grid.volume_d if means.size else 0.0
    info = {"max_abs_mean": worst, "tol": tol}
    if worst > tol:
        if enforce == "raise":
            raise MeanNotZero(f"slice mean {worst:.3e} exceeds {tol:.3e}")
        if enforce == "project":
            f = f - grid.expand_e(means / grid.volume_d)
            info["projected"] = True
    return f, info


def slice_rhs(kmod: KModification, phi: PhiSolution, x_index, rel_tol: float = F_MEAN_REL_TOL):
    """``f^x`` on the D-grid for one x-node (``x_index`` is an E-grid index tuple)."""
    f = slice_rhs_field(kmod, phi)
    scale = float(np.max(np.abs(f)))
    idx = tuple(np.atleast_1d(x_index))
    fx = f[idx]
    mean = float(kmod.grid.integrate_d(fx)) / kmod.grid.volume_d
    tol = rel_tol * scale + F_MEAN_ABS_TOL
    if abs(mean) > tol:
        raise MeanNotZero(f"slice mean {mean:.3e} exceeds {tol:.3e}")
    return fx


# ----------------------------------------------------------- slice solver

@dataclass(frozen=True)
class SliceDiagnostics:
    J: float
    wnorm: float
    bound: float
    weak_residual: float
    bound_ok: bool


def _min_eig(a):
    if a.shape[-1] == 1:
        return a[..., 0, 0]
    return np.linalg.eigvalsh(a)[..., 0]


def _slice_bound(diam, weights, f, w, xi, a):
    xi_w = np.sqrt(np.sum(weights * np.einsum("...i,...ij,...j->...", xi, a, xi)))
    f_w = np.sqrt(np.sum(weights * f * f / w))
    return 2.0 * diam / np.pi * f_w + 2.0 * xi_w


def _cumtrapz0(f, h, axis=-1):
    f = np.moveaxis(f, axis, -1)
    out = np.concatenate([np.zeros(f.shape[:-1] + (1,)),
                          np.cumsum(0.5 * h * (f[..., 1:] + f[..., :-1]), axis=-1)], axis=-1)
    return np.moveaxis(out, -1, axis)


def solve_v_slice_1d(a, xi, f, y, weights, bound_slack: float = BOUND_SLACK):
    """Flux integration for ``m = 1`` (vectorised over leading slice axes).

    ``a``, ``xi``, ``f`` have shape ``(..., n)`` on the nodes ``y``.  Returns
    ``u``, ``du`` (``u'``), the flux ``F = a (u' - xi)`` and diagnostics arrays.
    """
    h = y[1] - y[0]
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise SingularSlice("a = c_Y p is not positive at every node")
    vol = weights.sum()
    fmean = np.sum(f * weights, axis=-1, keepdims=True) / vol
    fc = f - fmean
    F = _cumtrapz0(fc, h)
    # the trapezoid sum of a zero-mean field telescopes to zero; remove rounding drift
    F = F - F[..., -1:] * (y - y[0]) / (y[-1] - y[0])
    du = xi + F / a
    u = _cumtrapz0(du, h)
    w = a
    u = u - np.sum(u * w * weights, axis=-1, keepdims=True) / np.sum(w * weights, axis=-1,
                                                                       keepdims=True)
    J = 0.5 * np.sum(weights * F * F / a, axis=-1) + np.sum(weights * fc * u, axis=-1)
    wnorm = np.sqrt(np.sum(weights * du * du * a, axis=-1))
    diam = y[-1] - y[0]
    xi_w = np.sqrt(np.sum(weights * xi * xi * a, axis=-1))
    f_w = np.sqrt(np.sum(weights * fc * fc / w, axis=-1))
    bound = 2.0 * diam / np.pi * f_w + 2.0 * xi_w
    return u, du, F, fc, {"J": J, "wnorm": wnorm, "bound": bound,
                          "bound_ok": wnorm <= (1.0 + bound_slack) * bound,
                          "f_mean": fmean[..., 0]}


def weak_residual_1d(F, f, psi):
    """Discrete weak residual ``sum_c [F_c (psi_{i+1}-psi_i) + h f_c psi_c]`` (cell averages).

    ``F`` is the nodal flux ``a (u' - xi)`` and the sum telescopes to zero
    when ``F`` is the trapezoid antiderivative of ``f``.  Returned relative to
    the sum of absolute terms.
    """
    h_f = np.diff(F, axis=-1)  # equals h * cell-average of f for the flux scheme
    Fc = 0.5 * (F[..., 1:] + F[..., :-1])
    psic = 0.5 * (psi[..., 1:] + psi[..., :-1])
    dpsi = np.diff(psi, axis=-1)
    t1 = Fc * dpsi
    t2 = h_f * psic
    num = np.abs(np.sum(t1 + t2, axis=-1))
    den = np.sum(np.abs(t1), axis=-1) + np.sum(np.abs(t2), axis=-1)
    return num / np.where(den > 0, den, 1.0)


def solve_v_slice(a, xi, f, d_axes, d_weights, bound_slack: float = BOUND_SLACK,
                  tol: float = 1e-10, test_functions=None):
    """Solve one slice problem on the D-grid.

    ``a`` has shape ``shape_d + (m, m)``, ``xi`` ``shape_d + (m,)`` and ``f``
    ``shape_d``.  Returns ``(u, grad_u, SliceDiagnostics)``; ``u`` has zero
    mean with respect to ``w = lambda_min(a)``.
    """
    m = len(d_axes)
    if m == 1:
        y = d_axes[0]
        u, du, F, fc, dg = solve_v_slice_1d(a[..., 0, 0], xi[..., 0], f, y, d_weights,
                                            bound_slack)
        psis = test_functions or _slice_test_functions(d_axes)
        res = max([float(weak_residual_1d(F, fc, p)) for p in psis] + [0.0])
        diag = SliceDiagnostics(float(dg["J"]), float(dg["wnorm"]), float(dg["bound"]), res,
                                bool(dg["bound_ok"]))
        if not diag.bound_ok:
            warnings.warn(f"slice bound violated: {diag.wnorm:.4g} > {diag.bound:.4g}",
                          BoundViolated, stacklevel=2)
        return u, du[..., None], diag
    shape = tuple(ax.size for ax in d_axes)
    spacing = np.array([ax[1] - ax[0] for ax in d_axes])
    lam = _min_eig(a)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise SingularSlice("a = c_Y p is not positive definite at every node")
    space = Q1Space(shape, spacing)
    K = space.stiffness(a.reshape(-1, m, m))
    vol = d_weights.sum()
    fc = f - np.sum(f * d_weights) / vol
    rhs = space.load_grad(np.einsum("...ij,...j->...i", a, xi).reshape(-1, m)) \
        - space.load_mass(fc.reshape(-1))
    u, rel, _ = solve_zero_mean(K, rhs, d_weights, tol=tol)
    u = u.reshape(shape)
    w = lam
    u = u - np.sum(u * w * d_weights) / np.sum(w * d_weights)
    grad = np.stack([np.gradient(u, h, axis=k, edge_order=2) for k, h in enumerate(spacing)], -1)
    r = grad - xi
    J = 0.5 * np.sum(d_weights * np.einsum("...i,...ij,...j->...", r, a, r)) \
        + np.sum(d_weights * fc * u)
    wnorm = float(np.sqrt(np.sum(d_weights * np.einsum("...i,...ij,...j->...", grad, a, grad))))
    diam = float(np.linalg.norm([ax[-1] - ax[0] for ax in d_axes]))
    bound = float(_slice_bound(diam, d_weights, fc, w, xi, a))
    resid = K @ u.reshape(-1) - (rhs - rhs.mean())
    psis = test_functions or _slice_test_functions(d_axes)
    scale = np.linalg.norm(rhs) + 1e-300
    res = max([abs(float(np.dot(p.reshape(-1), resid))) / (scale * np.linalg.norm(p) + 1e-300)
               for p in psis] + [rel])
    ok = wnorm <= (1.0 + bound_slack) * bound
    if not ok:
        warnings.warn(f"slice bound violated: {wnorm:.4g} > {bound:.4g}", BoundViolated,
                      stacklevel=2)
    return u, grad, SliceDiagnostics(float(J), wnorm, bound, float(res), ok)


def _slice_test_functions(d_axes, count: int = 5):
    lo = np.array([ax[0] for ax in d_axes])
    hi = np.array([ax[-1] for ax in d_axes])
    pts = np.stack(np.meshgrid(*d_axes, indexing="ij"), -1)
    return [b.evaluate(pts)[0] for b in bump_library(lo, hi, count, seed=7)]


# ---------------------------------------------------------- full solution

@dataclass(frozen=True, eq=False)
class VSolution:
    """Auxiliary potential on the F-grid with per-slice diagnostics (E-grid arrays)."""

    grid: Grid
    vhat: np.ndarray
    grad_y: np.ndarray
    fx: np.ndarray
    flux: np.ndarray | None
    a: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    J: np.ndarray
    wnorm_lhs: np.ndarray
    wnorm_rhs: np.ndarray
    weak_residual: np.ndarray
    bound_ok: np.ndarray
    mean_info: dict = field(default_factory=dict)
    kmod_kind: str = ""
    gradient_case: bool = False

    def rho(self, k: float) -> np.ndarray:
        """``rho = w^{1/k}``."""
        return self.w ** (1.0 / k)

    def y_drift(self, p) -> np.ndarray:
        """``c_Y grad_y v`` on the F-grid, given the density ``p`` (``c_Y = a / p``)."""
        return np.einsum("...ij,...j->...i", self.a, self.grad_y) / np.asarray(p)[..., None]

    def slice_table(self) -> list:
        rows = []
        for idx in np.ndindex(self.grid.shape_e):
            rows.append({"x": [float(self.grid.e_axes[k][i]) for k, i in enumerate(idx)],
                         "J": float(self.J[idx]), "wnorm": float(self.wnorm_lhs[idx]),
                         "bound": float(self.wnorm_rhs[idx]),
                         "weak_residual": float(self.weak_residual[idx]),
                         "bound_ok": bool(self.bound_ok[idx])})
        return rows


def solve_v(kmod: KModification, phi: PhiSolution, sample: ModelSample, drift: DriftFields,
            mean_policy: str = "raise", bound_slack: float = BOUND_SLACK) -> VSolution:
    """Solve the slice problem for every x-node."""
    grid = kmod.grid
    f = slice_rhs_field(kmod, phi)
    f, info = check_slice_means(grid, f, enforce=mean_policy)
    a = sample.cyp
    xi = drift.ellY
    w = _min_eig(a)
    if np.any(w <= 0):
        raise SingularSlice("a = c_Y p is not positive definite")
    if grid.m == 1:
        u, du, F, fc, dg = solve_v_slice_1d(a[..., 0, 0], xi[..., 0], f, grid.d_axes[0],
                                            grid.d_weights, bound_slack)
        psis = _slice_test_functions(grid.d_axes)
        res = np.max(np.stack([weak_residual_1d(F, fc, p) for p in psis]), axis=0)
        ok = dg["bound_ok"]
        if not np.all(ok):
            warnings.warn(f"slice bound violated on {int(np.sum(~ok))} slices", BoundViolated,
                          stacklevel=2)
        return VSolution(grid, u, du[..., None], fc, F, a, xi, w, dg["J"], dg["wnorm"],
                         dg["bound"], res, ok, info, kmod.kind, phi.gradient_case)
    vhat = np.empty(grid.shape)
    grad = np.empty(grid.shape + (grid.m,))
    shp = grid.shape_e
    J = np.empty(shp)
    lhs = np.empty(shp)
    rhs = np.empty(shp)
    res = np.empty(shp)
    ok = np.empty(shp, dtype=bool)
    psis = _slice_test_functions(grid.d_axes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundViolated)
        for idx in np.ndindex(shp):
            u, g, dg = solve_v_slice(a[idx], xi[idx], f[idx], grid.d_axes, grid.d_weights,
                                     bound_slack, test_functions=psis)
            vhat[idx] = u
            grad[idx] = g
            J[idx], lhs[idx], rhs[idx], res[idx], ok[idx] = (dg.J, dg.wnorm, dg.bound,
                                                             dg.weak_residual, dg.bound_ok)
    if caught:
        warnings.warn(f"slice bound violated on {int(np.sum(~ok))} slices", BoundViolated,
                      stacklevel=2)
    return VSolution(grid, vhat, grad, f, None, a, xi, w, J, lhs, rhs, res, ok, info,
                     kmod.kind, phi.gradient_case)


# -------------------------------------------------------------------- beta

@dataclass(frozen=True, eq=False)
class BetaField:
    beta: np.ndarray
    checks: tuple
    tol: float

    @property
    def divergence_free(self) -> bool:
        return all(abs(v) <= t for v, t in self.checks)

    @property
    def max_ratio(self) -> float:
        return max((abs(v) / t if t > 0 else 0.0) for v, t in self.checks)


def f_test_functions(grid: Grid, count: int = 10, seed: int = 11):
    """Compactly supported bumps on the truncated F box with exact gradients."""
    lo, hi = grid.domain.lo, grid.domain.hi
    return bump_library(lo, hi, count, seed=seed)


def assemble_beta(kmod: KModification, vsol: VSolution, phi: PhiSolution, drift: DriftFields,
                  sample: ModelSample, test_functions=None,
                  rel_tol: float = DIV_FREE_REL_TOL) -> BetaField:
    """``beta = (c~_X (grad phi - l~_X), c_Y (grad_y v - l_Y))`` and the divergence-free check.

    For every test function ``u`` the quadrature of ``beta' grad u p`` must be
    below ``rel_tol`` times the same quadrature taken with absolute values of
    the four drift terms that make up ``beta``.  Scaling by the terms rather
    than by ``|beta|`` keeps the test meaningful when ``beta`` cancels to zero.
    """
    grid = kmod.grid
    gphi = np.broadcast_to(grid.expand_e(phi.grad), grid.shape + (grid.d,))
    ct = kmod.ctilde
    tx = (np.einsum("...ij,...j->...i", ct, gphi), np.einsum("...ij,...j->...i", ct, kmod.elltilde))
    ty = (np.einsum("...ij,...j->...i", sample.cy, vsol.grad_y),
          np.einsum("...ij,...j->...i", sample.cy, drift.ellY))
    beta = np.concatenate([tx[0] - tx[1], ty[0] - ty[1]], axis=-1)
    size = np.concatenate([np.abs(tx[0]) + np.abs(tx[1]), np.abs(ty[0]) + np.abs(ty[1])], axis=-1)
    pts = np.concatenate([grid.x_mesh, grid.y_mesh], axis=-1)
    tests = test_functions if test_functions is not None else f_test_functions(grid)
    checks = []
    p = sample.p
    for b in tests:
        _, gu, _ = b.evaluate(pts)
        val = float(grid.integrate(np.einsum("...i,...i->...", beta, gu) * p))
        scale = float(grid.integrate(np.einsum("...i,...i->...", size, np.abs(gu)) * p))
        checks.append((val, rel_tol * scale))
    return BetaField(beta, tuple(checks), rel_tol)


# --------------------------------------------------------------- identities

@dataclass(frozen=True)
class M1Identity:
    lhs: float
    rhs: float
    gap: float
    passed: bool
    flux_rhs: float
    flux_gap: float
    flux_passed: bool


def check_m1_identity(vsol: VSolution, tol: float = M1_TOL) -> M1Identity:
    """Compare ``int (l_Y - v')^2 c_Y p`` with ``int (f^x)^2 / (lambda_min(c_Y) p)``.

    The antiderivative variant replaces ``f^x`` on the right by its flux
    ``F(y) = int_lo^y f^x`` (``int F^2 / a``), with ``F`` recomputed by
    cumulative Simpson quadrature rather than the solver's trapezoid flux.
    """
    grid = vsol.grid
    if grid.m != 1:
        raise WrongSetting("the identity is stated for a one-dimensional factor (m = 1)")
    if vsol.kmod_kind != "identity" or not vsol.gradient_case:
        raise WrongSetting("the identity needs the gradient case and an unmodified c_X")
    a = vsol.a[..., 0, 0]
    xi = vsol.xi[..., 0]
    r = xi - vsol.grad_y[..., 0]
    lhs = float(grid.integrate(r * r * a))
    rhs = float(grid.integrate(vsol.fx ** 2 / vsol.w))
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    F = cumulative_simpson(vsol.fx, dx=grid.spacing_d[0], axis=grid.d, initial=0.0)
    flux_rhs = float(grid.integrate(F * F / vsol.w))
    flux_gap = abs(lhs - flux_rhs) / max(abs(lhs), abs(flux_rhs), 1e-300)
    return M1Identity(lhs, rhs, gap, gap <= tol, flux_rhs, flux_gap, flux_gap <= tol)


def aggregate_bound(vsol: VSolution, sample: ModelSample, drift: DriftFields) -> dict:
    """``int grad_y v' c_Y grad_y v p <= (2 Diam/pi + 2)^2 (int f^2/(lambda_min p) + int l_Y' c_Y l_Y p)``."""
    grid = vsol.grid
    gv = vsol.grad_y
    lhs = float(grid.integrate(np.einsum("...i,...ij,...j->...", gv, vsol.a, gv)))
    f_term = float(grid.integrate(vsol.fx ** 2 / vsol.w))
    xi_term = float(grid.integrate(np.einsum("...i,...ij,...j->...", vsol.xi, vsol.a, vsol.xi)))
    C = (2.0 * grid.diam_d / np.pi + 2.0) ** 2
    rhs = C * (f_term + xi_term)
    return {"lhs": lhs, "rhs": rhs, "C": C, "passed": lhs <= rhs}


def poincare_check(d_axes, d_weights, w, count: int = 20, seed: int = 3, modes: int = 4) -> dict:
    """Weighted Poincare inequality on D for random smooth zero-w-mean functions.

    Checks ``||u||_{L^2_w} <= (Diam(D)/pi) ||grad u||_{L^2_w}`` for ``count``
    random trigonometric polynomials.
    """
    rng = np.random.default_rng(seed)
    pts = np.stack(np.meshgrid(*d_axes, indexing="ij"), -1)
    lo = np.array([ax[0] for ax in d_axes])
    L = np.array([ax[-1] - ax[0] for ax in d_axes])
    diam = float(np.linalg.norm(L))
    m = len(d_axes)
    ratios = []
    for _ in range(count):
        u = np.zeros(pts.shape[:-1])
        gu = np.zeros(pts.shape)
        for _ in range(modes):
            kvec = rng.integers(0, 4, size=m)
            if not kvec.any():
                kvec[rng.integers(m)] = 1
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal()
            arg = np.pi * np.sum(kvec * (pts - lo) / L, axis=-1) + phase
            u += amp * np.cos(arg)
            gu += (-amp * np.sin(arg))[..., None] * (np.pi * kvec / L)
        u -= np.sum(u * w * d_weights) / np.sum(w * d_weights)
        lhs = np.sqrt(np.sum(u * u * w * d_weights))
        rhs = diam / np.pi * np.sqrt(np.sum(np.sum(gu * gu, axis=-1) * w * d_weights))
        ratios.append(float(lhs / rhs))
    return {"ratios": ratios, "max_ratio": max(ratios), "violations": sum(r > 1 for r in ratios)}
