"""Builtin model families with closed-form oracles for the optimal portfolio.

Every constructor returns ``(MarketModel, ClosedFormOracle)``.  The oracle is
computed independently of the grid machinery (closed forms or adaptive 1-D
quadrature) so that it can serve as a reference in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import sympy as sp
from scipy import integrate
from scipy.special import betaln

from ._symbolic import make_symbols, parse_expression, symbolic_model
from .exceptions import ParamViolation, PDViolation
from .model import DomainSpec, MarketModel, build_grid

BETA_DEFAULTS = {
    "sigma": 1.0,
    "a1": 2.0, "a2": 2.0,
    "b1": 1.0, "b2": 1.0,
    "q1": 1.0, "q2": 1.0,
    "alpha1": 2.0, "alpha2": 2.0,
    "beta1": 1.0, "beta2": 1.0,
}


@dataclass(frozen=True)
class ClosedFormOracle:
    """Reference values for the optimal generating function.

    ``phi_exact`` maps ``(..., d) -> (...)`` and ``theta_exact`` maps
    ``(..., d) -> (..., d)``.  ``lambda_exact`` is the growth rate on the full
    domain, ``lambda_truncated`` the same integral over the truncated box.
    """

    phi_exact: Callable | None
    theta_exact: Callable | None
    lambda_exact: float | None = None
    lambda_truncated: float | None = None
    notes: str = ""
    extras: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    description: str
    builder: Callable
    grid: int
    eps: float
    params: Mapping = field(default_factory=dict)

    def build(self, eps: float | None = None, **overrides):
        kwargs = {**self.params, **overrides}
        return self.builder(eps=self.eps if eps is None else eps, **kwargs)


def _num(v):
    """Keep integer-valued parameters exact inside sympy expressions."""
    v = float(v)
    return sp.Integer(int(v)) if v.is_integer() else sp.Float(v)


def _log_beta(a, b) -> float:
    return float(betaln(a, b))


# ------------------------------------------------------------------- Beta

def beta_param_violations(params: Mapping) -> list:
    """List of human-readable violated constraints for the Beta family."""
    p = {**BETA_DEFAULTS, **params}
    out = []
    if not p["sigma"] > 0:
        out.append("sigma > 0")
    for i in (1, 2):
        q, a, b = p[f"q{i}"], p[f"a{i}"], p[f"b{i}"]
        al, be = p[f"alpha{i}"], p[f"beta{i}"]
        if not q >= 0:
            out.append(f"q{i} >= 0")
        if not a > 0:
            out.append(f"a{i} > 0")
        if not b >= 1:
            out.append(f"b{i} >= 1")
        if not al > 1:
            out.append(f"alpha{i} > 1")
        if not b + a > 2:
            out.append(f"b{i} + a{i} > 2")
        if not 2 - al < be:
            out.append(f"2 - alpha{i} < beta{i}")
        if not be < 2 * al - 1:
            out.append(f"beta{i} < 2*alpha{i} - 1")
    return out


def beta_model(params: Mapping | None = None, eps: float = 1e-3):
    """One-dimensional Beta-density model on ``E = D = (0, 1)``.

    ``c_X = sigma^2 x^b1 (1-x)^b2 (x+y)^q1 (2-x-y)^q2``, Beta-product density
    and ``c_Y = y^beta1 (1-y)^beta2``.
    """
    p = {**BETA_DEFAULTS, **(params or {})}
    unknown = set(p) - set(BETA_DEFAULTS)
    if unknown:
        raise ParamViolation(f"unknown Beta parameters: {sorted(unknown)}")
    bad = beta_param_violations(p)
    if bad:
        raise ParamViolation("violated: " + ", ".join(bad))
    domain = DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), eps)
    (x,), (y,) = make_symbols(1, 1)
    P = {k: _num(v) for k, v in p.items()}
    log_norm = _log_beta(p["a1"], p["a2"]) + _log_beta(p["alpha1"], p["alpha2"])
    cx = (P["sigma"] ** 2 * x ** P["b1"] * (1 - x) ** P["b2"]
          * (x + y) ** P["q1"] * (2 - x - y) ** P["q2"])
    dens = (x ** (P["a1"] - 1) * (1 - x) ** (P["a2"] - 1)
            * y ** (P["alpha1"] - 1) * (1 - y) ** (P["alpha2"] - 1)) * sp.Float(math.exp(-log_norm))
    cy = y ** P["beta1"] * (1 - y) ** P["beta2"]
    model = symbolic_model(domain, (x,), (y,), sp.Matrix([[cx]]), dens, sp.Matrix([[cy]]),
                           "beta", p)
    return model, _beta_oracle(p, domain)


def _beta_oracle(p, domain):
    s2 = p["sigma"] ** 2
    e1 = p["a1"] + p["b1"] - 1
    e2 = p["a2"] + p["b2"] - 1
    lb_a = _log_beta(p["a1"], p["a2"])
    lb_al = _log_beta(p["alpha1"], p["alpha2"])
    al1, al2 = p["alpha1"], p["alpha2"]
    q1, q2 = p["q1"], p["q2"]

    if q1 == 1 and q2 == 1:
        r1 = math.exp(_log_beta(al1, al2 + 1) - lb_al)
        r2 = math.exp(_log_beta(al1 + 1, al2) - lb_al)
        r3 = math.exp(_log_beta(al1 + 1, al2 + 1) - lb_al)

        def quad_part(x):
            return x * (1 - x) + x * r1 + (1 - x) * r2 + r3

        def quad_slope(x):
            return 1 - 2 * x + r1 - r2

        notes = ("closed form for q1 = q2 = 1; the sigma^2 factor enters as the additive "
                 "constant log(sigma)")
        extras = {"r1": r1, "r2": r2, "r3": r3}
    elif q1 == 0 and q2 == 0:
        def quad_part(x):
            return np.ones_like(x)

        def quad_slope(x):
            return np.zeros_like(x)

        notes = "closed form for q1 = q2 = 0"
        extras = {}
    else:
        return _beta_quadrature_oracle(p, domain)

    def A_exact(x):
        x = np.asarray(x, dtype=float)
        return s2 * x ** e1 * (1 - x) ** e2 * np.exp(-lb_a) * quad_part(x)

    def phi_exact(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return 0.5 * np.log(A_exact(x))

    def theta_scalar(x):
        return e1 / (2 * x) - e2 / (2 * (1 - x)) + 0.5 * quad_slope(x) / quad_part(x)

    def theta_exact(x):
        x = np.asarray(x, dtype=float)
        return theta_scalar(x[..., 0])[..., None]

    def lam(lo, hi):
        val, _ = integrate.quad(lambda t: 0.5 * theta_scalar(t) ** 2 * A_exact(t), lo, hi,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)

    lo, hi = domain.lo[0], domain.hi[0]
    return ClosedFormOracle(phi_exact, theta_exact, lam(0.0, 1.0), lam(lo, hi), notes,
                            {**extras, "A_exact": A_exact})


def _beta_quadrature_oracle(p, domain):
    """Oracle from adaptive quadrature in y when no closed form is available."""
    s2 = p["sigma"] ** 2
    lb = _log_beta(p["a1"], p["a2"]) + _log_beta(p["alpha1"], p["alpha2"])

    def cxp(x, y):
        return (s2 * x ** p["b1"] * (1 - x) ** p["b2"] * (x + y) ** p["q1"] * (2 - x - y) ** p["q2"]
                * x ** (p["a1"] - 1) * (1 - x) ** (p["a2"] - 1)
                * y ** (p["alpha1"] - 1) * (1 - y) ** (p["alpha2"] - 1) * math.exp(-lb))

    def dlog_cxp(x, y):
        return ((p["b1"] + p["a1"] - 1) / x - (p["b2"] + p["a2"] - 1) / (1 - x)
                + p["q1"] / (x + y) - p["q2"] / (2 - x - y))

    @lru_cache(maxsize=4096)
    def A_and_dA(x):
        A = integrate.quad(lambda y: cxp(x, y), 0, 1, epsabs=1e-14, epsrel=1e-12)[0]
        dA = integrate.quad(lambda y: cxp(x, y) * dlog_cxp(x, y), 0, 1, epsabs=1e-14,
                            epsrel=1e-12)[0]
        return A, dA

    def phi_exact(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return np.vectorize(lambda t: 0.5 * math.log(A_and_dA(float(t))[0]))(x)

    def theta_exact(x):
        x = np.asarray(x, dtype=float)[..., 0]

        def one(t):
            A, dA = A_and_dA(float(t))
            return 0.5 * dA / A

        return np.vectorize(one)(x)[..., None]

    def lam(lo, hi):
        def integrand(t):
            A, dA = A_and_dA(float(t))
            return 0.125 * dA * dA / A
        return float(integrate.quad(integrand, lo, hi, limit=200)[0])

    lo, hi = domain.lo[0], domain.hi[0]
    return ClosedFormOracle(phi_exact, theta_exact, lam(0.0, 1.0), lam(lo, hi),
                            "adaptive quadrature oracle (no closed form for these q)")


# --------------------------------------------------------------- Exogenous

def _box(d, m, eps, e=(0.0, 1.0), dd=(0.0, 1.0)):
    return DomainSpec((e[0],) * d, (e[1],) * d, (dd[0],) * m, (dd[1],) * m, eps)


def exogenous_model(cx_of_y, p_x, p_y, cy=None, d: int = 1, m: int = 1,
                    eps: float = 1e-3, domain: DomainSpec | None = None):
    """Exogenous volatility: ``c_X = c_X(y)`` and ``p = p_X(x) p_Y(y)``.

    Inputs are formula strings (or nested lists of strings for matrices) in
    ``x1.., y1..``.  ``cy`` defaults to the identity.
    """
    domain = domain or _box(d, m, eps)
    d, m = domain.d, domain.m
    xs, ys = make_symbols(d, m)
    CX = _parse_matrix(cx_of_y, d, xs, ys)
    if any(s in CX.free_symbols for s in xs):
        raise ParamViolation("exogenous c_X must not depend on x")
    PX = parse_expression(str(p_x), xs, ys)
    PY = parse_expression(str(p_y), xs, ys)
    CY = _parse_matrix(cy, m, xs, ys) if cy is not None else sp.eye(m)
    params = {"cx_of_y": cx_of_y, "p_x": p_x, "p_y": p_y, "cy": cy}
    model = symbolic_model(domain, xs, ys, CX, PX * PY, CY, "exogenous", params)
    return model, _exogenous_oracle(domain, xs, ys, CX, PX, PY)


def _box_quad(f, lo, hi):
    """Adaptive quadrature of a scalar function of ``len(lo)`` variables."""
    if len(lo) == 1:
        return integrate.quad(f, lo[0], hi[0], epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return integrate.nquad(f, list(zip(lo, hi)), opts={"epsabs": 1e-11, "epsrel": 1e-10})[0]


def _exogenous_oracle(domain, xs, ys, CX, PX, PY):
    d, m = domain.d, domain.m
    lo, hi = domain.lo, domain.hi
    full_lo = np.array(domain.e_lo + domain.d_lo)
    full_hi = np.array(domain.e_hi + domain.d_hi)
    py = sp.lambdify(ys, PY, "numpy")

    def abar(l, h):
        out = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                cij = sp.lambdify(ys, CX[i, j], "numpy")
                out[i, j] = _box_quad(lambda *yy: cij(*yy) * py(*yy), l[d:], h[d:])
        return out

    grad_log = [sp.lambdify(xs, sp.diff(sp.log(PX), s), "numpy") for s in xs]
    px = sp.lambdify(xs, PX, "numpy")
    log_px = sp.lambdify(xs, sp.log(PX), "numpy")

    def phi_exact(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(0.5 * log_px(*[x[..., i] for i in range(d)]), x.shape[:-1]) * 1.0

    def theta_exact(x):
        x = np.asarray(x, dtype=float)
        comps = [x[..., i] for i in range(d)]
        return np.stack([np.broadcast_to(0.5 * g(*comps), x.shape[:-1]) for g in grad_log], -1) * 1.0

    def lam(l, h, factor):
        Ab = abar(l, h)

        def integrand(*xx):
            g = np.array([gl(*xx) for gl in grad_log], dtype=float)
            return float(g @ Ab @ g) * float(px(*xx))

        return factor * _box_quad(integrand, l[:d], h[:d])

    lam_full = lam(full_lo, full_hi, 0.125)
    lam_trunc = lam(lo, hi, 0.125)
    printed = lam(full_lo, full_hi, 1.0)
    return ClosedFormOracle(
        phi_exact, theta_exact, lam_full, lam_trunc,
        "growth rate uses 1/8 of the integral of grad(log p_X)' Abar grad(log p_X) p_X; "
        "the display without the 1/8 factor is kept in extras['lambda_as_printed']",
        {"lambda_as_printed": printed, "Abar": abar(lo, hi)},
    )


def _parse_matrix(spec, k, xs, ys):
    if isinstance(spec, str) or np.isscalar(spec):
        if k != 1:
            rows = [[spec if i == j else "0" for j in range(k)] for i in range(k)]
        else:
            rows = [[spec]]
    else:
        rows = spec
    M = sp.Matrix([[parse_expression(str(e), xs, ys) for e in row] for row in rows])
    if M.shape != (k, k):
        raise ParamViolation(f"expected a {k}x{k} matrix, got {M.shape}")
    return M


# --------------------------------------------------------------- Tractable

def tractable_model(f_i, f_ij, g, h_ij, p_x, p_y, cy=None, d: int = 2, m: int = 1,
                    eps: float = 1e-3, domain: DomainSpec | None = None, check_grid: int = 21):
    """Tractable class with ``A^{-1} div A`` a gradient.

    ``c_X^{ii} = f_ii(x_{-i}, y) f_i(x^i) g(x) h_ii(y)`` and
    ``c_X^{ij} = f_ij(x_{-ij}, y) f_i(x^i) f_j(x^j) g(x) h_ij(y)`` for i != j.
    ``f_i`` is a list of formulas, ``f_ij`` and ``h_ij`` are symmetric nested
    lists of formulas.  Positive definiteness is checked on a coarse grid.
    """
    domain = domain or _box(d, m, eps)
    d, m = domain.d, domain.m
    xs, ys = make_symbols(d, m)
    if len(f_i) != d:
        raise ParamViolation(f"need {d} functions f_i")
    F = [parse_expression(str(e), xs, ys) for e in f_i]
    for i, fi in enumerate(F):
        if fi.free_symbols - {xs[i]}:
            raise ParamViolation(f"f_{i + 1} may depend on x{i + 1} only")
    Fij = _parse_matrix(f_ij, d, xs, ys)
    H = _parse_matrix(h_ij, d, xs, ys)
    for i in range(d):
        for j in range(d):
            banned = {xs[i]} | ({xs[j]} if i != j else set())
            if Fij[i, j].free_symbols & banned:
                raise ParamViolation(f"f_{i + 1}{j + 1} must not depend on x{i + 1} or x{j + 1}")
            if H[i, j].free_symbols & set(xs):
                raise ParamViolation("h_ij may depend on y only")
    G = parse_expression(str(g), xs, ys)
    PX = parse_expression(str(p_x), xs, ys)
    PY = parse_expression(str(p_y), xs, ys)
    CX = sp.zeros(d, d)
    for i in range(d):
        for j in range(d):
            if i == j:
                CX[i, i] = Fij[i, i] * F[i] * G * H[i, i]
            else:
                CX[i, j] = Fij[i, j] * F[i] * F[j] * G * H[i, j]
    if CX != CX.T:
        raise ParamViolation("f_ij and h_ij must be symmetric")
    CY = _parse_matrix(cy, m, xs, ys) if cy is not None else sp.eye(m)
    params = {"f_i": list(f_i), "f_ij": f_ij, "g": g, "h_ij": h_ij, "p_x": p_x, "p_y": p_y,
              "cy": cy}
    model = symbolic_model(domain, xs, ys, CX, PX * PY, CY, "tractable", params)
    grid = build_grid(domain, check_grid)
    cx = model.cx(grid.x_mesh, grid.y_mesh)
    lam_min = float(np.min(np.linalg.eigvalsh(cx)))
    if not lam_min > 0:
        raise PDViolation(f"assembled c_X is not positive definite (min eigenvalue {lam_min:.3g})")

    phi_expr = sum(sp.log(fi) for fi in F) / 2 + sp.log(G) / 2 + sp.log(PX) / 2
    phi_f = sp.lambdify(xs, phi_expr, "numpy")
    grad_f = [sp.lambdify(xs, sp.diff(phi_expr, s), "numpy") for s in xs]

    def phi_exact(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(phi_f(*[x[..., i] for i in range(d)]), x.shape[:-1]) * 1.0

    def theta_exact(x):
        x = np.asarray(x, dtype=float)
        comps = [x[..., i] for i in range(d)]
        return np.stack([np.broadcast_to(gf(*comps), x.shape[:-1]) * 1.0 for gf in grad_f], -1)

    oracle = ClosedFormOracle(phi_exact, theta_exact, None, None,
                              "phi = sum 1/2 log f_i + 1/2 log g + 1/2 log p_X")
    return model, oracle


# ----------------------------------------------------------- Non-gradient

def nongradient_model(eps: float = 1e-3):
    """``c_X = diag(1 + x1 x2, 1)`` with uniform density: ``A^{-1} div A`` has nonzero curl."""
    domain = _box(2, 1, eps)
    xs, ys = make_symbols(2, 1)
    CX = sp.Matrix([[1 + xs[0] * xs[1], 0], [0, 1]])
    model = symbolic_model(domain, xs, ys, CX, sp.Integer(1), sp.eye(1), "nongradient", {})
    return model, ClosedFormOracle(None, None, None, None,
                                   "no closed form; validated through stationarity checks")


# ------------------------------------------------------------------ Catalog

CATALOG = {
    "beta-default": CatalogEntry(
        "beta-default", "Beta model with sigma=1, a=2, b=1, q=1, alpha=2, beta=1",
        lambda eps, **kw: beta_model(kw, eps=eps), grid=401, eps=1e-3),
    "exogenous-uniform": CatalogEntry(
        "exogenous-uniform", "exogenous volatility 1+y with uniform p_X (constant A, zero growth)",
        lambda eps, **kw: exogenous_model("1 + y1", "1", "1", eps=eps, **kw), grid=201, eps=1e-4),
    "exogenous-beta": CatalogEntry(
        "exogenous-beta", "exogenous volatility 1+y with p_X = 30 x^2 (1-x)^2",
        lambda eps, **kw: exogenous_model("1 + y1", "30*x1**2*(1 - x1)**2", "1", eps=eps, **kw),
        grid=401, eps=1e-3),
    "tractable-2d": CatalogEntry(
        "tractable-2d", "two-asset tractable model with cross dependence",
        lambda eps, **kw: tractable_model(
            ["1 + x1", "1 + x2**2"],
            [["2 + x2 + y1", "y1/2"], ["y1/2", "2 + x1*y1"]],
            "1 + x1*x2 / 2", [["1", "1"], ["1", "1"]],
            "4*(1 + x1)*(1 + x2)/9", "2*(1 + y1)/3", eps=eps, **kw),
        grid=81, eps=1e-4),
    "nongradient-2d": CatalogEntry(
        "nongradient-2d", "c_X = diag(1 + x1 x2, 1), uniform density (finite-element solve)",
        lambda eps, **kw: nongradient_model(eps=eps), grid=41, eps=1e-4),
}


def get_entry(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; available: {sorted(CATALOG)}") from None


def list_entries() -> list:
    return [{"name": e.name, "description": e.description, "grid": e.grid, "eps": e.eps}
            for e in CATALOG.values()]


def model_from_config(doc: Mapping, base_dir=".") -> MarketModel:
    """Build a model from a parsed JSON config document."""
    from ._symbolic import expression_model
    from .model import tabulated_model

    family = doc.get("family")
    params = dict(doc.get("params", {}))
    dom_doc = doc.get("domain")
    domain = DomainSpec.from_dict(dom_doc) if dom_doc else None
    eps = domain.boundary_eps if domain else float(doc.get("eps", 1e-3))
    if family == "beta":
        return beta_model(params, eps=eps)[0]
    if family == "exogenous":
        return exogenous_model(domain=domain, eps=eps, **params)[0]
    if family == "tractable":
        return tractable_model(domain=domain, eps=eps, **params)[0]
    if family == "expression":
        if domain is None:
            raise ParamViolation("expression models need a domain")
        return expression_model(domain, params["cx"], params["density"], params["cy"])
    if family == "tabulated":
        if domain is None:
            raise ParamViolation("tabulated models need a domain")
        return tabulated_model(domain, params["cx"], params["density"], params["cy"], base_dir)
    if family == "example":
        return get_entry(params["name"]).build(eps=eps)[0]
    raise ParamViolation(f"unknown family {family!r}")
