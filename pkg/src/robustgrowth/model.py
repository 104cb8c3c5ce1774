"""Market-model inputs, truncated domains and tensor quadrature grids.

A model consists of the instantaneous covariance ``c_X(x, y)`` of the asset
process, the joint invariant density ``p(x, y)`` and the factor covariance
``c_Y(x, y)`` on ``F = E x D``.  Both ``E`` and ``D`` are boxes; all numerical
work happens on the box shrunk by ``boundary_eps`` on every face, because the
inputs are allowed to blow up (or degenerate) at the boundary.

Evaluators are vectorised: ``x`` has shape ``(..., d)``, ``y`` has shape
``(..., m)`` (broadcastable against each other) and the return value has shape
``(..., d, d)``, ``(...)`` or ``(..., m, m)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .exceptions import BadResolution, EvaluatorFailure, InvalidDomain, ModelError

DENSITY_MASS_TOL = 5e-3


def _as_bounds(values, name):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidDomain(f"{name} must be a non-empty 1-D sequence")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class DomainSpec:
    """Boxes approximating ``E`` (length ``d``) and ``D`` (length ``m``).

    ``boundary_eps`` is the offset removed from every face.  It may be zero
    for models that are regular up to the boundary.
    """

    e_lo: tuple
    e_hi: tuple
    d_lo: tuple
    d_hi: tuple
    boundary_eps: float = 1e-3

    def __post_init__(self):
        for name in ("e_lo", "e_hi", "d_lo", "d_hi"):
            object.__setattr__(self, name, _as_bounds(getattr(self, name), name))
        if len(self.e_lo) != len(self.e_hi) or len(self.d_lo) != len(self.d_hi):
            raise InvalidDomain("lower and upper bounds differ in length")
        lo = np.array(self.e_lo + self.d_lo)
        hi = np.array(self.e_hi + self.d_hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidDomain("bounds must be finite")
        if np.any(lo >= hi):
            raise InvalidDomain("need lo < hi on every axis")
        eps = float(self.boundary_eps)
        if not np.isfinite(eps) or eps < 0:
            raise InvalidDomain("boundary_eps must be a finite non-negative number")
        if eps >= 0.5 * np.min(hi - lo):
            raise InvalidDomain("boundary_eps must be smaller than half the shortest side")
        object.__setattr__(self, "boundary_eps", eps)

    @property
    def d(self) -> int:
        return len(self.e_lo)

    @property
    def m(self) -> int:
        return len(self.d_lo)

    @property
    def lo(self) -> np.ndarray:
        """Truncated lower corner of F."""
        return np.array(self.e_lo + self.d_lo) + self.boundary_eps

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.e_hi + self.d_hi) - self.boundary_eps

    def with_eps(self, eps: float) -> "DomainSpec":
        return DomainSpec(self.e_lo, self.e_hi, self.d_lo, self.d_hi, eps)

    def to_dict(self) -> dict:
        return {
            "e_lo": list(self.e_lo),
            "e_hi": list(self.e_hi),
            "d_lo": list(self.d_lo),
            "d_hi": list(self.d_hi),
            "boundary_eps": self.boundary_eps,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DomainSpec":
        return cls(doc["e_lo"], doc["e_hi"], doc["d_lo"], doc["d_hi"],
                   doc.get("boundary_eps", 1e-3))


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on the truncated box with composite trapezoid weights.

    Arrays living on the full grid have shape ``grid.shape == shape_e + shape_d``
    (E axes first), optionally followed by component axes.
    """

    domain: DomainSpec
    axes: tuple
    axis_weights: tuple

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def e_axes(self) -> tuple:
        return self.axes[: self.d]

    @property
    def d_axes(self) -> tuple:
        return self.axes[self.d:]

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def shape_e(self) -> tuple:
        return self.shape[: self.d]

    @property
    def shape_d(self) -> tuple:
        return self.shape[self.d:]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def spacing_e(self) -> np.ndarray:
        return self.spacing[: self.d]

    @property
    def spacing_d(self) -> np.ndarray:
        return self.spacing[self.d:]

    @cached_property
    def weights(self) -> np.ndarray:
        return _outer(self.axis_weights)

    @cached_property
    def e_weights(self) -> np.ndarray:
        return _outer(self.axis_weights[: self.d])

    @cached_property
    def d_weights(self) -> np.ndarray:
        return _outer(self.axis_weights[self.d:])

    @cached_property
    def e_points(self) -> np.ndarray:
        """Node coordinates of the E-grid, shape ``shape_e + (d,)``."""
        return np.stack(np.meshgrid(*self.e_axes, indexing="ij"), axis=-1)

    @cached_property
    def d_points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.d_axes, indexing="ij"), axis=-1)

    @cached_property
    def x_mesh(self) -> np.ndarray:
        """x-coordinates on the full grid, shape ``shape + (d,)``."""
        return np.broadcast_to(self.e_points.reshape(self.shape_e + (1,) * self.m + (self.d,)),
                               self.shape + (self.d,))

    @cached_property
    def y_mesh(self) -> np.ndarray:
        return np.broadcast_to(self.d_points.reshape((1,) * self.d + self.shape_d + (self.m,)),
                               self.shape + (self.m,))

    @property
    def volume(self) -> float:
        return float(np.prod(self.domain.hi - self.domain.lo))

    @property
    def volume_d(self) -> float:
        """Volume ``|D|`` of the truncated factor box."""
        return float(np.prod((self.domain.hi - self.domain.lo)[self.d:]))

    @property
    def diam_d(self) -> float:
        return float(np.linalg.norm((self.domain.hi - self.domain.lo)[self.d:]))

    def integrate(self, values) -> float | np.ndarray:
        """Quadrature over F; trailing component axes are kept."""
        values = np.asarray(values)
        extra = values.ndim - len(self.shape)
        w = self.weights.reshape(self.shape + (1,) * extra)
        return np.sum(values * w, axis=tuple(range(len(self.shape))))

    def integrate_e(self, values):
        """Quadrature over the E axes of an E-grid field."""
        values = np.asarray(values)
        extra = values.ndim - self.d
        w = self.e_weights.reshape(self.shape_e + (1,) * extra)
        return np.sum(values * w, axis=tuple(range(self.d)))

    def integrate_d(self, values):
        """Quadrature over the D axes of a D-grid field."""
        values = np.asarray(values)
        extra = values.ndim - self.m
        w = self.d_weights.reshape(self.shape_d + (1,) * extra)
        return np.sum(values * w, axis=tuple(range(self.m)))

    def average_over_d(self, values):
        """Integrate a full-grid field over the D axes, keeping E and component axes."""
        values = np.asarray(values)
        extra = values.ndim - len(self.shape)
        w = self.d_weights.reshape((1,) * self.d + self.shape_d + (1,) * extra)
        return np.sum(values * w, axis=tuple(range(self.d, self.d + self.m)))

    def average_over_e(self, values):
        values = np.asarray(values)
        extra = values.ndim - len(self.shape)
        w = self.e_weights.reshape(self.shape_e + (1,) * self.m + (1,) * extra)
        return np.sum(values * w, axis=tuple(range(self.d)))

    def expand_e(self, field_e):
        """Broadcast an E-grid field (with trailing components) over the D axes."""
        field_e = np.asarray(field_e)
        comp = field_e.shape[self.d:]
        return field_e.reshape(self.shape_e + (1,) * self.m + comp)

    def expand_d(self, field_d):
        field_d = np.asarray(field_d)
        comp = field_d.shape[self.m:]
        return field_d.reshape((1,) * self.d + self.shape_d + comp)


def _outer(vectors) -> np.ndarray:
    out = np.ones(())
    for v in vectors:
        out = np.multiply.outer(out, v)
    return out


def build_grid(domain: DomainSpec, n_per_axis) -> Grid:
    """Uniform nodes on ``[lo + eps, hi - eps]`` per axis with trapezoid weights.

    ``n_per_axis`` is either a single int used for every axis or a sequence
    of length ``d + m``.
    """
    k = domain.d + domain.m
    n = np.atleast_1d(np.asarray(n_per_axis))
    if n.size == 1:
        n = np.repeat(n, k)
    if n.size != k:
        raise BadResolution(f"expected {k} axis resolutions, got {n.size}")
    if np.any(n < 3):
        raise BadResolution("every axis needs at least 3 nodes")
    lo, hi = domain.lo, domain.hi
    axes, weights = [], []
    for a, b, ni in zip(lo, hi, n):
        nodes = np.linspace(a, b, int(ni))
        axes.append(nodes)
        weights.append(trapezoid_weights(int(ni), nodes[1] - nodes[0]))
    return Grid(domain, tuple(axes), tuple(weights))


@dataclass(frozen=True)
class ModelDerivatives:
    """Exact derivative evaluators (all optional).

    Index conventions: ``cxp_dx[..., k, i, j] = d_{x_k} (c_X p)^{ij}``,
    ``cxp_dxx[..., k, l, i, j] = d_{x_k} d_{x_l} (c_X p)^{ij}``,
    ``cyp_dy[..., k, i, j] = d_{y_k} (c_Y p)^{ij}``, ``p_dx[..., k] = d_{x_k} p``.
    """

    cxp_dx: Callable | None = None
    cxp_dxx: Callable | None = None
    cyp_dy: Callable | None = None
    p_dx: Callable | None = None

    @property
    def complete(self) -> bool:
        return all(f is not None for f in (self.cxp_dx, self.cxp_dxx, self.cyp_dy, self.p_dx))


@dataclass(frozen=True, eq=False)
class MarketModel:
    domain: DomainSpec
    cx: Callable
    density: Callable
    cy: Callable
    family: str = "custom"
    params: Mapping = field(default_factory=dict)
    derivatives: ModelDerivatives = field(default_factory=ModelDerivatives)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def provenance(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    def with_domain(self, domain: DomainSpec) -> "MarketModel":
        return MarketModel(domain, self.cx, self.density, self.cy, self.family,
                           self.params, self.derivatives)

    def scaled_density(self, s: float) -> "MarketModel":
        """Same model with the density multiplied by ``s`` (breaks unit mass)."""
        d = self.derivatives

        def scale(f):
            return None if f is None else (lambda x, y: s * f(x, y))

        return MarketModel(
            self.domain, self.cx, lambda x, y: s * self.density(x, y), self.cy,
            self.family, {**self.params, "density_scale": s},
            ModelDerivatives(scale(d.cxp_dx), scale(d.cxp_dxx), scale(d.cyp_dy), scale(d.p_dx)),
        )


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed, "value": c.value,
                            "detail": c.detail} for c in self.checks]}


def _evaluate(model: MarketModel, grid: Grid):
    x, y = grid.x_mesh, grid.y_mesh
    cx = np.broadcast_to(model.cx(x, y), grid.shape + (model.d, model.d))
    p = np.broadcast_to(model.density(x, y), grid.shape)
    cy = np.broadcast_to(model.cy(x, y), grid.shape + (model.m, model.m))
    for name, arr in (("cx", cx), ("density", p), ("cy", cy)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise EvaluatorFailure(f"{name} is not finite at grid index {tuple(bad)}")
    return np.asarray(cx, dtype=float), np.asarray(p, dtype=float), np.asarray(cy, dtype=float)


def _sym_pd_checks(name, mats, sym_tol=1e-12):
    asym = np.max(np.abs(mats - np.swapaxes(mats, -1, -2))) if mats.size else 0.0
    scale = max(np.max(np.abs(mats)), 1.0)
    sym = CheckResult(f"{name}_symmetric", bool(asym <= sym_tol * scale), float(asym))
    eig = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, -1, -2)))
    lam_min = float(np.min(eig))
    pd = CheckResult(f"{name}_positive_definite", lam_min > 0.0, lam_min)
    return [sym, pd]


def _lipschitz_proxy(arr, grid):
    """Largest first difference quotient over the grid axes."""
    worst = 0.0
    for axis, h in enumerate(grid.spacing):
        diff = np.abs(np.diff(arr, axis=axis)) / h
        worst = max(worst, float(np.max(diff)))
    return worst


def validate_model(model: MarketModel, grid: Grid,
                   density_mass_tol: float = DENSITY_MASS_TOL) -> ValidationReport:
    """Sample the model on the grid and check the structural assumptions."""
    if grid.d != model.d or grid.m != model.m:
        raise ModelError(f"grid dims ({grid.d}, {grid.m}) do not match model ({model.d}, {model.m})")
    cx, p, cy = _evaluate(model, grid)
    checks = []
    checks += _sym_pd_checks("cx", cx)
    checks += _sym_pd_checks("cy", cy)
    p_min = float(np.min(p))
    checks.append(CheckResult("density_positive", p_min > 0.0, p_min))
    mass = float(grid.integrate(p))
    checks.append(CheckResult("density_mass", abs(mass - 1.0) <= density_mass_tol, mass,
                              f"tolerance {density_mass_tol}"))
    for name, arr in (("cx", cx), ("density", p), ("cy", cy)):
        lip = _lipschitz_proxy(arr, grid)
        checks.append(CheckResult(f"{name}_lipschitz_proxy", bool(np.isfinite(lip)), lip))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------- tabulated

def _read_field_csv(path, d, m):
    """Read ``x1..xd,y1..ym,value`` rows into axes plus a value array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader if row])
    if rows.ndim != 2 or rows.shape[1] != d + m + 1:
        raise ModelError(f"{path}: expected {d + m + 1} columns, header {header}")
    axes = [np.unique(rows[:, k]) for k in range(d + m)]
    shape = tuple(a.size for a in axes)
    if int(np.prod(shape)) != rows.shape[0]:
        raise ModelError(f"{path}: rows do not form a full tensor grid")
    values = np.empty(shape)
    idx = tuple(np.searchsorted(a, rows[:, k]) for k, a in enumerate(axes))
    values[idx] = rows[:, -1]
    return axes, values


def tabulated_model(domain: DomainSpec, cx_files, density_file, cy_files,
                    base_dir: str | Path = ".") -> MarketModel:
    """Model from CSV tables, interpolated multilinearly.

    ``cx_files`` is a nested ``d x d`` list of paths (upper triangle is mirrored
    when entries repeat), ``cy_files`` an ``m x m`` list.
    """
    d, m = domain.d, domain.m
    base = Path(base_dir)

    def interp(path):
        axes, values = _read_field_csv(base / path, d, m)
        return RegularGridInterpolator(axes, values, method="linear", bounds_error=False,
                                       fill_value=None)

    def matrix_evaluator(files, k):
        tables = [[interp(files[i][j]) for j in range(k)] for i in range(k)]

        def evaluate(x, y):
            pts = np.concatenate(np.broadcast_arrays(x[..., :d], y[..., :m]), axis=-1)
            out = np.empty(pts.shape[:-1] + (k, k))
            for i in range(k):
                for j in range(k):
                    out[..., i, j] = tables[i][j](pts)
            return out

        return evaluate

    dens = interp(density_file)

    def density(x, y):
        pts = np.concatenate(np.broadcast_arrays(x[..., :d], y[..., :m]), axis=-1)
        return dens(pts)

    return MarketModel(domain, matrix_evaluator(cx_files, d), density,
                       matrix_evaluator(cy_files, m), family="tabulated",
                       params={"cx": cx_files, "density": density_file, "cy": cy_files})


def write_field_csv(path, grid: Grid, values, value_name="value"):
    """Write a full-grid scalar field in the tabulated-model CSV layout."""
    names = [f"x{i + 1}" for i in range(grid.d)] + [f"y{i + 1}" for i in range(grid.m)]
    coords = np.stack(np.meshgrid(*grid.axes, indexing="ij"), axis=-1).reshape(-1, grid.d + grid.m)
    vals = np.asarray(values).reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [value_name])
        for c, v in zip(coords, vals):
            w.writerow([format(float(t), ".17g") for t in c] + [format(float(v), ".17g")])
