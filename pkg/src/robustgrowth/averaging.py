"""Averaged covariances, marginal density, effective covariance and drift fields.

Conventions for derivative arrays: the derivative index comes first among the
trailing axes, so ``dA[..., k, i, j] = d_k A^{ij}`` and
``ddA[..., k, l, i, j] = d_k d_l A^{ij}``.  The divergence of a matrix field is
taken row-wise over the first index, ``(div A)_j = sum_i d_i A^{ij}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DivideByZeroDensity, ModelError, QuadratureOverflow
from .model import Grid, MarketModel

PX_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class ModelSample:
    """Model inputs and their derivatives sampled on the full F-grid."""

    grid: Grid
    cx: np.ndarray
    p: np.ndarray
    cy: np.ndarray
    cxp_dx: np.ndarray
    cxp_dxx: np.ndarray
    cyp_dy: np.ndarray
    derivative_source: str

    @property
    def cxp(self) -> np.ndarray:
        return self.cx * self.p[..., None, None]

    @property
    def cyp(self) -> np.ndarray:
        return self.cy * self.p[..., None, None]


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        bad = tuple(np.argwhere(~np.isfinite(arr))[0])
        raise QuadratureOverflow(f"{name} is not finite at index {bad}; increase boundary_eps")


def _fd_gradient(field, axes, spacing, ncomp_axes):
    """Central differences (one-sided second order at faces) along ``axes``.

    Returns an array with a new derivative axis inserted before the component axes.
    """
    grads = []
    for ax, h in zip(axes, spacing):
        grads.append(np.gradient(field, h, axis=ax, edge_order=2))
    stacked = np.stack(grads, axis=field.ndim - ncomp_axes)
    return stacked


def sample_model(model: MarketModel, grid: Grid) -> ModelSample:
    """Evaluate inputs and derivatives on the grid.

    Builtin families supply exact derivatives; otherwise central differences
    are used.
    """
    if grid.d != model.d or grid.m != model.m:
        raise ModelError("grid dimensions do not match the model")
    x, y = grid.x_mesh, grid.y_mesh
    d, m = model.d, model.m
    cx = np.array(np.broadcast_to(model.cx(x, y), grid.shape + (d, d)), dtype=float)
    p = np.array(np.broadcast_to(model.density(x, y), grid.shape), dtype=float)
    cy = np.array(np.broadcast_to(model.cy(x, y), grid.shape + (m, m)), dtype=float)
    for name, arr in (("c_X", cx), ("p", p), ("c_Y", cy)):
        _check_finite(name, arr)
    der = model.derivatives
    if der.complete:
        cxp_dx = np.array(np.broadcast_to(der.cxp_dx(x, y), grid.shape + (d, d, d)), dtype=float)
        cxp_dxx = np.array(np.broadcast_to(der.cxp_dxx(x, y), grid.shape + (d, d, d, d)),
                           dtype=float)
        cyp_dy = np.array(np.broadcast_to(der.cyp_dy(x, y), grid.shape + (m, m, m)), dtype=float)
        source = "exact"
    else:
        cxp = cx * p[..., None, None]
        xa = tuple(range(d))
        cxp_dx = _fd_gradient(cxp, xa, grid.spacing_e, 2)
        cxp_dxx = _fd_gradient(cxp_dx, xa, grid.spacing_e, 3)
        cyp = cy * p[..., None, None]
        cyp_dy = _fd_gradient(cyp, tuple(range(d, d + m)), grid.spacing_d, 2)
        source = "finite-difference"
    for name, arr in (("d(c_X p)", cxp_dx), ("d2(c_X p)", cxp_dxx), ("d(c_Y p)", cyp_dy)):
        _check_finite(name, arr)
    return ModelSample(grid, cx, p, cy, cxp_dx, cxp_dxx, cyp_dy, source)


@dataclass(frozen=True, eq=False)
class AveragedFields:
    """Averaged quantities on the E-grid (``A``, ``pX``, ``cbar``) and D-grid (``B``)."""

    grid: Grid
    A: np.ndarray
    dA: np.ndarray
    ddA: np.ndarray
    pX: np.ndarray
    cbar: np.ndarray
    B: np.ndarray

    @property
    def divA(self) -> np.ndarray:
        return divergence(self.dA)

    @property
    def d_divA(self) -> np.ndarray:
        """``d_k (div A)_j`` with shape ``(..., k, j)``."""
        return np.einsum("...kiij->...kj", self.ddA)


def divergence(dM: np.ndarray) -> np.ndarray:
    """Row divergence ``sum_i d_i M^{ij}`` from a derivative array ``dM[..., k, i, j]``."""
    return np.einsum("...iij->...j", dM)


def average_covariance(model: MarketModel, grid: Grid, sample: ModelSample | None = None):
    """``A(x) = int_D c_X(x, y) p(x, y) dy`` on the E-grid."""
    sample = sample or sample_model(model, grid)
    A = grid.average_over_d(sample.cxp)
    _check_finite("A", A)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def y_average_covariance(model: MarketModel, grid: Grid, sample: ModelSample | None = None):
    """``B(y) = int_E c_Y(x, y) p(x, y) dx`` on the D-grid."""
    sample = sample or sample_model(model, grid)
    B = grid.average_over_e(sample.cyp)
    _check_finite("B", B)
    return 0.5 * (B + np.swapaxes(B, -1, -2))


def marginal_density(model: MarketModel, grid: Grid, sample: ModelSample | None = None):
    """``p_X(x) = int_D p(x, y) dy`` on the E-grid."""
    sample = sample or sample_model(model, grid)
    pX = grid.average_over_d(sample.p)
    _check_finite("p_X", pX)
    return pX


def effective_covariance(A: np.ndarray, pX: np.ndarray) -> np.ndarray:
    """Effective covariance ``cbar = A / p_X``, the conditional mean of ``c_X`` given ``X = x``."""
    pX = np.asarray(pX)
    if np.any(pX <= PX_FLOOR):
        raise DivideByZeroDensity("marginal density underflows; increase boundary_eps")
    return np.asarray(A) / pX[..., None, None]


def averaged_fields(model: MarketModel, grid: Grid,
                    sample: ModelSample | None = None) -> AveragedFields:
    sample = sample or sample_model(model, grid)
    A = average_covariance(model, grid, sample)
    dA = grid.average_over_d(sample.cxp_dx)
    ddA = grid.average_over_d(sample.cxp_dxx)
    _check_finite("dA", dA)
    _check_finite("ddA", ddA)
    pX = marginal_density(model, grid, sample)
    cbar = effective_covariance(A, pX)
    B = y_average_covariance(model, grid, sample)
    return AveragedFields(grid, A, dA, ddA, pX, cbar, B)


@dataclass(frozen=True, eq=False)
class DriftFields:
    """Drift fields ``ell_X`` (shape ``grid.shape + (d,)``) and ``ell_Y`` (``+ (m,)``)."""

    grid: Grid
    ellX: np.ndarray
    ellY: np.ndarray

    @property
    def ell(self) -> np.ndarray:
        return np.concatenate([self.ellX, self.ellY], axis=-1)


def drift_fields(model: MarketModel, grid: Grid, sample: ModelSample | None = None) -> DriftFields:
    """``ell = 1/2 c^{-1} div c + 1/2 grad log p``, computed as ``1/2 c^{-1} div(c p) / p``."""
    sample = sample or sample_model(model, grid)
    p = sample.p
    div_x = np.einsum("...jij->...i", sample.cxp_dx)
    div_y = np.einsum("...jij->...i", sample.cyp_dy)
    ellX = 0.5 * np.linalg.solve(sample.cx, div_x[..., None])[..., 0] / p[..., None]
    ellY = 0.5 * np.linalg.solve(sample.cy, div_y[..., None])[..., 0] / p[..., None]
    _check_finite("ell_X", ellX)
    _check_finite("ell_Y", ellY)
    return DriftFields(grid, ellX, ellY)
