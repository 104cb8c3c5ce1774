"""End-to-end construction: model, grid, averaged fields, optimal potential, worst case."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .averaging import AveragedFields, DriftFields, ModelSample, averaged_fields, drift_fields, sample_model
from .exceptions import BoundViolated, ModelError
from .growth import PhiSolution, solve_phi
from .model import Grid, MarketModel, build_grid, validate_model

DEFAULT_GRID = 201
K_FRACTION = (0.2, 0.8)
V_FRACTION = (0.1, 0.9)


def grid_sizes(model: MarketModel, n) -> list:
    """Expand a node count (or one per axis) to the ``d + m`` axes of ``model``."""
    k = model.d + model.m
    if n is None:
        n = DEFAULT_GRID
    if np.isscalar(n):
        return [int(n)] * k
    n = [int(v) for v in n]
    if len(n) == 1:
        return n * k
    if len(n) != k:
        raise ModelError(f"expected 1 or {k} grid sizes, got {len(n)}")
    return n


def default_boxes(grid: Grid, k_fraction=K_FRACTION, v_fraction=V_FRACTION):
    """Boxes ``K`` and ``V`` at the given fractions of every E axis (middle 60% and 80% by default)."""
    lo, hi = grid.domain.lo[: grid.d], grid.domain.hi[: grid.d]
    K = [(float(a + k_fraction[0] * (b - a)), float(a + k_fraction[1] * (b - a)))
         for a, b in zip(lo, hi)]
    V = [(float(a + v_fraction[0] * (b - a)), float(a + v_fraction[1] * (b - a)))
         for a, b in zip(lo, hi)]
    return K, V


@dataclass(frozen=True, eq=False)
class Solved:
    model: MarketModel
    grid: Grid
    sample: ModelSample
    avg: AveragedFields
    drift: DriftFields
    phi: PhiSolution
    validation: object


def solve_model(model: MarketModel, n=None, method: str = "auto", validate: bool = True) -> Solved:
    """Sample ``model`` on a grid and solve for the optimal generating function.

    Raises :class:`~robustgrowth.exceptions.ModelError` when ``validate`` is set
    and a validation check fails.
    """
    grid = build_grid(model.domain, grid_sizes(model, n))
    report = validate_model(model, grid)
    if validate and not report.passed:
        raise ModelError("model validation failed: " + ", ".join(report.failed()))
    sample = sample_model(model, grid)
    avg = averaged_fields(model, grid, sample)
    drift = drift_fields(model, grid, sample)
    phi = solve_phi(avg, method=method)
    return Solved(model, grid, sample, avg, drift, phi, report)


def worst_case(solved: Solved, K_box=None, V_box=None, mean_policy: str = "project",
               quiet: bool = True):
    """K-modification and auxiliary potential; returns ``(kmod, vsol)``."""
    from .worstcase import build_k_modification, solve_v
    K0, V0 = default_boxes(solved.grid)
    kmod = build_k_modification(solved.sample, solved.avg, K_box or K0, V_box or V0)
    with warnings.catch_warnings():
        if quiet:
            warnings.simplefilter("ignore", BoundViolated)
        vsol = solve_v(kmod, solved.phi, solved.sample, solved.drift, mean_policy=mean_policy)
    return kmod, vsol
