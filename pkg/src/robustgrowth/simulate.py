"""Euler-Maruyama simulation of the reference and worst-case diffusions.

All fields (drift, diffusion root, X-covariance, strategies, observables)
are tabulated on the F-grid and interpolated multilinearly inside a
compiled kernel.  Paths are independent; each draws from its own PCG64
stream spawned from the master seed through ``numpy.random.SeedSequence``,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.integrate import cumulative_trapezoid

from .averaging import DriftFields, ModelSample, sample_model
from .exceptions import InsufficientPaths, OutOfDomain, StepRejectionOverflow
from .growth import PhiSolution
from .model import Grid, MarketModel
from .worstcase import KModification, VSolution

POLICIES = {"reflect": 0, "reject": 1, "reject-and-halve": 1}
MAX_REJECT_RATIO = 0.5
MIN_PATHS = 16
MIN_STEPS = 100
GROWTH_REL_TOL = 0.05


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Parameters
    ----------
    T, dt : float
        Horizon and step.
    n_paths : int
    seed : int
    boundary_policy : {"reflect", "reject"}
        ``reflect`` mirrors a step that leaves the truncated box across the
        face; ``reject`` discards it and retries with half the step.
    x0, y0 : sequence, optional
        Initial state (default: centre of the truncated box).
    n_record : int
        Number of thinned path samples to keep (0 keeps none).
    n_bins : int
        Bins per coordinate of the occupation histograms.
    """

    T: float = 100.0
    dt: float = 1e-3
    n_paths: int = 16
    seed: int = 0
    boundary_policy: str = "reflect"
    x0: tuple | None = None
    y0: tuple | None = None
    n_record: int = 0
    n_bins: int = 50

    def __post_init__(self):
        if not self.dt > 0 or not np.isfinite(self.dt):
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.boundary_policy not in POLICIES:
            raise ValueError(f"boundary_policy must be one of {sorted(POLICIES)}")
        if self.n_bins < 1 or self.n_record < 0:
            raise ValueError("n_bins must be positive and n_record nonnegative")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    def to_dict(self) -> dict:
        return {"T": self.T, "dt": self.dt, "n_paths": self.n_paths, "seed": self.seed,
                "boundary_policy": self.boundary_policy,
                "x0": None if self.x0 is None else list(self.x0),
                "y0": None if self.y0 is None else list(self.y0),
                "n_record": self.n_record, "n_bins": self.n_bins}


def n_threads() -> int:
    """Worker threads for path batches, capped by ``ROBUSTGROWTH_THREADS``."""
    cap = os.environ.get("ROBUSTGROWTH_THREADS")
    avail = os.cpu_count() or 1
    return max(1, min(int(cap), avail)) if cap else avail


# ---------------------------------------------------------------- kernel

@njit(cache=True)
def _interp(fields, lo, inv_h, shape, strides, z, n, out, frac, base_idx):
    nc = fields.shape[1]
    for c in range(nc):
        out[c] = 0.0
    base = 0
    for k in range(n):
        t = (z[k] - lo[k]) * inv_h[k]
        i = int(np.floor(t))
        if i < 0:
            i = 0
        elif i > shape[k] - 2:
            i = shape[k] - 2
        f = t - i
        if f < 0.0:
            f = 0.0
        elif f > 1.0:
            f = 1.0
        frac[k] = f
        base += i * strides[k]
    base_idx[0] = base
    for corner in range(1 << n):
        w = 1.0
        idx = base
        for k in range(n):
            if (corner >> k) & 1:
                w *= frac[k]
                idx += strides[k]
            else:
                w *= 1.0 - frac[k]
        if w != 0.0:
            for c in range(nc):
                out[c] += w * fields[idx, c]


@njit(cache=True, nogil=True)
def _run_path(rng, fields, lo, hi, inv_h, shape, strides, n, d, n_strat, n_obs, z0, n_steps, dt,
              policy, n_bins, rec_every, n_rec):
    off_R = n
    off_C = n + n * n
    off_S = off_C + d * d
    off_H = off_S + n_strat * d
    hist = np.zeros((n, n_bins), dtype=np.int64)
    rec_z = np.zeros((n_rec, n))
    rec_lv = np.zeros((n_rec, n_strat))
    rec_qv = np.zeros((n_rec, n_strat))
    h_min = dt * 2.0 ** -30
    z = z0.copy()
    zn = np.empty(n)
    xi = np.empty(n)
    buf = np.empty(fields.shape[1])
    frac = np.empty(n)
    base_idx = np.empty(1, dtype=np.int64)
    lv = np.zeros(n_strat)
    q = np.zeros(n_strat)
    acc = np.zeros(n_obs)
    counts = np.zeros(2, dtype=np.int64)
    r = 0
    for step in range(n_steps):
        remaining = dt
        h = dt
        halved = False
        while remaining > 0.0:
            if h > remaining:
                h = remaining
            _interp(fields, lo, inv_h, shape, strides, z, n, buf, frac, base_idx)
            for k in range(n):
                xi[k] = rng.standard_normal()
            sq = np.sqrt(h)
            out = False
            for k in range(n):
                s = 0.0
                for j in range(n):
                    s += buf[off_R + k * n + j] * xi[j]
                zn[k] = z[k] + buf[k] * h + s * sq
                if zn[k] < lo[k] or zn[k] > hi[k]:
                    out = True
            if out:
                if policy == 1 and h > h_min:
                    halved = True
                    h *= 0.5
                    continue
                for k in range(n):
                    if zn[k] < lo[k]:
                        zn[k] = 2.0 * lo[k] - zn[k]
                    elif zn[k] > hi[k]:
                        zn[k] = 2.0 * hi[k] - zn[k]
                    if zn[k] < lo[k]:
                        zn[k] = lo[k]
                    elif zn[k] > hi[k]:
                        zn[k] = hi[k]
            for s_ in range(n_strat):
                o = off_S + s_ * d
                gain = 0.0
                quad = 0.0
                for i in range(d):
                    th = buf[o + i]
                    gain += th * (zn[i] - z[i])
                    ci = 0.0
                    for j in range(d):
                        ci += buf[off_C + i * d + j] * buf[o + j]
                    quad += th * ci
                lv[s_] += gain - 0.5 * quad * h
                q[s_] += quad * h
            for k in range(n_obs):
                acc[k] += buf[off_H + k] * h
            for k in range(n):
                z[k] = zn[k]
            remaining -= h
            # let a halved substep grow back so the rest of the step does not crawl
            h = min(2.0 * h, dt)
        counts[1] += 1
        if halved:
            counts[0] += 1
        for k in range(n):
            b = int((z[k] - lo[k]) / (hi[k] - lo[k]) * n_bins)
            if b < 0:
                b = 0
            elif b >= n_bins:
                b = n_bins - 1
            hist[k, b] += 1
        if rec_every > 0 and (step + 1) % rec_every == 0 and r < n_rec:
            for k in range(n):
                rec_z[r, k] = z[k]
            for s_ in range(n_strat):
                rec_lv[r, s_] = lv[s_]
                rec_qv[r, s_] = q[s_]
            r += 1
    return lv, q, acc, hist, z, counts, rec_z, rec_lv, rec_qv


# ---------------------------------------------------------------- fields

def matrix_sqrt(c: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root (eigendecomposition) for size <= 4, Cholesky factor otherwise."""
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    if c.shape[-1] <= 4:
        lam, vec = np.linalg.eigh(c)
        lam = np.clip(lam, 0.0, None)
        return np.einsum("...ik,...k,...jk->...ij", vec, np.sqrt(lam), vec)
    return np.linalg.cholesky(c)


def _block_diag(cx, cy):
    d, m = cx.shape[-1], cy.shape[-1]
    out = np.zeros(cx.shape[:-2] + (d + m, d + m))
    out[..., :d, :d] = cx
    out[..., d:, d:] = cy
    return out


def _as_f_field(grid: Grid, arr, comp: tuple):
    arr = np.asarray(arr, dtype=float)
    if arr.shape[: grid.d + grid.m] == grid.shape:
        return np.broadcast_to(arr, grid.shape + comp)
    return np.broadcast_to(grid.expand_e(arr), grid.shape + comp)


@dataclass(frozen=True, eq=False)
class SimFields:
    """Tabulated dynamics on the F-grid.

    ``drift`` is ``(..., n)``, ``cov`` the full ``(..., n, n)`` covariance and
    ``cx`` its X-block, used by the wealth recursion.
    """

    grid: Grid
    drift: np.ndarray
    cov: np.ndarray
    kind: str

    @property
    def cx(self) -> np.ndarray:
        d = self.grid.d
        return self.cov[..., :d, :d]


def reference_fields(sample: ModelSample, drift: DriftFields) -> SimFields:
    """``dZ = c l dt + c^{1/2} dW`` with ``c = diag(c_X, c_Y)``."""
    c = _block_diag(sample.cx, sample.cy)
    b = np.einsum("...ij,...j->...i", c, drift.ell)
    return SimFields(sample.grid, b, c, "reference")


def worst_case_fields(kmod: KModification, phi: PhiSolution, vsol: VSolution) -> SimFields:
    """``dX = c~_X grad phi dt + c~_X^{1/2} dW^X``, ``dY = c_Y grad_y v dt + c_Y^{1/2} dW^Y``."""
    grid = kmod.grid
    gphi = np.broadcast_to(grid.expand_e(phi.grad), grid.shape + (grid.d,))
    bx = np.einsum("...ij,...j->...i", kmod.ctilde, gphi)
    by = vsol.y_drift(kmod.p)
    cy = vsol.a / kmod.p[..., None, None]
    c = _block_diag(kmod.ctilde, cy)
    return SimFields(grid, np.concatenate([bx, by], -1), c, f"worst-case ({kmod.kind})")


# ---------------------------------------------------------------- result

@dataclass(frozen=True, eq=False)
class SimResult:
    """Output of a batch of simulated paths.

    ``logv`` and ``qv`` have shape ``(paths, strategies)``; ``integrals`` are
    time integrals of the registered observables ``(paths, observables)``;
    ``hist`` holds per-path occupation counts ``(paths, coordinates, bins)``.
    """

    config: SimConfig
    kind: str
    grid: Grid
    strategy_names: tuple
    observable_names: tuple
    logv: np.ndarray
    qv: np.ndarray
    integrals: np.ndarray
    hist: np.ndarray
    final: np.ndarray
    initial: np.ndarray
    rejected: np.ndarray
    attempts: np.ndarray
    recorded: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return self.config.n_steps * self.config.dt

    @property
    def n_paths(self) -> int:
        return self.logv.shape[0]

    @property
    def rejection_ratio(self) -> float:
        return float(self.rejected.sum() / max(self.attempts.sum(), 1))

    def strategy_index(self, name: str) -> int:
        return self.strategy_names.index(name)

    def growth_samples(self, name: str) -> np.ndarray:
        return self.logv[:, self.strategy_index(name)] / self.horizon

    def growth(self, name: str, paths=None) -> tuple:
        """``(g_hat, standard error)`` of ``log V_T / T`` over paths."""
        g = self.growth_samples(name)
        if paths is not None:
            g = g[paths]
        se = float(np.std(g, ddof=1) / np.sqrt(g.size)) if g.size > 1 else float("inf")
        return float(np.mean(g)), se

    def qv_rate(self, name: str) -> float:
        return float(np.mean(self.qv[:, self.strategy_index(name)]) / self.horizon)

    def time_averages(self) -> dict:
        """Pooled ergodic averages with standard errors across paths."""
        out = {}
        for k, name in enumerate(self.observable_names):
            v = self.integrals[:, k] / self.horizon
            se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")
            out[name] = (float(np.mean(v)), se)
        return out

    def occupation(self, coord: int = 0, paths=None) -> np.ndarray:
        """Normalised pooled occupation histogram of one coordinate (sums to 1)."""
        h = self.hist[:, coord, :] if paths is None else self.hist[paths, coord, :]
        counts = h.sum(axis=0).astype(float)
        return counts / counts.sum()

    def bin_edges(self, coord: int = 0) -> np.ndarray:
        lo, hi = self.grid.domain.lo, self.grid.domain.hi
        return np.linspace(lo[coord], hi[coord], self.config.n_bins + 1)


# ---------------------------------------------------------------- driver

def _initial_state(grid: Grid, config: SimConfig) -> np.ndarray:
    lo, hi = grid.domain.lo, grid.domain.hi
    centre = 0.5 * (lo + hi)
    z0 = centre.copy()
    if config.x0 is not None:
        z0[: grid.d] = np.asarray(config.x0, dtype=float)
    if config.y0 is not None:
        z0[grid.d:] = np.asarray(config.y0, dtype=float)
    if np.any(z0 <= lo) or np.any(z0 >= hi):
        raise OutOfDomain(f"initial state {z0.tolist()} is not inside the truncated box")
    return z0


def simulate_fields(fields: SimFields, config: SimConfig, strategies=None,
                    observables=None) -> SimResult:
    """Run the compiled Euler-Maruyama kernel on tabulated dynamics.

    Parameters
    ----------
    fields : SimFields
    config : SimConfig
    strategies : dict, optional
        Name to strategy field on the E-grid ``(..., d)`` or F-grid.
    observables : dict, optional
        Name to scalar field on the E-grid or F-grid; time averages are recorded.
    """
    grid = fields.grid
    d, m = grid.d, grid.m
    n = d + m
    if config.T < MIN_STEPS * config.dt:
        warnings.warn(f"horizon T = {config.T} is shorter than {MIN_STEPS} steps; "
                      "estimates will be noisy", UserWarning, stacklevel=2)
    strategies = dict(strategies or {})
    observables = dict(observables or {})
    z0 = _initial_state(grid, config)
    root = matrix_sqrt(fields.cov)
    cols = [fields.drift.reshape(-1, n), root.reshape(-1, n * n),
            np.ascontiguousarray(fields.cx).reshape(-1, d * d)]
    for th in strategies.values():
        cols.append(np.array(_as_f_field(grid, th, (d,))).reshape(-1, d))
    for h in observables.values():
        cols.append(np.array(_as_f_field(grid, h, ())).reshape(-1, 1))
    table = np.ascontiguousarray(np.concatenate(cols, axis=1))
    if not np.all(np.isfinite(table)):
        raise ValueError("simulation fields contain non-finite values")
    lo = np.ascontiguousarray(grid.domain.lo, dtype=float)
    hi = np.ascontiguousarray(grid.domain.hi, dtype=float)
    shape = np.array(grid.shape, dtype=np.int64)
    strides = np.array([int(np.prod(grid.shape[k + 1:])) for k in range(n)], dtype=np.int64)
    inv_h = 1.0 / np.concatenate([grid.spacing_e, grid.spacing_d])
    n_steps = config.n_steps
    n_rec = min(config.n_record, n_steps)
    rec_every = n_steps // n_rec if n_rec > 0 else 0
    n_rec = n_steps // rec_every if n_rec > 0 else 0
    args = (table, lo, hi, inv_h, shape, strides, n, d, len(strategies), len(observables), z0,
            n_steps, float(config.dt), POLICIES[config.boundary_policy], int(config.n_bins),
            rec_every, n_rec)
    rngs = [np.random.Generator(np.random.PCG64(c))
            for c in np.random.SeedSequence(config.seed).spawn(config.n_paths)]
    with ThreadPoolExecutor(max_workers=n_threads()) as pool:
        outs = list(pool.map(lambda g: _run_path(g, *args), rngs))
    logv, qv, integ, hist, final, counts, rec_z, rec_lv, rec_qv = (
        np.stack([o[k] for o in outs]) for k in range(9))
    rej, att = counts[:, 0], counts[:, 1]
    recorded = {}
    if n_rec:
        recorded = {"t": config.dt * rec_every * np.arange(1, n_rec + 1), "z": rec_z,
                    "logv": rec_lv, "qv": rec_qv}
    res = SimResult(config, fields.kind, grid, tuple(strategies), tuple(observables), logv, qv,
                    integ, hist, final, z0, rej, att, recorded)
    if config.boundary_policy != "reflect" and res.rejection_ratio > MAX_REJECT_RATIO:
        raise StepRejectionOverflow(
            f"{100 * res.rejection_ratio:.1f}% of steps left the box and had to be halved; "
            "reduce dt")
    return res


def default_observables(grid: Grid) -> dict:
    """The constant one and every coordinate of ``Z``."""
    obs = {"1": np.ones(grid.shape)}
    for k in range(grid.d):
        obs[f"x{k + 1}"] = np.broadcast_to(grid.x_mesh[..., k], grid.shape)
    for k in range(grid.m):
        obs[f"y{k + 1}"] = np.broadcast_to(grid.y_mesh[..., k], grid.shape)
    return obs


def simulate_reference(model: MarketModel, drift: DriftFields, config: SimConfig, strategies=None,
                       observables=None, sample: ModelSample | None = None) -> SimResult:
    """Simulate the reversible reference diffusion ``dZ = c l dt + c^{1/2} dW``."""
    grid = drift.grid
    sample = sample or sample_model(model, grid)
    obs = default_observables(grid) if observables is None else observables
    return simulate_fields(reference_fields(sample, drift), config, strategies, obs)


def master_integrand(cov_x: np.ndarray, phi: PhiSolution) -> np.ndarray:
    """``Tr(c (hess phi + grad phi grad phi'))`` on the F-grid."""
    grid = phi.grid
    g = grid.expand_e(phi.grad)
    H = grid.expand_e(phi.hess) + g[..., :, None] * g[..., None, :]
    return np.einsum("...ij,...ji->...", cov_x, H)


MASTER = "__master__"


def simulate_worst_case(model: MarketModel, kmod: KModification, phi: PhiSolution,
                        vsol: VSolution, config: SimConfig, strategies=None,
                        observables=None) -> SimResult:
    """Simulate the worst-case diffusion built from ``kmod``, ``phi`` and ``vsol``.

    The optimal strategy is always recorded under the name ``theta_hat``; the
    functional-generation form of its log wealth is computed alongside and the
    per-path difference is stored in ``extras["mismatch"]``.
    """
    fields = worst_case_fields(kmod, phi, vsol)
    grid = fields.grid
    strat = {"theta_hat": phi.grad}
    strat.update(strategies or {})
    obs = dict(default_observables(grid) if observables is None else observables)
    obs[MASTER] = master_integrand(fields.cx, phi)
    res = simulate_fields(fields, config, strat, obs)
    mis = res.logv[:, 0] - master_formula_logv(res, phi)
    return SimResult(**{**res.__dict__, "extras": {**res.extras, "mismatch": mis}})


def master_formula_logv(res: SimResult, phi: PhiSolution) -> np.ndarray:
    """``phi(X_T) - phi(X_0) - 1/2 int Tr(c (hess phi + grad phi grad phi'))`` per path."""
    from .growth import interpolate_e
    d = res.grid.d
    k = res.observable_names.index(MASTER)
    end = interpolate_e(res.grid, phi.phi, res.final[:, :d])
    start = interpolate_e(res.grid, phi.phi, res.initial[None, :d])
    return end - start - 0.5 * res.integrals[:, k]


# ---------------------------------------------------------------- wealth

@dataclass(frozen=True)
class WealthPath:
    logv: np.ndarray
    qv: np.ndarray


def wealth_path(path, dt: float, strategy, cov) -> WealthPath:
    """Discrete log wealth ``log V_{t+dt} = log V_t + theta' dX - theta' c theta dt / 2``.

    Parameters
    ----------
    path : array ``(steps + 1, d + m)`` or ``(steps + 1, d)``
    dt : float
    strategy : callable ``(x, y) -> theta`` returning ``(steps, d)``
    cov : callable ``(x, y) -> c`` returning ``(steps, d, d)``, or a constant matrix
    """
    path = np.asarray(path, dtype=float)
    d = np.asarray(cov(path[:1, :], path[:1, :]) if callable(cov) else cov).shape[-1]
    x, y = path[:-1, :d], path[:-1, d:]
    theta = np.asarray(strategy(x, y), dtype=float).reshape(-1, d)
    c = np.asarray(cov(x, y), dtype=float) if callable(cov) else np.broadcast_to(cov, (len(x), d, d))
    dx = np.diff(path[:, :d], axis=0)
    quad = np.einsum("ti,tij,tj->t", theta, c, theta) * dt
    steps = np.einsum("ti,ti->t", theta, dx) - 0.5 * quad
    return WealthPath(np.concatenate([[0.0], np.cumsum(steps)]),
                      np.concatenate([[0.0], np.cumsum(quad)]))


def grid_interpolator(grid: Grid, values):
    """Callable ``(x, y) -> values`` by multilinear interpolation of an F-grid or E-grid field."""
    from scipy.interpolate import RegularGridInterpolator
    values = np.asarray(values, dtype=float)
    if values.shape[: grid.d + grid.m] == grid.shape:
        interp = RegularGridInterpolator(grid.axes, values, bounds_error=False, fill_value=None)
        return lambda x, y: interp(np.concatenate([np.atleast_2d(x), np.atleast_2d(y)], -1))
    interp = RegularGridInterpolator(grid.e_axes, values, bounds_error=False, fill_value=None)
    return lambda x, y: interp(np.atleast_2d(x))


# ---------------------------------------------------------------- analysis

def marginal_on_axis(grid: Grid, density: np.ndarray, coord: int) -> tuple:
    """Nodes and marginal density of coordinate ``coord`` of ``Z``."""
    dens = np.asarray(density, dtype=float)
    for k in reversed(range(grid.d + grid.m)):
        if k != coord:
            dens = np.tensordot(dens, grid.axis_weights[k], axes=([k], [0]))
    return grid.axes[coord], dens


def reference_bin_mass(nodes, density, edges, refine: int = 8) -> np.ndarray:
    """Bin probabilities of a density given at nodes (linear interpolation, trapezoid rule)."""
    fine = np.linspace(nodes[0], nodes[-1], (len(nodes) - 1) * refine + 1)
    f = np.interp(fine, nodes, density)
    cum = cumulative_trapezoid(f, fine, initial=0.0)
    mass = np.diff(np.interp(edges, fine, cum))
    return mass / mass.sum()


def tv_distance(p, q) -> float:
    """Total-variation distance ``sum |p - q| / 2`` of two probability vectors."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def occupation_tv(res: SimResult, p: np.ndarray, coord: int = 0, paths=None) -> float:
    """TV distance between the pooled occupation of ``coord`` and the quadrature marginal of ``p``."""
    nodes, dens = marginal_on_axis(res.grid, p, coord)
    return tv_distance(res.occupation(coord, paths), reference_bin_mass(nodes, dens,
                                                                          res.bin_edges(coord)))


def ergodic_table(res: SimResult, p: np.ndarray, observables: dict | None = None) -> list:
    """Time averages against quadrature ``int h p / int p`` for the registered observables."""
    grid = res.grid
    obs = observables if observables is not None else default_observables(grid)
    mass = float(grid.integrate(p))
    avgs = res.time_averages()
    rows = []
    for name, h in obs.items():
        if name not in avgs:
            continue
        target = float(grid.integrate(_as_f_field(grid, h, ()) * p)) / mass
        mean, se = avgs[name]
        rows.append({"observable": name, "time_average": mean, "se": se, "quadrature": target,
                     "within_3se": abs(mean - target) <= max(3 * se, 1e-9 * max(1.0, abs(target)))})
    return rows


@dataclass(frozen=True)
class GrowthRow:
    strategy: str
    g_hat: float
    se: float
    reference: float | None
    within: bool | None

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "g_hat": self.g_hat, "se": self.se,
                "lambda": self.reference, "within_tolerance": self.within}


def estimate_growth(results, strategy_set=None, lam: float | None = None,
                    rel_tol: float = GROWTH_REL_TOL) -> list:
    """Table of ``g_hat +- SE`` per strategy and result.

    A row is flagged within tolerance when ``|g_hat - lam| <= max(3 SE, rel_tol |lam|)``.
    """
    if isinstance(results, SimResult):
        results = [results]
    rows = []
    for res in results:
        if res.n_paths < MIN_PATHS:
            raise InsufficientPaths(f"growth estimates need at least {MIN_PATHS} paths, "
                                    f"got {res.n_paths}")
        for name in strategy_set or res.strategy_names:
            g, se = res.growth(name)
            within = None
            if lam is not None:
                within = bool(abs(g - lam) <= max(3 * se, rel_tol * abs(lam)))
            rows.append(GrowthRow(f"{name} [{res.kind}]", g, se, lam, within))
    return rows


def expected_growth(fields: SimFields, p: np.ndarray, theta) -> float:
    """Quadrature growth ``int (theta' b_X - theta' c_X theta / 2) p`` under tabulated dynamics."""
    grid = fields.grid
    th = _as_f_field(grid, theta, (grid.d,))
    bx = fields.drift[..., : grid.d]
    val = np.einsum("...i,...i->...", th, bx) - 0.5 * np.einsum("...i,...ij,...j->...", th,
                                                                 fields.cx, th)
    return float(grid.integrate(val * p))


def competitor_strategies(grid: Grid, phi: PhiSolution, bump=None, amplitude: float = 0.5) -> dict:
    """Two perturbations of the optimal strategy.

    ``x-bump`` adds a compactly supported bump in ``x`` to every component,
    ``y-sine`` adds ``amplitude * sin(2 pi (y_1 - lo) / L)``.
    """
    from ._testfunctions import Bump
    lo_e, hi_e = grid.domain.lo[: grid.d], grid.domain.hi[: grid.d]
    if bump is None:
        bump = Bump(tuple(0.5 * (lo_e + hi_e)), tuple(0.2 * (hi_e - lo_e)), 1.0)
    val, _, _ = bump.evaluate(grid.e_points)
    th = phi.grad
    xb = th + val[..., None]
    y1 = grid.y_mesh[..., 0]
    lo_d, hi_d = grid.domain.lo[grid.d], grid.domain.hi[grid.d]
    wave = amplitude * np.sin(2 * np.pi * (y1 - lo_d) / (hi_d - lo_d))
    ys = grid.expand_e(th) + wave[..., None]
    return {"x-bump": xb, "y-sine": np.broadcast_to(ys, grid.shape + (grid.d,))}
