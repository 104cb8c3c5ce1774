"""Smooth compactly supported test functions with exact derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _bump1d(t):
    """``exp(1 - 1/(1 - t^2))`` on ``|t| < 1`` with first and second derivatives."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    ts = np.where(inside, t, 0.0)
    s = 1.0 - ts * ts
    val = np.where(inside, np.exp(1.0 - 1.0 / s), 0.0)
    # d/dt [-1/s] = -2t/s^2
    g = -2.0 * ts / (s * s)
    dg = (-2.0 * s * s - (-2.0 * ts) * 2.0 * s * (-2.0 * ts)) / s ** 4
    d1 = np.where(inside, val * g, 0.0)
    d2 = np.where(inside, val * (g * g + dg), 0.0)
    return val, d1, d2


POLY_POWER = 6


def _poly1d(t):
    """``(1 - t^2)^6`` on ``|t| < 1`` with first and second derivatives.

    Only ``C^5`` at the edge of its support, but its derivatives stay moderate,
    so trapezoid sums of its Hessian converge fast on coarse grids.
    """
    t = np.asarray(t, dtype=float)
    k = POLY_POWER
    s = np.clip(1.0 - t * t, 0.0, None)
    val = s ** k
    d1 = -2.0 * k * t * s ** (k - 1)
    d2 = -2.0 * k * s ** (k - 1) + 4.0 * k * (k - 1) * t * t * s ** (k - 2)
    return val, d1, d2


PROFILES = {"smooth": _bump1d, "poly": _poly1d}


@dataclass(frozen=True)
class Bump:
    """Tensor-product bump ``amplitude * prod_k b((x_k - c_k) / r_k)``."""

    center: tuple
    radius: tuple
    amplitude: float = 1.0
    profile: str = "smooth"

    def evaluate(self, x):
        """Value ``(...)``, gradient ``(..., k)`` and Hessian ``(..., k, k)`` at points ``(..., k)``."""
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center, dtype=float)
        r = np.asarray(self.radius, dtype=float)
        k = c.size
        vals, d1s, d2s = [], [], []
        prof = PROFILES[self.profile]
        for i in range(k):
            v, d1, d2 = prof((x[..., i] - c[i]) / r[i])
            vals.append(v)
            d1s.append(d1 / r[i])
            d2s.append(d2 / r[i] ** 2)
        val = self.amplitude * np.prod(vals, axis=0)
        grad = np.empty(x.shape[:-1] + (k,))
        hess = np.empty(x.shape[:-1] + (k, k))
        for i in range(k):
            others = [vals[j] for j in range(k) if j != i]
            rest = np.prod(others, axis=0) if others else 1.0
            grad[..., i] = self.amplitude * d1s[i] * rest
            for j in range(k):
                if i == j:
                    hess[..., i, i] = self.amplitude * d2s[i] * rest
                else:
                    others = [vals[l] for l in range(k) if l not in (i, j)]
                    rest2 = np.prod(others, axis=0) if others else 1.0
                    hess[..., i, j] = self.amplitude * d1s[i] * d1s[j] * rest2
        return val, grad, hess


@dataclass(frozen=True)
class BumpSum:
    bumps: tuple

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        k = x.shape[-1]
        val = np.zeros(x.shape[:-1])
        grad = np.zeros(x.shape[:-1] + (k,))
        hess = np.zeros(x.shape[:-1] + (k, k))
        for b in self.bumps:
            v, g, h = b.evaluate(x)
            val += v
            grad += g
            hess += h
        return val, grad, hess


def bump_library(lo, hi, count: int = 10, margin: float = 0.05, seed: int = 0,
                 radius_range=(0.08, 0.2), profile: str = "smooth") -> list:
    """Deterministic library of bumps supported strictly inside ``[lo, hi]``.

    Centres and radii are drawn from a seeded generator so that every support
    stays at least ``margin`` (relative) away from the faces.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        radius = rng.uniform(radius_range[0], radius_range[1], size=lo.size) * width
        low = lo + margin * width + radius
        high = hi - margin * width - radius
        center = rng.uniform(low, high)
        amp = float(rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0]))
        out.append(Bump(tuple(center), tuple(radius), amp, profile))
    return out


def random_bump_sum(lo, hi, n_bumps: int = 3, seed: int = 0,
                    radius_range=(0.08, 0.2), profile: str = "smooth") -> BumpSum:
    return BumpSum(tuple(bump_library(lo, hi, n_bumps, seed=seed, radius_range=radius_range,
                                      profile=profile)))
