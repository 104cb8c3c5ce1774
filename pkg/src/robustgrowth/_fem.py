"""Tensor-product Q1 finite elements on uniform boxes.

Used for divergence-form problems ``div(a grad u) = rhs`` with natural
(zero-flux) boundary conditions.  Coefficients are given at the nodes and
interpolated to the ``2^dim`` Gauss points of each cell, which keeps the
stiffness matrix symmetric positive semidefinite with the constants as its
kernel.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import cg

from .exceptions import NoConvergence, SingularSystem


@lru_cache(maxsize=8)
def reference_element(dim: int):
    """Gauss points, weights, shape values and reference gradients on ``[0, 1]^dim``."""
    g1 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    corners = np.array(list(itertools.product((0, 1), repeat=dim)), dtype=int)
    gpts = np.array(list(itertools.product(g1, repeat=dim)))
    gw = np.full(len(gpts), 0.5 ** dim)
    # 1-D hat functions on [0, 1]: N0 = 1 - t, N1 = t
    n_gc = len(gpts)
    n_c = len(corners)
    N = np.ones((n_gc, n_c))
    dN = np.ones((n_gc, n_c, dim))
    for a, c in enumerate(corners):
        for k in range(dim):
            t = gpts[:, k]
            val = t if c[k] else 1.0 - t
            der = np.ones_like(t) if c[k] else -np.ones_like(t)
            N[:, a] *= val
            for l in range(dim):
                dN[:, a, l] *= der if l == k else val
    return gpts, gw, N, dN, corners


@lru_cache(maxsize=32)
def connectivity(shape: tuple) -> np.ndarray:
    """Flat node indices of the ``2^dim`` corners of every cell, shape ``(n_cells, 2^dim)``."""
    dim = len(shape)
    _, _, _, _, corners = reference_element(dim)
    starts = np.stack(np.meshgrid(*[np.arange(n - 1) for n in shape], indexing="ij"), -1)
    starts = starts.reshape(-1, dim)
    idx = starts[:, None, :] + corners[None, :, :]
    return np.ravel_multi_index(tuple(idx[..., k] for k in range(dim)), shape)


class Q1Space:
    """Q1 element space on a uniform tensor grid with per-axis ``spacing``."""

    def __init__(self, shape, spacing):
        self.shape = tuple(int(n) for n in shape)
        self.dim = len(self.shape)
        self.spacing = np.asarray(spacing, dtype=float)
        self.n_nodes = int(np.prod(self.shape))
        self.conn = connectivity(self.shape)
        gpts, gw, N, dN, _ = reference_element(self.dim)
        self.N = N
        self.dN = dN / self.spacing  # physical gradients
        self.jac_w = gw * float(np.prod(self.spacing))

    def to_gauss(self, nodal):
        """Interpolate nodal values ``(n_nodes, ...)`` to Gauss points ``(n_cells, G, ...)``."""
        nodal = np.asarray(nodal)
        if nodal.shape[: self.dim] == self.shape:
            nodal = nodal.reshape((self.n_nodes,) + nodal.shape[self.dim:])
        local = nodal[self.conn]  # (cells, corners, ...)
        return np.einsum("ga,ca...->cg...", self.N, local)

    def _scatter(self, local):
        rows = np.repeat(self.conn, self.conn.shape[1], axis=1).ravel()
        cols = np.tile(self.conn, (1, self.conn.shape[1])).ravel()
        return sps.csr_matrix((local.ravel(), (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    def stiffness(self, coef_nodal):
        """``K_ab = int grad N_a' coef grad N_b`` with a matrix coefficient given at the nodes."""
        cg_ = self.to_gauss(coef_nodal)  # (cells, G, dim, dim)
        local = np.einsum("g,gak,cgkl,gbl->cab", self.jac_w, self.dN, cg_, self.dN)
        return self._scatter(local)

    def load_grad(self, vec_nodal):
        """``b_a = int vec . grad N_a`` for a vector field given at the nodes."""
        vg = self.to_gauss(vec_nodal)  # (cells, G, dim)
        local = np.einsum("g,gak,cgk->ca", self.jac_w, self.dN, vg)
        return np.bincount(self.conn.ravel(), local.ravel(), minlength=self.n_nodes)

    def load_mass(self, f_nodal):
        """``b_a = int f N_a`` for a scalar field given at the nodes."""
        fg = self.to_gauss(f_nodal)  # (cells, G)
        local = np.einsum("g,ga,cg->ca", self.jac_w, self.N, fg)
        return np.bincount(self.conn.ravel(), local.ravel(), minlength=self.n_nodes)

    def integrate(self, f_nodal_or_gauss, at_gauss=False):
        fg = f_nodal_or_gauss if at_gauss else self.to_gauss(f_nodal_or_gauss)
        return float(np.einsum("g,cg->", self.jac_w, fg))

    def gauss_gradient(self, u_nodal):
        """Gradient of the Q1 interpolant at Gauss points, shape ``(cells, G, dim)``."""
        u = np.asarray(u_nodal).reshape(self.n_nodes)
        return np.einsum("gak,ca->cgk", self.dN, u[self.conn])


def solve_zero_mean(K, b, weights, tol=1e-10, max_iter=None):
    """Solve ``K u = b`` on the subspace of zero ``weights``-mean vectors.

    ``K`` is symmetric positive semidefinite with the constants as kernel.  The
    right-hand side is projected onto the range first; conjugate gradients
    with a Jacobi preconditioner are started from zero.
    Returns ``(u, relative_residual, iterations)``.
    """
    n = K.shape[0]
    weights = np.asarray(weights, dtype=float).reshape(n)
    b = np.asarray(b, dtype=float).reshape(n)
    diag = K.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise SingularSystem("operator has a nonpositive diagonal entry (degenerate coefficient)")
    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    max_iter = max_iter or 10 * n
    inv_diag = 1.0 / diag
    M = sps.diags(inv_diag)
    count = [0]

    def cb(_):
        count[0] += 1

    u, info = cg(K, b, x0=np.zeros(n), rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=cb)
    if info > 0:
        raise NoConvergence(f"conjugate gradients did not reach tol {tol} in {max_iter} iterations")
    if info < 0:
        raise SingularSystem("conjugate gradients broke down")
    u = u - np.dot(weights, u) / weights.sum()
    r = K @ u - b
    rel = float(np.linalg.norm(r) / bnorm)
    if rel > max(1e3 * tol, 1e-6):
        raise SingularSystem(f"system is rank deficient beyond the constants (residual {rel:.2e})")
    return u, rel, count[0]
