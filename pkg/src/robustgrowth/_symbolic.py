"""Build vectorised model evaluators and exact derivatives from sympy expressions."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .model import DomainSpec, MarketModel, ModelDerivatives


def make_symbols(d: int, m: int):
    xs = sp.symbols([f"x{i + 1}" for i in range(d)], real=True)
    ys = sp.symbols([f"y{i + 1}" for i in range(m)], real=True)
    return tuple(xs), tuple(ys)


def _lambdify(expr, args):
    f = sp.lambdify(args, expr, modules="numpy")
    return f


class _TensorEvaluator:
    """Evaluate an array of sympy expressions on ``(x, y)`` point arrays."""

    def __init__(self, exprs, xs, ys):
        arr = np.array(exprs, dtype=object)
        self.shape = arr.shape
        self.d = len(xs)
        self.m = len(ys)
        flat = arr.reshape(-1)
        args = list(xs) + list(ys)
        self._funcs = [_lambdify(e, args) for e in flat]
        self._const = [bool(sp.sympify(e).free_symbols.isdisjoint(args)) for e in flat]

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        base = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        comps = [x[..., i] for i in range(self.d)] + [y[..., i] for i in range(self.m)]
        out = np.empty(base + (len(self._funcs),))
        with np.errstate(all="ignore"):
            for k, f in enumerate(self._funcs):
                out[..., k] = f(*comps)
        return out.reshape(base + self.shape)


def symbolic_model(domain: DomainSpec, xs: Sequence, ys: Sequence, cx, p, cy,
                   family: str, params: Mapping) -> MarketModel:
    """Model whose evaluators and derivatives are generated from sympy expressions.

    ``cx`` is a ``d x d`` sympy Matrix, ``p`` a scalar expression and ``cy`` an
    ``m x m`` Matrix, all in the symbols ``xs`` and ``ys``.
    """
    d, m = len(xs), len(ys)
    cx = sp.Matrix(cx)
    cy = sp.Matrix(cy)
    cxp = (cx * p).applyfunc(sp.simplify) if d * d <= 4 else cx * p
    cyp = cy * p

    def mat(M):
        return [[M[i, j] for j in range(M.shape[1])] for i in range(M.shape[0])]

    cxp_dx = [mat(cxp.diff(xs[k])) for k in range(d)]
    cxp_dxx = [[mat(cxp.diff(xs[k]).diff(xs[l])) for l in range(d)] for k in range(d)]
    cyp_dy = [mat(cyp.diff(ys[k])) for k in range(m)]
    p_dx = [sp.diff(p, xs[k]) for k in range(d)]

    cx_eval = _TensorEvaluator(mat(cx), xs, ys)
    p_eval = _TensorEvaluator(p, xs, ys)
    cy_eval = _TensorEvaluator(mat(cy), xs, ys)
    derivs = ModelDerivatives(
        cxp_dx=_TensorEvaluator(cxp_dx, xs, ys),
        cxp_dxx=_TensorEvaluator(cxp_dxx, xs, ys),
        cyp_dy=_TensorEvaluator(cyp_dy, xs, ys),
        p_dx=_TensorEvaluator(p_dx, xs, ys),
    )
    return MarketModel(domain, cx_eval, p_eval, cy_eval, family=family, params=dict(params),
                       derivatives=derivs)


def parse_expression(text: str, xs, ys, extra: Mapping | None = None):
    """Parse a user-supplied formula in the symbols ``x1.., y1..``."""
    local = {str(s): s for s in tuple(xs) + tuple(ys)}
    if extra:
        local.update(extra)
    try:
        return sp.sympify(text, locals=local)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc


def expression_model(domain: DomainSpec, cx_text, p_text, cy_text,
                     family: str = "expression", params: Mapping | None = None) -> MarketModel:
    """Model from nested lists of formula strings (JSON friendly)."""
    xs, ys = make_symbols(domain.d, domain.m)

    def parse_matrix(rows, k):
        if isinstance(rows, str):
            if k != 1:
                raise ValueError("a scalar formula is only allowed for 1x1 matrices")
            rows = [[rows]]
        M = sp.Matrix([[parse_expression(str(e), xs, ys) for e in row] for row in rows])
        if M.shape != (k, k):
            raise ValueError(f"expected a {k}x{k} matrix, got {M.shape}")
        return M

    cx = parse_matrix(cx_text, domain.d)
    cy = parse_matrix(cy_text, domain.m)
    p = parse_expression(str(p_text), xs, ys)
    return symbolic_model(domain, xs, ys, cx, p, cy, family,
                          params or {"cx": cx_text, "density": p_text, "cy": cy_text})
