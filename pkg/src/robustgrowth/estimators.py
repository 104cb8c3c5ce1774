"""Scikit-learn style wrappers.

``fit`` takes a market model (a :class:`~robustgrowth.model.MarketModel`, a
config document or a catalog name) rather than a data matrix; ``predict`` and
``transform`` then act on arrays of asset states ``(n_samples, d)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .catalog import get_entry, model_from_config
from .growth import interpolate_e, strategy_weights
from .model import MarketModel
from .pipeline import default_boxes, solve_model, worst_case


def _resolve_model(model, eps):
    if isinstance(model, MarketModel):
        return model, None
    if isinstance(model, str):
        entry = get_entry(model)
        return entry.build(eps=eps)[0], entry.grid
    if isinstance(model, dict):
        doc = dict(model)
        if eps is not None:
            doc["eps"] = eps
        return model_from_config(doc), doc.get("grid")
    raise TypeError("model must be a MarketModel, a config dict or a catalog name")


class RobustGrowthPortfolio(TransformerMixin, BaseEstimator):
    """Robust growth-optimal portfolio generated by the solved potential.

    Parameters
    ----------
    grid : int or list of int, optional
        Nodes per axis (default: the catalog resolution, else 201).
    eps : float, optional
        Boundary offset override for catalog or config models.
    method : {"auto", "1d-closed-form", "gradient-case", "fd-solve"}
    validate : bool
        Refuse models that fail input validation.

    Attributes
    ----------
    phi_ : PhiSolution
    lambda_ : float
    method_ : str
    n_features_in_ : int
    """

    def __init__(self, grid=None, eps=None, method="auto", validate=True):
        self.grid = grid
        self.eps = eps
        self.method = method
        self.validate = validate

    def fit(self, model, y=None):
        mdl, default_grid = _resolve_model(model, self.eps)
        self.solved_ = solve_model(mdl, self.grid or default_grid, method=self.method,
                                   validate=self.validate)
        self.phi_ = self.solved_.phi
        self.lambda_ = self.phi_.lambda_
        self.method_ = self.phi_.method
        self.n_features_in_ = mdl.d
        return self

    def _check_x(self, X):
        check_is_fitted(self, "phi_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Strategy weights ``theta(x)``, shape ``(n_samples, d)``."""
        X = self._check_x(X)
        return strategy_weights(self.phi_, X)

    def transform(self, X):
        """Generating function values, shape ``(n_samples, 1)``."""
        X = self._check_x(X)
        return interpolate_e(self.phi_.grid, self.phi_.phi, X)[:, None]


class WorstCaseMeasure(BaseEstimator):
    """Worst-case diffusion for a fitted :class:`RobustGrowthPortfolio`.

    Parameters
    ----------
    k_fraction, v_fraction : tuple of float
        Boxes K and V as fractions of every E axis.
    T, dt : float
    n_paths, seed : int
    boundary_policy : {"reflect", "reject"}
    """

    def __init__(self, k_fraction=(0.2, 0.8), v_fraction=(0.1, 0.9), T=2000.0, dt=1e-3,
                 n_paths=16, seed=0, boundary_policy="reflect"):
        self.k_fraction = k_fraction
        self.v_fraction = v_fraction
        self.T = T
        self.dt = dt
        self.n_paths = n_paths
        self.seed = seed
        self.boundary_policy = boundary_policy

    def fit(self, portfolio, y=None):
        check_is_fitted(portfolio, "phi_")
        self.portfolio_ = portfolio
        K, V = default_boxes(portfolio.solved_.grid, self.k_fraction, self.v_fraction)
        self.kmod_, self.vsol_ = worst_case(portfolio.solved_, K, V)
        return self

    def simulate(self, strategies=None):
        """Simulate the worst-case diffusion; returns a :class:`~robustgrowth.simulate.SimResult`."""
        from .simulate import SimConfig, simulate_worst_case
        check_is_fitted(self, "kmod_")
        cfg = SimConfig(T=self.T, dt=self.dt, n_paths=self.n_paths, seed=self.seed,
                        boundary_policy=self.boundary_policy)
        s = self.portfolio_.solved_
        return simulate_worst_case(s.model, self.kmod_, s.phi, self.vsol_, cfg, strategies)

    def score(self, X=None, y=None):
        """Monte Carlo growth of the optimal strategy under the worst case."""
        return self.simulate().growth("theta_hat")[0]
