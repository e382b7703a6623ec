"""Estimator-style wrapper around solve / calibrate / simulate.

``fit`` produces the stopping boundaries (calibrating the multiplier when a
welfare floor is given), and ``predict`` maps observed states ``(t, m)`` to a
decision: ``1`` stop and approve, ``-1`` stop and reject, ``0`` continue.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import model
from .calibrate import calibrate_lambda
from .model import CostSpec, PriorSpec, UtilitySpec
from .simulator import SimConfig, simulate
from .solver import GridSpec, solve_boundaries


class PersuasiveDesign(BaseEstimator):
    """Welfare-constrained stopping design for a two-arm trial.

    Parameters
    ----------
    varrho0, m0, sigma1, sigma0 : float
        Prior variance and mean of the effect, and per-arm noise.
    c, B, gamma : float
        Sampling cost, approval benefit and treatment-linked weight, in
        limit units.
    alpha, alpha_prime : float
        Error asymmetries of the regulator and the experimenter.
    lam : float or None
        Fixed multiplier. When ``None``, ``fit`` calibrates it to ``v0``.
    v0 : float or None
        Welfare floor; ``None`` means the fixed-horizon RCT welfare.
    n_rho, m_bar_factor : grid resolution.
    n_paths, seed, xi : Monte Carlo settings for calibration and scoring.
    """

    def __init__(self, varrho0=9.7344, m0=0.0, sigma1=0.5, sigma0=0.5, c=0.2656587, B=1.0,
                 gamma=0.0, alpha=1.0, alpha_prime=1.0, lam=None, v0=None, n_rho=4000,
                 m_bar_factor=6.0, n_paths=100_000, seed=20250101, xi=0.0):
        self.varrho0 = varrho0
        self.m0 = m0
        self.sigma1 = sigma1
        self.sigma0 = sigma0
        self.c = c
        self.B = B
        self.gamma = gamma
        self.alpha = alpha
        self.alpha_prime = alpha_prime
        self.lam = lam
        self.v0 = v0
        self.n_rho = n_rho
        self.m_bar_factor = m_bar_factor
        self.n_paths = n_paths
        self.seed = seed
        self.xi = xi

    def _specs(self):
        prior = PriorSpec(m0=self.m0, varrho0=self.varrho0, sigma1=self.sigma1, sigma0=self.sigma0)
        util = UtilitySpec(alpha=self.alpha, alpha_prime=self.alpha_prime, gamma=self.gamma, B=self.B)
        cost = CostSpec(c=self.c)
        grid = GridSpec.default(prior, n_rho=self.n_rho, m_bar_factor=self.m_bar_factor)
        cfg = SimConfig(n_paths=self.n_paths, seed=self.seed, xi=self.xi)
        return prior, util, cost, grid, cfg

    def fit(self, X=None, y=None):
        """Solve for the boundaries. ``X`` and ``y`` are ignored."""
        prior, util, cost, grid, cfg = self._specs()
        if self.lam is not None:
            if self.lam < 0:
                raise ValueError("lam must be non-negative")
            self.solution_ = solve_boundaries(prior, util, self.lam, cost, grid)
            self.lambda_ = float(self.lam)
            self.calibration_ = None
        else:
            target = model.rct_welfare(prior, util.alpha) if self.v0 is None else float(self.v0)
            res = calibrate_lambda(target, prior, util, cost, grid, cfg, final_paths=self.n_paths)
            self.calibration_ = res
            self.solution_ = res.sol
            self.lambda_ = res.lambda_star
        self.t_star_ = self.solution_.t_star
        self.prior_ = prior
        return self

    def boundaries(self, t):
        """``(b_minus(t), b_plus(t))`` at calendar times ``t``."""
        check_is_fitted(self, "solution_")
        t = np.asarray(t, float)
        if np.any(t < 0):
            raise ValueError("t must be non-negative")
        return self.solution_.b_minus_at_t(t), self.solution_.b_plus_at_t(t)

    def predict(self, X):
        """Decision for each row ``(t, m)``: 1 approve, -1 reject, 0 continue."""
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (t, m), got {X.shape[1]}")
        lo, hi = self.boundaries(X[:, 0])
        m = X[:, 1]
        out = np.zeros(X.shape[0], dtype=int)
        out[m >= hi + self.xi] = 1
        out[m <= lo] = -1
        return out

    def simulate(self, n_paths=None, seed=None):
        check_is_fitted(self, "solution_")
        prior, util, cost, _, cfg = self._specs()
        cfg = SimConfig(n_paths=n_paths or cfg.n_paths, seed=self.seed if seed is None else seed, xi=self.xi)
        return simulate(self.solution_, prior, util, cost, cfg)

    def score(self, X=None, y=None):
        """Monte Carlo estimate of the regulator's welfare under the fitted design."""
        return self.simulate().welfare_alice
