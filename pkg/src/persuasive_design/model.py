"""Closed-form quantities of the two-arm Gaussian design problem.

Everything here is a pure function of its arguments: welfare kernels,
posterior laws under the optimal allocation, the variance time change used
by the boundary solver, structural-parameter scaling and the fixed-horizon
RCT benchmark.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import DegeneratePriorError, NormalizationError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _check_fraction(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior over the two arm means.

    Parameters
    ----------
    m0 : float
        Prior mean of the effect ``mu1 - mu0``.
    varrho0 : float
        Prior variance of the effect.
    sigma1, sigma0 : float
        Per-arm sampling standard deviations.
    cov : 2x2 nested tuple, optional
        Prior covariance of the transformed means ``(mu1/sigma1, -mu0/sigma0)``.
        Build it through :meth:`from_cov`, which derives ``varrho0`` and puts
        the arm sampled first in slot 1.

    Without ``cov`` the arms are independent with ``Sigma_aa`` proportional to
    ``sigma_a``; that is the restriction under which Neyman allocation is
    optimal from time zero.
    """

    m0: float = 0.0
    varrho0: float = 9.7344
    sigma1: float = 0.5
    sigma0: float = 0.5
    cov: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    arms_swapped: bool = False

    def __post_init__(self):
        if not self.varrho0 > 0:
            raise ValueError(f"varrho0 must be positive, got {self.varrho0!r}")
        if not (self.sigma1 > 0 and self.sigma0 > 0):
            raise ValueError("sigma1 and sigma0 must be positive")
        if self.cov is not None:
            S = np.asarray(self.cov, dtype=float)
            if S.shape != (2, 2):
                raise ValueError("cov must be 2x2")
            if not np.isclose(S[0, 1], S[1, 0], rtol=0, atol=1e-12 * max(1.0, abs(S).max())):
                raise ValueError("cov must be symmetric")
            if np.linalg.eigvalsh(S).min() < -1e-12 * max(1.0, abs(S).max()):
                raise ValueError("cov must be positive semi-definite")
            c1, c0 = _cov_terms(S, self.sigma1, self.sigma0)
            if c1 + c0 < 0:
                raise ValueError("cov violates cov1 + cov0 >= 0")
            if c1 < c0:
                raise ValueError("arm with the larger covariance term must be slot 1; use PriorSpec.from_cov")
            w = np.array([self.sigma1, self.sigma0])
            implied = float(w @ S @ w)
            if not np.isclose(implied, self.varrho0, rtol=1e-9, atol=0):
                raise ValueError(f"varrho0={self.varrho0!r} disagrees with cov (implies {implied!r})")

    @classmethod
    def from_cov(cls, cov, sigma1, sigma0, m0=0.0):
        """Prior from a transformed covariance, relabelling arms so ``cov1 >= cov0``."""
        S = np.array(cov, dtype=float)
        S = 0.5 * (S + S.T)
        s1, s0 = float(sigma1), float(sigma0)
        c1, c0 = _cov_terms(S, s1, s0)
        swapped = bool(c0 > c1)
        if swapped:
            S = S[::-1, ::-1].copy()
            s1, s0 = s0, s1
        w = np.array([s1, s0])
        varrho0 = float(w @ S @ w)
        return cls(m0=m0, varrho0=varrho0, sigma1=s1, sigma0=s0,
                   cov=((S[0, 0], S[0, 1]), (S[1, 0], S[1, 1])), arms_swapped=swapped)

    @property
    def sigma(self):
        return self.sigma1 + self.sigma0

    @property
    def sigma_sq(self):
        return (self.sigma1 + self.sigma0) ** 2

    @property
    def first_arm(self):
        """Original label of the arm sampled exclusively before the switch time."""
        return 0 if self.arms_swapped else 1

    def arm_prior_variances(self):
        """Per-arm prior variances ``(Sigma_11, Sigma_00)`` of the untransformed means."""
        if self.cov is None:
            return (self.varrho0 * self.sigma1 / self.sigma, self.varrho0 * self.sigma0 / self.sigma)
        S = np.asarray(self.cov)
        return (S[0, 0] * self.sigma1 ** 2, S[1, 1] * self.sigma0 ** 2)


def _cov_terms(S, sigma1, sigma0):
    # covariance of each transformed coordinate with mu1 - mu0 = sigma1*x1 + sigma0*x2
    return (sigma1 * S[0, 0] + sigma0 * S[0, 1], sigma0 * S[1, 1] + sigma1 * S[0, 1])


@dataclass(frozen=True)
class UtilitySpec:
    """Error weights and benefits of the regulator and the experimenter."""

    alpha: float = 1.0
    alpha_prime: float = 1.0
    gamma: float = 0.0
    B: float = 1.0

    def __post_init__(self):
        _check_fraction("alpha", self.alpha)
        _check_fraction("alpha_prime", self.alpha_prime)
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.B < 0:
            raise ValueError("B must be non-negative")


@dataclass(frozen=True)
class StructuralCosts:
    C: float
    B_n: float
    gamma_n: float
    n: float


@dataclass(frozen=True)
class CostSpec:
    """Sampling cost per unit of limit time, optionally with its structural origin."""

    c: float
    structural: Optional[StructuralCosts] = None

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c!r}")
        if self.structural is not None and self.structural.B_n > 0:
            implied = scale_params(self.structural.C, self.structural.B_n,
                                   self.structural.gamma_n, self.structural.n).c
            if not np.isclose(implied, self.c, rtol=1e-9):
                raise ValueError(f"c={self.c!r} is inconsistent with structural costs (implies {implied!r} at B=1)")

    @classmethod
    def from_structural(cls, C, B_n, gamma_n=0.0, n=300):
        lp = scale_params(C, B_n, gamma_n, n)
        return cls(c=lp.c, structural=StructuralCosts(float(C), float(B_n), float(gamma_n), float(n)))


def s_alpha(x, alpha):
    """Welfare kernel ``max(x, 0) - (1 - alpha) x``."""
    _check_fraction("alpha", alpha)
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) - (1.0 - alpha) * x
    return out if out.ndim else float(out)


def neyman_fraction(sigma1, sigma0):
    if not (sigma1 > 0 and sigma0 > 0):
        raise ValueError("standard deviations must be positive")
    return sigma1 / (sigma1 + sigma0)


def _nonneg(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError(f"{name} must be non-negative")
    return x


def _ret(x):
    return x if x.ndim else float(x)


def general_cov_t_star(prior):
    """Time at which sampling switches from the first arm alone to Neyman allocation.

    Zero when the two covariance terms agree. Raises
    :class:`DegeneratePriorError` for a singular transformed covariance.
    """
    if prior.cov is None:
        return 0.0
    S = np.asarray(prior.cov, dtype=float)
    det = S[0, 0] * S[1, 1] - S[0, 1] ** 2
    c1, c0 = _cov_terms(S, prior.sigma1, prior.sigma0)
    if det <= 1e-14 * max(1.0, S[0, 0] * S[1, 1]):
        raise DegeneratePriorError("transformed prior covariance is singular")
    return max(c1 - c0, 0.0) / (prior.sigma0 * det)


def _cov_parts(prior):
    S = np.asarray(prior.cov, dtype=float)
    det = S[0, 0] * S[1, 1] - S[0, 1] ** 2
    c1, _ = _cov_terms(S, prior.sigma1, prior.sigma0)
    t_star = general_cov_t_star(prior)
    shift = (S[0, 0] + S[1, 1] - 2.0 * S[0, 1]) / det
    return S, det, c1, t_star, shift


def posterior_variance(t, prior):
    """Posterior variance of the effect after ``t`` units of optimally allocated sampling."""
    t = _nonneg("t", t)
    if prior.cov is None:
        s2 = prior.sigma_sq
        return _ret(s2 / (s2 / prior.varrho0 + t))
    S, det, _, t_star, shift = _cov_parts(prior)
    early = (prior.varrho0 + prior.sigma0 ** 2 * det * t) / (1.0 + S[0, 0] * t)
    late = prior.sigma_sq / (shift + t)
    return _ret(np.where(t <= t_star, early, late))


def time_change_psi(t, prior):
    """Variance already resolved by time ``t``: ``varrho0 - posterior_variance(t)``."""
    t = _nonneg("t", t)
    if prior.cov is None:
        s2 = prior.sigma_sq
        return _ret(prior.varrho0 * t / (s2 / prior.varrho0 + t))
    return _ret(prior.varrho0 - np.asarray(posterior_variance(t, prior)))


def time_change_inverse(rho, prior):
    """Calendar time at which ``rho`` units of variance have been resolved."""
    rho = _nonneg("rho", rho)
    if np.any(rho >= prior.varrho0):
        raise ValueError("rho must be strictly below varrho0 (the full prior variance takes infinite time)")
    if prior.cov is None:
        s2 = prior.sigma_sq
        return _ret(rho * s2 / prior.varrho0 / (prior.varrho0 - rho))
    S, det, c1, t_star, shift = _cov_parts(prior)
    rho_star = prior.varrho0 - float(posterior_variance(t_star, prior))
    with np.errstate(over="ignore"):  # only the branch selected below is used
        early = rho / np.maximum(c1 ** 2 - S[0, 0] * rho, np.finfo(float).tiny)
    late = prior.sigma_sq / (prior.varrho0 - rho) - shift
    return _ret(np.where(rho <= rho_star, early, late))


def arm_allocation(t, prior):
    """Cumulative optimal attention ``(q1, q0)`` by time ``t`` (labels after relabelling)."""
    t = _nonneg("t", t)
    frac = neyman_fraction(prior.sigma1, prior.sigma0)
    t_star = general_cov_t_star(prior)
    q1 = np.where(t <= t_star, t, t_star + frac * (t - t_star))
    return _ret(q1), _ret(t - q1)


@dataclass(frozen=True)
class LimitParams:
    """Structural parameters rescaled to the small-cost limit (``B = 1`` when ``B_n > 0``)."""

    c: float
    B: float
    gamma: float
    varrho0: Optional[float] = None

    @property
    def c_over_B(self):
        return self.c / self.B if self.B > 0 else float("inf")

    @property
    def gamma_over_c(self):
        return self.gamma / self.c


def scale_params(C, B_n, gamma_n=0.0, n=300, varrho_0n=None, normalize="B"):
    """Map per-observation currency amounts to limit-experiment units.

    Uses ``c/B = n C / B_n``, ``gamma/c = gamma_n / (n^{3/2} C)`` and
    ``varrho0 = sqrt(n) varrho_{0,n}``. Only the ratios are identified, so the
    result is expressed with ``B = 1``. A zero ``B_n`` cannot be normalized
    that way; supply ``c`` directly for that case.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    if not n >= 1:
        raise ValueError("n must be at least 1")
    if B_n < 0 or gamma_n < 0:
        raise ValueError("B_n and gamma_n must be non-negative")
    if normalize != "B":
        raise ValueError(f"unsupported normalization {normalize!r}")
    if B_n == 0:
        raise NormalizationError("B_n = 0 cannot be normalized to B = 1; pass the limit cost c directly")
    c = n * C / B_n
    gamma = c * gamma_n / (n ** 1.5 * C)
    varrho0 = None if varrho_0n is None else float(np.sqrt(n) * varrho_0n)
    return LimitParams(c=c, B=1.0, gamma=gamma, varrho0=varrho0)


def expected_s_alpha_normal(mean, sd, alpha):
    """``E[S_alpha(X)]`` for ``X ~ N(mean, sd^2)``."""
    _check_fraction("alpha", alpha)
    if sd <= 0:
        return float(s_alpha(mean, alpha))
    z = mean / sd
    return float(mean * norm_cdf(z) + sd * norm_pdf(z) - (1.0 - alpha) * mean)


def rct_welfare(prior, alpha=1.0, horizon=1.0, m0=None):
    """Regulator welfare of a fixed-horizon trial stopped at ``horizon``.

    The posterior mean at the horizon is ``N(m0, psi(horizon))``; for
    ``m0 = 0`` the result does not depend on ``alpha``. ``m0`` defaults to
    the prior's mean gap.
    """
    nu = float(np.sqrt(time_change_psi(horizon, prior)))
    return expected_s_alpha_normal(prior.m0 if m0 is None else float(m0), nu, alpha)
