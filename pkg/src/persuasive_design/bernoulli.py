"""Finite-sample trials with Bernoulli outcomes.

Arm success probabilities sit at ``theta0 + h_a / sqrt(n)`` with a Gaussian
local parameter ``h_a``. Observations are allocated by the Neyman rule
(alternating arms when the arms are symmetric), the normalized score of each
arm feeds a conjugate posterior mean for the local effect, and the trial stops
when that posterior mean leaves ``(b_minus(t), b_plus(t) + xi)`` with
``t`` = observations / n.

Each replication owns three counter-based streams keyed by the seed and the
replication index: one for the drawn ``h`` and one per arm for its stack of
outcomes. The same ``h`` is therefore used at every ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numba
import numpy as np

from . import model
from ._io import SCHEMA_VERSION, write_csv, write_json
from ._rng import normal_at, stream_key, uniform_at
from .errors import MismatchError
from .simulator import SimConfig, simulate

EPS = 1e-6


@dataclass(frozen=True)
class TrialConfig:
    """Settings of a finite-sample trial.

    ``nu2`` defaults to ``varrho0 / (2 sigma^2)``, which makes the prior of
    the scaled effect match the limit prior. ``xi`` defaults to ``0.05 sigma``
    and ``T`` to the end of the solution's time grid.
    ``forced_exploration`` is accepted for interface parity; with Bernoulli
    outcomes the arms share one variance, so equal allocation is already the
    rule and the flag changes nothing.
    """

    n: int = 300
    theta0: float = 0.5
    nu2: Optional[float] = None
    xi: Optional[float] = None
    T: Optional[float] = None
    seed: int = 20250101
    forced_exploration: bool = False
    fixed_theta: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 < self.theta0 < 1:
            raise ValueError("theta0 must lie in (0, 1)")
        if self.nu2 is not None and not self.nu2 > 0:
            raise ValueError("nu2 must be positive")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.T is not None and not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def sigma_arm(self):
        return math.sqrt(self.theta0 * (1 - self.theta0))

    @property
    def sigma(self):
        return 2.0 * self.sigma_arm

    def resolved(self, sol):
        """Copy with every default filled in from the boundary solution."""
        nu2 = self.nu2 if self.nu2 is not None else sol.prior.varrho0 / (2 * self.sigma ** 2)
        xi = self.xi if self.xi is not None else 0.05 * self.sigma
        T = self.T if self.T is not None else float(sol.t_grid[-1])
        return TrialConfig(n=self.n, theta0=self.theta0, nu2=nu2, xi=xi, T=T, seed=self.seed,
                           forced_exploration=self.forced_exploration, fixed_theta=self.fixed_theta)

    def with_n(self, n):
        return TrialConfig(n=n, theta0=self.theta0, nu2=self.nu2, xi=self.xi, T=self.T, seed=self.seed,
                           forced_exploration=self.forced_exploration, fixed_theta=self.fixed_theta)


@dataclass
class TrialState:
    """Running tallies of one trial: counts, successes and normalized scores per arm (index 1, 0)."""

    n: int
    theta0: float
    counts: List[int] = field(default_factory=lambda: [0, 0])
    successes: List[int] = field(default_factory=lambda: [0, 0])
    scores: List[float] = field(default_factory=lambda: [0.0, 0.0])

    @property
    def index(self):
        return self.counts[0] + self.counts[1]

    def q(self, arm):
        return self.counts[_slot(arm)] / self.n


def _slot(arm):
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm!r}")
    return 0 if arm == 1 else 1


def score_update(state, arm, outcome, cfg=None):
    """Add one outcome to ``arm``'s tally; the score is ``sum(Y - theta0) / sqrt(n theta0 (1 - theta0))``."""
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    if sum(state.counts) != state.index:
        raise ValueError("inconsistent trial state")
    i = _slot(arm)
    th = state.theta0
    state.counts[i] += 1
    state.successes[i] += int(outcome)
    state.scores[i] += (outcome - th) / math.sqrt(state.n * th * (1 - th))
    return state


def _arm_posterior(score, q, sigma_a, prior_var, prior_mean):
    return (score / sigma_a + prior_mean / prior_var) / (q / sigma_a ** 2 + 1.0 / prior_var)


def posterior_mean_n(state, prior, cfg):
    """Finite-sample posterior mean of the scaled effect ``sqrt(n)(theta1 - theta0_arm)``."""
    sa = math.sqrt(state.theta0 * (1 - state.theta0))
    nu2 = cfg.nu2 if cfg.nu2 is not None else prior.varrho0 / (2 * (2 * sa) ** 2)
    v = (2 * sa) ** 2 * nu2
    mu1 = _arm_posterior(state.scores[0], state.counts[0] / state.n, sa, v, 0.5 * prior.m0)
    mu0 = _arm_posterior(state.scores[1], state.counts[1] / state.n, sa, v, -0.5 * prior.m0)
    return mu1 - mu0


@numba.njit(cache=True)
def _trial(seed, rep, n, theta0, sd_h, frac1, m0, prior_var, upper, lower, n_max,
           fixed, th1_fixed, th0_fixed, record, path):
    """One trial; returns (stop index, final m, q1 count, theta1, theta0, clamps, hit cap)."""
    key_h = stream_key(seed, 3 * rep)
    key1 = stream_key(seed, 3 * rep + 1)
    key0 = stream_key(seed, 3 * rep + 2)
    clamps = 0
    if fixed:
        th1, th0 = th1_fixed, th0_fixed
    else:
        sqn = math.sqrt(n)
        th1 = theta0 + sd_h * normal_at(key_h, 0) / sqn
        th0 = theta0 + sd_h * normal_at(key_h, 1) / sqn
    if th1 < EPS:
        th1 = EPS
        clamps += 1
    elif th1 > 1 - EPS:
        th1 = 1 - EPS
        clamps += 1
    if th0 < EPS:
        th0 = EPS
        clamps += 1
    elif th0 > 1 - EPS:
        th0 = 1 - EPS
        clamps += 1
    sa = math.sqrt(theta0 * (1 - theta0))
    norm = 1.0 / math.sqrt(n * theta0 * (1 - theta0))
    c1 = 0
    c0 = 0
    x1 = 0.0
    x0 = 0.0
    j = 0
    m = m0
    if record:
        path[0] = m
    while True:
        if m <= lower[j] or m >= upper[j]:
            return j, m, c1, th1, th0, clamps, False
        if j >= n_max:
            return j, m, c1, th1, th0, clamps, True
        if c1 <= frac1 * j:
            y = 1.0 if uniform_at(key1, c1) <= th1 else 0.0
            x1 += (y - theta0) * norm
            c1 += 1
        else:
            y = 1.0 if uniform_at(key0, c0) <= th0 else 0.0
            x0 += (y - theta0) * norm
            c0 += 1
        j += 1
        mu1 = (x1 / sa + 0.5 * m0 / prior_var) / ((c1 / n) / (sa * sa) + 1.0 / prior_var)
        mu0 = (x0 / sa - 0.5 * m0 / prior_var) / ((c0 / n) / (sa * sa) + 1.0 / prior_var)
        m = mu1 - mu0
        if record:
            path[j] = m


@numba.njit(cache=True)
def _batch(seed, reps, n, theta0, sd_h, frac1, m0, prior_var, upper, lower, n_max,
           fixed, th1_fixed, th0_fixed):
    j_out = np.empty(reps, np.int64)
    m_out = np.empty(reps)
    th_out = np.empty((reps, 2))
    clamps = 0
    capped = 0
    dummy = np.empty(1)
    for r in range(reps):
        j, m, c1, t1, t0, cl, cap = _trial(seed, r, n, theta0, sd_h, frac1, m0, prior_var, upper,
                                           lower, n_max, fixed, th1_fixed, th0_fixed, False, dummy)
        j_out[r] = j
        m_out[r] = m
        th_out[r, 0] = t1
        th_out[r, 1] = t0
        clamps += cl
        capped += cap
    return j_out, m_out, th_out, clamps, capped


@dataclass
class TrialRun:
    tau_index: int
    tau: float
    decision: int
    m_path: np.ndarray = field(repr=False)
    q1_count: int
    q0_count: int
    theta: Tuple[float, float]
    clamped: int
    hit_cap: bool

    @property
    def approve(self):
        return self.decision == 1


def _bands(sol, cfg, n):
    n_max = int(math.ceil(cfg.T * n - 1e-9))
    t = np.arange(n_max + 1) / n
    upper = sol.b_plus_at_t(np.minimum(t, sol.t_grid[-1])) + cfg.xi
    lower = sol.b_minus_at_t(np.minimum(t, sol.t_grid[-1]))
    return np.asarray(upper, float), np.asarray(lower, float), n_max


def _check(sol, prior, cfg):
    sol.check_prior(prior)
    sa = cfg.sigma_arm
    if not (math.isclose(prior.sigma1, sa, rel_tol=1e-9) and math.isclose(prior.sigma0, sa, rel_tol=1e-9)):
        raise MismatchError(f"Bernoulli arms at theta0={cfg.theta0} have sigma_a={sa:.6g}; "
                            f"prior has sigma1={prior.sigma1}, sigma0={prior.sigma0}")


def _kernel_args(sol, prior, cfg, n):
    frac1 = model.neyman_fraction(prior.sigma1, prior.sigma0)
    prior_var = cfg.sigma ** 2 * cfg.nu2
    sd_h = math.sqrt(prior_var)
    upper, lower, n_max = _bands(sol, cfg, n)
    fixed = cfg.fixed_theta is not None
    t1, t0 = cfg.fixed_theta if fixed else (0.0, 0.0)
    return (n, cfg.theta0, sd_h, frac1, float(prior.m0), prior_var, upper, lower, n_max,
            fixed, float(t1), float(t0))


def run_trial(sol, prior, util, cfg, rep=0):
    """Simulate replication ``rep`` of a trial and record its posterior-mean path."""
    _check(sol, prior, cfg)
    cfg = cfg.resolved(sol)
    args = _kernel_args(sol, prior, cfg, cfg.n)
    path = np.empty(args[8] + 1)
    j, m, c1, t1, t0, cl, cap = _trial(np.uint64(cfg.seed), rep, *args, True, path)
    return TrialRun(tau_index=int(j), tau=j / cfg.n, decision=int(m >= 0), m_path=path[: j + 1].copy(),
                    q1_count=int(c1), q0_count=int(j - c1), theta=(float(t1), float(t0)),
                    clamped=int(cl), hit_cap=bool(cap))


@dataclass
class BatchResult:
    n: int
    tau: np.ndarray
    m_tau: np.ndarray
    theta: np.ndarray
    clamped: int
    capped: int

    @property
    def decision(self):
        return (self.m_tau >= 0).astype(float)

    @property
    def effect(self):
        return math.sqrt(self.n) * (self.theta[:, 0] - self.theta[:, 1])


def run_batch(sol, prior, cfg, reps):
    _check(sol, prior, cfg)
    cfg = cfg.resolved(sol)
    j, m, th, cl, cap = _batch(np.uint64(cfg.seed), int(reps), *_kernel_args(sol, prior, cfg, cfg.n))
    return BatchResult(n=cfg.n, tau=j / cfg.n, m_tau=m, theta=th, clamped=int(cl), capped=int(cap))


@dataclass
class ConvergenceRow:
    n: int
    alice_welfare: float
    alice_ratio: float
    alice_stderr: float
    bob_welfare: float
    bob_ratio: float
    bob_stderr: float
    approval_rate: float
    mean_tau: float
    clamped: int


@dataclass
class ConvergenceTable:
    rows: List[ConvergenceRow]
    v0: float
    bob_limit: float
    reps: int

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path):
        header = ["n", "alice_ratio", "bob_ratio", "stderr", "bob_stderr", "alice_welfare",
                  "bob_welfare", "approval_rate", "mean_tau", "clamped"]
        rows = ([r.n, r.alice_ratio, r.bob_ratio, r.alice_stderr / self.v0, r.bob_stderr / abs(self.bob_limit),
                 r.alice_welfare, r.bob_welfare, r.approval_rate, r.mean_tau, r.clamped] for r in self.rows)
        return write_csv(path, header, rows)

    def to_json(self, path):
        return write_json(path, {"schema_version": SCHEMA_VERSION, "kind": "bernoulli_convergence",
                                 "v0": self.v0, "bob_limit": self.bob_limit, "reps": self.reps,
                                 "rows": [r.__dict__ for r in self.rows]})


def welfare_convergence(sol, prior, util, cost, n_list, reps, seed=20250101, cfg=None, v0=None,
                        limit_paths=100_000):
    """Finite-sample welfare of both players against their limit benchmarks.

    Alice's welfare uses the drawn effect ``sqrt(n)(theta1 - theta0)`` and
    the trial's decision; Bob's adds the approval benefit and charges
    ``c`` per unit of ``tau``. Ratios are taken against ``v0`` (default: the
    RCT benchmark) and the limit-experiment Bob welfare simulated at
    ``xi = 0``.
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ValueError("n_list must not be empty")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly ascending")
    if reps < 2:
        raise ValueError("reps must be at least 2")
    cfg = cfg or TrialConfig(seed=seed)
    v0 = model.rct_welfare(prior, util.alpha) if v0 is None else float(v0)
    limit = simulate(sol, prior, util, cost, SimConfig(n_paths=limit_paths, seed=cfg.seed))
    bob_limit = limit.welfare_bob
    rows = []
    for n in n_list:
        b = run_batch(sol, prior, cfg.with_n(n), reps)
        d, eff = b.decision, b.effect
        alice = d * eff - (1 - util.alpha) * eff
        bob = util.B * d + util.gamma * (d * eff - (1 - util.alpha_prime) * eff) - cost.c * b.tau
        a_mean, a_se = float(alice.mean()), float(alice.std(ddof=1) / math.sqrt(reps))
        b_mean, b_se = float(bob.mean()), float(bob.std(ddof=1) / math.sqrt(reps))
        rows.append(ConvergenceRow(n=n, alice_welfare=a_mean, alice_ratio=a_mean / v0, alice_stderr=a_se,
                                   bob_welfare=b_mean, bob_ratio=b_mean / bob_limit, bob_stderr=b_se,
                                   approval_rate=float(d.mean()), mean_tau=float(b.tau.mean()),
                                   clamped=b.clamped))
    return ConvergenceTable(rows=rows, v0=v0, bob_limit=bob_limit, reps=int(reps))
