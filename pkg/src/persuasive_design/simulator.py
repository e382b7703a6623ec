"""Monte Carlo over the posterior-mean process in resolved-variance time.

In ``rho`` units the posterior mean is a standard Brownian motion started at
``m0``, so a path is a Gaussian random walk with step variance ``rho_step``.
Each path draws its normals from a counter-based stream keyed by
``(seed, path index, step index)``; results therefore do not depend on how
paths are scheduled.

Far from both boundaries the kernel takes a single Gaussian jump covering
several steps. A jump is only taken when the path sits more than ``z``
jump standard deviations inside the band over the whole jump window, so the
chance of skipping over an exit is below ``1e-14`` per jump at the default
``z = 8``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import model
from ._io import SCHEMA_VERSION, write_csv, write_json
from ._rng import normal_at, stream_key

DEFAULT_THRESHOLDS = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
DEFAULT_STEPS_PER_VARRHO0 = 20000
HIST_BINS = 200


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    seed: int = 20250101
    rho_step: Optional[float] = None
    xi: float = 0.0
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    jump_levels: Tuple[int, ...] = (512, 64, 8)
    jump_z: float = 8.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.rho_step is not None and not self.rho_step > 0:
            raise ValueError("rho_step must be positive")
        if any(k < 2 for k in self.jump_levels):
            raise ValueError("jump levels must be at least 2 steps")
        if self.jump_z < 6:
            raise ValueError("jump_z below 6 lets paths skip over boundary crossings")

    def step_for(self, prior):
        h = prior.varrho0 / DEFAULT_STEPS_PER_VARRHO0 if self.rho_step is None else self.rho_step
        if h > prior.varrho0 / 100:
            raise ValueError(f"rho_step must not exceed varrho0/100 = {prior.varrho0 / 100!r}")
        return h


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def of(cls, x, bins=HIST_BINS):
        counts, edges = np.histogram(x, bins=bins)
        return cls(edges=edges, counts=counts)

    def rows(self):
        return zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts.tolist())


@dataclass
class SimResult:
    n_paths: int
    mean_tau: float
    median_tau: float
    frac_stop_before: Dict[float, float]
    welfare_alice: float
    welfare_bob: float
    approval_rate: float
    mean_m_tau: float
    stderr: Dict[str, float]
    hist_tau: Histogram
    hist_m_tau: Histogram
    alpha: float
    seed: int
    rho_step: float
    xi: float
    tau: Optional[np.ndarray] = field(default=None, repr=False)
    m_tau: Optional[np.ndarray] = field(default=None, repr=False)
    rho_tau: Optional[np.ndarray] = field(default=None, repr=False)

    def martingale_z(self, m0=0.0):
        se = self.stderr["mean_m_tau"]
        return abs(self.mean_m_tau - m0) / se if se > 0 else 0.0

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sim_result",
            "n_paths": self.n_paths, "seed": self.seed, "rho_step": self.rho_step, "xi": self.xi,
            "alpha": self.alpha,
            "mean_tau": self.mean_tau, "median_tau": self.median_tau,
            "frac_stop_before": {repr(k): v for k, v in self.frac_stop_before.items()},
            "welfare_alice": self.welfare_alice, "welfare_bob": self.welfare_bob,
            "approval_rate": self.approval_rate, "mean_m_tau": self.mean_m_tau,
            "stderr": dict(self.stderr),
            "hist_tau": {"edges": self.hist_tau.edges.tolist(), "counts": self.hist_tau.counts.tolist()},
            "hist_m_tau": {"edges": self.hist_m_tau.edges.tolist(), "counts": self.hist_m_tau.counts.tolist()},
        }

    @classmethod
    def from_dict(cls, d):
        def hist(h):
            return Histogram(np.asarray(h["edges"], float), np.asarray(h["counts"], np.int64))
        return cls(n_paths=d["n_paths"], mean_tau=d["mean_tau"], median_tau=d["median_tau"],
                   frac_stop_before={float(k): v for k, v in d["frac_stop_before"].items()},
                   welfare_alice=d["welfare_alice"], welfare_bob=d["welfare_bob"],
                   approval_rate=d["approval_rate"], mean_m_tau=d["mean_m_tau"],
                   stderr=dict(d["stderr"]), hist_tau=hist(d["hist_tau"]),
                   hist_m_tau=hist(d["hist_m_tau"]), alpha=d["alpha"], seed=d["seed"],
                   rho_step=d["rho_step"], xi=d["xi"])

    def to_json(self, path):
        return write_json(path, self.to_dict())

    def write_histograms(self, tau_path, m_path):
        write_csv(tau_path, ["bin_left", "bin_right", "count"], self.hist_tau.rows())
        write_csv(m_path, ["bin_left", "bin_right", "count"], self.hist_m_tau.rows())


@numba.njit(cache=True)
def _paths_kernel(seed, n_paths, h, upper, lower, m0, levels, win_upper, win_lower, z):
    n_steps = upper.shape[0]
    k_out = np.empty(n_paths, np.int64)
    m_out = np.empty(n_paths)
    sh = math.sqrt(h)
    n_levels = levels.shape[0]
    for p in range(n_paths):
        key = stream_key(seed, p)
        x = m0
        k = 0
        while True:
            if x >= upper[k] or x <= lower[k] or k == n_steps - 1:
                break
            step = 1
            for l in range(n_levels):
                K = levels[l]
                if k + K < n_steps:
                    s = z * sh * math.sqrt(K)
                    if win_upper[l, k] - x > s and x - win_lower[l, k] > s:
                        step = K
                        break
            x += sh * math.sqrt(step) * normal_at(key, k)
            k += step
        k_out[p] = k
        m_out[p] = x
    return k_out, m_out


def _window_extremes(upper, lower, levels):
    n = upper.size
    wu = np.full((len(levels), n), -np.inf)
    wl = np.full((len(levels), n), np.inf)
    for i, K in enumerate(levels):
        if K + 1 <= n:
            wu[i, : n - K] = sliding_window_view(upper, K + 1).min(axis=1)
            wl[i, : n - K] = sliding_window_view(lower, K + 1).max(axis=1)
    return wu, wl


def simulation_bands(sol, cfg, prior):
    """Per-step ``(rho, upper, lower)`` arrays the kernel stops against."""
    h = cfg.step_for(prior)
    n_steps = int(math.floor(sol.rho_grid[-1] / h * (1 + 1e-12))) + 1
    rho = np.arange(n_steps) * h
    upper = sol.b_plus_at_rho(rho) + cfg.xi
    lower = sol.b_minus_at_rho(rho)
    return rho, upper, lower


def run_paths(sol, prior, cfg):
    """Raw ``(rho_tau, m_tau)`` for every path."""
    sol.check_prior(prior)
    h = cfg.step_for(prior)
    rho, upper, lower = simulation_bands(sol, cfg, prior)
    levels = np.array(cfg.jump_levels, np.int64)
    wu, wl = _window_extremes(upper, lower, cfg.jump_levels)
    k, m = _paths_kernel(np.uint64(cfg.seed), cfg.n_paths, h, upper, lower, float(prior.m0),
                         levels, wu, wl, float(cfg.jump_z))
    return k * h, m


def _mean_se(x):
    x = np.asarray(x, float)
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.sum(x) / n), se  # np.sum uses pairwise summation


def summarize(tau, m_tau, rho_tau, prior, util, cost, cfg, h):
    alice = np.asarray(model.s_alpha(m_tau, util.alpha))
    approve = (m_tau >= 0).astype(float)
    bob = util.B * approve + util.gamma * np.asarray(model.s_alpha(m_tau, util.alpha_prime)) - cost.c * tau
    stats = {name: _mean_se(v) for name, v in
             (("mean_tau", tau), ("welfare_alice", alice), ("welfare_bob", bob),
              ("approval_rate", approve), ("mean_m_tau", m_tau))}
    frac = {}
    for thr in cfg.thresholds:
        f, se = _mean_se((tau < thr).astype(float))
        frac[float(thr)] = f
        stats[f"frac_stop_before[{thr!r}]"] = (f, se)
    return SimResult(
        n_paths=int(tau.size), mean_tau=stats["mean_tau"][0], median_tau=float(np.median(tau)),
        frac_stop_before=frac, welfare_alice=stats["welfare_alice"][0],
        welfare_bob=stats["welfare_bob"][0], approval_rate=stats["approval_rate"][0],
        mean_m_tau=stats["mean_m_tau"][0], stderr={k: v[1] for k, v in stats.items()},
        hist_tau=Histogram.of(tau), hist_m_tau=Histogram.of(m_tau), alpha=float(util.alpha),
        seed=int(cfg.seed), rho_step=float(h), xi=float(cfg.xi), tau=tau, m_tau=m_tau, rho_tau=rho_tau)


def simulate(sol, prior, util, cost, cfg=None):
    """Stopping-time and stopping-value distributions under ``sol``'s boundaries.

    A path stops at the first step where ``m <= b_minus`` or
    ``m >= b_plus + xi``, or at the last step below ``rho_max``. Calendar
    time is recovered from the stopping ``rho`` through the inverse time
    change.
    """
    cfg = cfg or SimConfig()
    rho_tau, m_tau = run_paths(sol, prior, cfg)
    tau = np.asarray(model.time_change_inverse(rho_tau, prior), float)
    return summarize(tau, m_tau, rho_tau, prior, util, cost, cfg, cfg.step_for(prior))


@dataclass(frozen=True)
class RCTComparison:
    sample_size_reduction: float
    welfare_ratio: float
    rct_welfare: float
    savings: Optional[float]

    def to_dict(self):
        return asdict(self)


def rct_compare(sim, prior, util, cost=None):
    """Adaptive design versus the fixed ``t = 1`` trial.

    Savings in currency need the structural cost ``C`` and scale ``n``; they
    are ``None`` when ``cost`` carries no structural block.
    """
    v0 = model.rct_welfare(prior, alpha=util.alpha)
    reduction = 1.0 - sim.mean_tau
    savings = None
    if cost is not None and cost.structural is not None:
        st = cost.structural
        savings = st.C * st.n * reduction
    return RCTComparison(sample_size_reduction=reduction,
                         welfare_ratio=sim.welfare_alice / v0 if v0 > 0 else float("nan"),
                         rct_welfare=v0, savings=savings)
