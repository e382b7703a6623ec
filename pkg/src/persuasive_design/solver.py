"""Backward induction for the asymmetric stopping boundaries.

The posterior mean is a standard Brownian motion once time is measured in
resolved variance ``rho``. A binomial lattice in ``(rho, m)`` with
``delta_m = sqrt(delta_rho)`` approximates it, and the stopping set of each
row gives the approval boundary ``b_plus`` (first stopping point at or above
zero) and the rejection boundary ``b_minus`` (last stopping point below zero).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import model
from ._io import SCHEMA_VERSION, write_csv, write_json
from .errors import GridEscalationError, GridResolutionError, MismatchError
from .model import CostSpec, PriorSpec, UtilitySpec

DEFAULT_N_RHO = 4000
DEFAULT_M_BAR_FACTOR = 6.0
DEFAULT_RHO_MAX_FRAC = 1.0 - 1e-3
ESCALATION_FACTOR = 1.5


@dataclass(frozen=True)
class GridSpec:
    """Lattice steps. ``delta_m`` is tied to ``delta_rho`` and may be omitted."""

    delta_rho: float
    m_bar: float
    rho_max: float
    delta_m: Optional[float] = None

    def __post_init__(self):
        if not self.delta_rho > 0:
            raise ValueError("delta_rho must be positive")
        dm = math.sqrt(self.delta_rho)
        if self.delta_m is None:
            object.__setattr__(self, "delta_m", dm)
        elif not math.isclose(self.delta_m, dm, rel_tol=1e-12):
            raise ValueError(f"delta_m must equal sqrt(delta_rho) = {dm!r}, got {self.delta_m!r}")
        if self.m_bar < 10 * self.delta_m:
            raise ValueError("m_bar must be at least 10 * delta_m")
        if not self.rho_max > 0:
            raise ValueError("rho_max must be positive")

    @classmethod
    def default(cls, prior, n_rho=DEFAULT_N_RHO, m_bar_factor=DEFAULT_M_BAR_FACTOR,
                rho_max_frac=DEFAULT_RHO_MAX_FRAC):
        return cls(delta_rho=prior.varrho0 / n_rho,
                   m_bar=m_bar_factor * math.sqrt(prior.varrho0),
                   rho_max=rho_max_frac * prior.varrho0)

    def check_prior(self, prior):
        if not self.rho_max < prior.varrho0:
            raise ValueError(f"rho_max={self.rho_max!r} must be below varrho0={prior.varrho0!r}")

    @property
    def n_rows(self):
        return int(math.floor(self.rho_max / self.delta_rho * (1 + 1e-12))) + 1

    @property
    def half_cells(self):
        return int(math.ceil(self.m_bar / self.delta_m - 1e-9))

    def rho_nodes(self):
        return np.arange(self.n_rows) * self.delta_rho

    def m_nodes(self):
        J = self.half_cells
        return np.arange(-J, J + 1) * self.delta_m

    def widened(self, factor=ESCALATION_FACTOR):
        return replace(self, m_bar=self.m_bar * factor)


@dataclass
class ValueTable:
    """Value function on the lattice, plus what is needed to read boundaries off it."""

    V: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    stop: np.ndarray
    grid: GridSpec
    prior: PriorSpec
    util: UtilitySpec
    cost: CostSpec
    lam: float
    alpha: float

    def stopping_mask(self):
        # V = max(stop, cont) exactly, so equality marks stop >= cont
        return self.V == self.stop[None, :]


@dataclass
class BoundarySolution:
    rho_grid: np.ndarray
    t_grid: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray
    t_star: float
    lam: float
    B: float
    c: float
    grid: GridSpec
    prior: PriorSpec
    alpha: float = 0.5
    gamma: float = 0.0
    value_at_origin: float = float("nan")
    attempted_m_bar: tuple = ()
    value_table: Optional[ValueTable] = field(default=None, repr=False)

    @property
    def delta_m(self):
        return self.grid.delta_m

    def b_plus_at_rho(self, rho):
        return np.interp(rho, self.rho_grid, self.b_plus)

    def b_minus_at_rho(self, rho):
        return np.interp(rho, self.rho_grid, self.b_minus)

    def b_plus_at_t(self, t):
        return self.b_plus_at_rho(model.time_change_psi(t, self.prior))

    def b_minus_at_t(self, t):
        return self.b_minus_at_rho(model.time_change_psi(t, self.prior))

    def check_prior(self, prior):
        if not (math.isclose(prior.varrho0, self.prior.varrho0, rel_tol=1e-12)
                and math.isclose(prior.sigma, self.prior.sigma, rel_tol=1e-12)
                and prior.cov == self.prior.cov):
            raise MismatchError(
                f"solution built for varrho0={self.prior.varrho0!r}, sigma={self.prior.sigma!r}; "
                f"got varrho0={prior.varrho0!r}, sigma={prior.sigma!r}")

    def metadata(self):
        return {
            "lambda": self.lam, "B": self.B, "c": self.c, "alpha": self.alpha, "gamma": self.gamma,
            "delta_rho": self.grid.delta_rho, "delta_m": self.grid.delta_m,
            "m_bar": self.grid.m_bar, "rho_max": self.grid.rho_max,
            "t_star": self.t_star, "value_at_origin": self.value_at_origin,
            "attempted_m_bar": list(self.attempted_m_bar),
        }

    def to_dict(self):
        p = self.prior
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "boundary_solution",
            **self.metadata(),
            "prior": {"m0": p.m0, "varrho0": p.varrho0, "sigma1": p.sigma1, "sigma0": p.sigma0,
                      "cov": None if p.cov is None else [list(r) for r in p.cov],
                      "arms_swapped": p.arms_swapped},
            "rho": self.rho_grid.tolist(), "t": self.t_grid.tolist(),
            "b_plus": self.b_plus.tolist(), "b_minus": self.b_minus.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        pd = d["prior"]
        cov = None if pd["cov"] is None else tuple(tuple(r) for r in pd["cov"])
        prior = PriorSpec(m0=pd["m0"], varrho0=pd["varrho0"], sigma1=pd["sigma1"],
                          sigma0=pd["sigma0"], cov=cov, arms_swapped=pd["arms_swapped"])
        grid = GridSpec(delta_rho=d["delta_rho"], m_bar=d["m_bar"], rho_max=d["rho_max"],
                        delta_m=d["delta_m"])
        return cls(rho_grid=np.asarray(d["rho"], float), t_grid=np.asarray(d["t"], float),
                   b_plus=np.asarray(d["b_plus"], float), b_minus=np.asarray(d["b_minus"], float),
                   t_star=float(d["t_star"]), lam=d["lambda"], B=d["B"], c=d["c"],
                   grid=grid, prior=prior, alpha=d["alpha"], gamma=d.get("gamma", 0.0),
                   value_at_origin=float(d["value_at_origin"]),
                   attempted_m_bar=tuple(d.get("attempted_m_bar", ())))

    def to_json(self, path):
        return write_json(path, self.to_dict())

    def to_csv(self, path):
        rows = zip(self.rho_grid.tolist(), self.t_grid.tolist(), self.b_plus.tolist(), self.b_minus.tolist())
        return write_csv(path, ["rho", "t", "b_plus", "b_minus"], rows)


def stop_payoff(m, B, lam, alpha):
    return B * (np.asarray(m) >= 0) + lam * model.s_alpha(m, alpha)


def effective_lambda(lam, util):
    # gamma * S_alpha' differs from gamma * S_alpha by an affine term, which
    # leaves the stopping set unchanged; it simply adds to the multiplier
    return float(lam) + util.gamma


def _check_inputs(prior, util, lam, cost, grid):
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam!r}")
    grid.check_prior(prior)


def _row_costs(prior, cost, rho):
    return cost.c * np.diff(model.time_change_inverse(rho, prior))


def _backward(stop, costs, m_is_pos, keep):
    """Return boundary indices per row and, optionally, the full value table."""
    n_rows = costs.shape[0] + 1
    nm = stop.shape[0]
    ip = np.empty(n_rows, np.int64)
    im = np.empty(n_rows, np.int64)
    table = np.empty((n_rows, nm)) if keep else None
    neg_idx = np.flatnonzero(~m_is_pos)
    first_pos = int(np.flatnonzero(m_is_pos)[0])
    V = stop.copy()
    cont = np.empty(nm)
    cont[0] = cont[-1] = -np.inf

    def record(i, V):
        s = V == stop
        ip[i] = first_pos + int(np.argmax(s[first_pos:]))
        im[i] = neg_idx[s[neg_idx]].max()
        if keep:
            table[i] = V

    record(n_rows - 1, V)
    for i in range(n_rows - 2, -1, -1):
        cont[1:-1] = 0.5 * (V[2:] + V[:-2]) - costs[i]
        V = np.maximum(stop, cont)
        record(i, V)
    return ip, im, V, table


def solve_value(prior, util, lam, cost, grid, alpha=0.5, check_edges=True):
    """Value table by backward induction from a forced stop at ``rho_max``.

    The stop payoff is ``B 1{m >= 0} + lam S_alpha(m)``; the continuation
    value averages the two lattice successors and pays the sampling cost of
    the time elapsed over the row. The outermost m-nodes always stop. With
    ``check_edges`` a boundary pinned to the edge at ``rho = 0`` raises
    :class:`GridEscalationError`.
    """
    _check_inputs(prior, util, lam, cost, grid)
    rho, m = grid.rho_nodes(), grid.m_nodes()
    stop = stop_payoff(m, util.B, effective_lambda(lam, util), alpha)
    ip, im, _, table = _backward(stop, _row_costs(prior, cost, rho), m >= 0, keep=True)
    if check_edges:
        _raise_on_edge(ip, im, m.size, grid)
    return ValueTable(V=table, rho=rho, m=m, stop=stop, grid=grid, prior=prior, util=util,
                      cost=cost, lam=float(lam), alpha=float(alpha))


def _raise_on_edge(ip, im, nm, grid):
    if ip[0] >= nm - 1 or im[0] <= 0:
        raise GridEscalationError("stopping boundary touches the edge of the m-grid at rho = 0",
                                  [grid.m_bar])


def _check_monotone(b_plus, b_minus, delta_m):
    slack = delta_m * (1 + 1e-9)
    up = np.diff(b_plus)
    down = np.diff(-b_minus)
    if up.max(initial=0.0) > slack or down.max(initial=0.0) > slack:
        i = int(np.argmax(np.maximum(up, down)))
        raise GridResolutionError(
            f"boundaries increase by more than one m-cell between rows {i} and {i + 1}; refine the grid")


def _first_zero_time(t_grid, b_plus, B, lam):
    if lam == 0:
        return 0.0
    if B == 0:
        return math.inf
    hit = np.flatnonzero(b_plus <= 0)
    return float(t_grid[hit[0]]) if hit.size else math.inf


def _assemble(prior, util, lam, cost, grid, alpha, m, rho, ip, im, V0, table, attempted):
    t_grid = np.asarray(model.time_change_inverse(rho, prior), float)
    b_plus, b_minus = m[ip].copy(), m[im].copy()
    b_plus[b_plus == 0] = 0.0  # avoid -0.0 in exports
    _check_monotone(b_plus, b_minus, grid.delta_m)
    j0 = int(np.argmin(np.abs(m - prior.m0)))
    return BoundarySolution(
        rho_grid=rho, t_grid=t_grid, b_plus=b_plus, b_minus=b_minus,
        t_star=_first_zero_time(t_grid, b_plus, util.B, effective_lambda(lam, util)), lam=float(lam), B=float(util.B),
        c=float(cost.c), grid=grid, prior=prior, alpha=float(alpha), gamma=float(util.gamma),
        value_at_origin=float(V0[j0]), attempted_m_bar=tuple(attempted), value_table=table)


def extract_boundaries(value_table, grid=None, util=None, lam=None):
    """Read ``b_plus``/``b_minus`` off a value table (weak inequality defines stopping)."""
    vt = value_table
    grid = grid or vt.grid
    util = util or vt.util
    lam = vt.lam if lam is None else lam
    mask = vt.stopping_mask()
    pos = vt.m >= 0
    first_pos = int(np.flatnonzero(pos)[0])
    neg = np.flatnonzero(~pos)
    ip = first_pos + np.argmax(mask[:, first_pos:], axis=1)
    im = np.array([neg[row[neg]].max() for row in mask])
    return _assemble(vt.prior, util, lam, vt.cost, grid, vt.alpha, vt.m, vt.rho, ip, im,
                     vt.V[0], vt, (grid.m_bar,))


def solve_boundaries(prior, util, lam, cost, grid=None, alpha=0.5, max_escalations=4,
                     keep_table=False):
    """Solve and extract in one pass, widening ``m_bar`` by 1.5x if the grid is too narrow."""
    grid = grid or GridSpec.default(prior)
    attempted = []
    for _ in range(max_escalations + 1):
        _check_inputs(prior, util, lam, cost, grid)
        attempted.append(grid.m_bar)
        rho, m = grid.rho_nodes(), grid.m_nodes()
        stop = stop_payoff(m, util.B, effective_lambda(lam, util), alpha)
        ip, im, V0, table = _backward(stop, _row_costs(prior, cost, rho), m >= 0, keep_table)
        if ip[0] >= m.size - 1 or im[0] <= 0:
            grid = grid.widened()
            continue
        vt = None
        if keep_table:
            vt = ValueTable(V=table, rho=rho, m=m, stop=stop, grid=grid, prior=prior, util=util,
                            cost=cost, lam=float(lam), alpha=float(alpha))
        return _assemble(prior, util, lam, cost, grid, alpha, m, rho, ip, im, V0, vt, attempted)
    raise GridEscalationError("stopping boundary still touches the m-grid edge at rho = 0", attempted)


@dataclass(frozen=True)
class TStarReport:
    """First time ``b_plus`` hits zero, with the rejection level found there."""

    t_star: float
    b_minus_at_t_star: float
    target: float
    cells_off: float
    slack_cells: float

    @property
    def consistent(self):
        return bool(self.cells_off <= self.slack_cells)

    def __float__(self):
        return float(self.t_star)


def find_t_star(sol, B=None, lam=None, slack_cells=3.0):
    """Truncation time and the check of ``b_minus`` there against ``-B/lambda``.

    ``B = 0`` gives an infinite time and ``lambda = 0`` gives zero; in both
    cases the rejection-level check is not defined and is reported as NaN.
    """
    B = sol.B if B is None else B
    lam = sol.lam + sol.gamma if lam is None else lam
    if B < 0 or lam < 0:
        raise ValueError("B and lambda must be non-negative")
    t_star = _first_zero_time(sol.t_grid, sol.b_plus, B, lam)
    nan = float("nan")
    if not (0 < t_star < math.inf):
        return TStarReport(t_star, nan, nan, nan, slack_cells)
    i = int(np.searchsorted(sol.t_grid, t_star))
    target = -B / lam
    bm = float(sol.b_minus[i])
    return TStarReport(t_star, bm, target, abs(bm - target) / sol.delta_m, slack_cells)


@dataclass(frozen=True)
class LipschitzReport:
    max_slope: float
    bound: float

    @property
    def ok(self):
        return bool(self.max_slope <= self.bound)


def lipschitz_check(sol):
    """Largest rate of change of ``b_minus`` in calendar time, net of one cell of lattice noise.

    The bound is ``2 varrho0 |b_minus(0)| / sigma^2``.
    """
    b, t = sol.b_minus, sol.t_grid
    change = np.flatnonzero(np.diff(b) != 0)
    # each level of the staircase spans [start, end]; compare the end of one level to the start of a later one
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [b.size - 1]))
    worst = 0.0
    for a in range(starts.size):
        later = starts[a + 1:]
        if later.size == 0:
            break
        dt = t[later] - t[ends[a]]
        gap = np.abs(b[later] - b[ends[a]]) - sol.delta_m
        ok = dt > 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.where(ok, gap, 0.0) / np.where(ok, dt, 1.0))))
    bound = 2.0 * sol.prior.varrho0 * abs(b[0]) / sol.prior.sigma_sq
    return LipschitzReport(max_slope=worst, bound=bound)


def forward_occupancy(sol, n_rows=None):
    """Push lattice mass forward through the solved stopping set.

    Returns ``(p_approve, p_reject, mean_t)`` for a start at ``m0``;
    an independent check on the Monte Carlo simulator at lattice resolution.
    """
    g = sol.grid
    m = g.m_nodes()
    rows = sol.rho_grid.size if n_rows is None else n_rows
    p = np.zeros(m.size)
    p[int(np.argmin(np.abs(m - sol.prior.m0)))] = 1.0
    approve = reject = 0.0
    mean_t = 0.0
    for i in range(rows):
        stop_up = m >= sol.b_plus[i] - 1e-12
        stop_dn = m <= sol.b_minus[i] + 1e-12
        if i == rows - 1:
            stop_up = m >= 0
            stop_dn = m < 0
        a, r = p[stop_up].sum(), p[stop_dn].sum()
        approve += a
        reject += r
        mean_t += (a + r) * sol.t_grid[i]
        p = np.where(stop_up | stop_dn, 0.0, p)
        if i < rows - 1:
            q = np.zeros_like(p)
            q[1:] += 0.5 * p[:-1]
            q[:-1] += 0.5 * p[1:]
            p = q
    return approve, reject, mean_t
