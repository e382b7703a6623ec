"""Scenario files: YAML documents describing one complete design problem.

A file may start from a built-in scenario (or another file) through a
``base:`` key and override any subset of fields; nested mappings merge key by
key. Validation errors carry the dotted field path and the line in the file
that set it.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from . import model
from .errors import NormalizationError, ScenarioError
from .model import CostSpec, PriorSpec, UtilitySpec
from .simulator import DEFAULT_THRESHOLDS, SimConfig
from .solver import GridSpec

BUILTINS = ("baseline-2025", "approval-only", "welfare-only")
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

_SCHEMA = {
    "name": None, "base": None, "description": None,
    "prior": {"m0", "varrho0", "varrho0_n", "sigma1", "sigma0", "cov"},
    "utility": {"alpha", "alpha_prime", "gamma", "B"},
    "cost": {"c", "structural"},
    "grid": {"n_rho", "m_bar_factor", "rho_max_frac"},
    "sim": {"n_paths", "seed", "xi", "rho_step", "thresholds"},
    "v0": {"mode", "value"},
    "calibration": {"final_paths", "rel_tol"},
    "bernoulli": {"theta0", "nu2", "xi", "T", "n_list", "reps"},
    "sweep": {"kind", "values"},
}
_STRUCTURAL_KEYS = {"C", "B_n", "gamma_n", "n"}


def _line_map(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    return out


def _deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _builtin_text(name):
    return resources.files("persuasive_design").joinpath("scenarios", f"{name}.yaml").read_text()


@dataclass
class _Source:
    data: Dict[str, Any]
    lines: Dict[str, int]
    origin: str


def _parse_text(text, origin):
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            line=None if mark is None else mark.line + 1, source=origin) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a mapping", line=1, source=origin)
    return _Source(data, _line_map(node) if node is not None else {}, origin)


def _resolve(src, search_dir, depth=0):
    """Merge ``src`` over its base chain."""
    if depth > 8:
        raise ScenarioError("base chain too deep (cycle?)", field="base", source=src.origin)
    base = src.data.get("base")
    if base is None:
        return src.data
    if not isinstance(base, str):
        raise ScenarioError("base must be a scenario name or file path", field="base",
                            line=src.lines.get("base"), source=src.origin)
    if base in BUILTINS:
        parent = _parse_text(_builtin_text(base), f"<builtin {base}>")
        parent_dir = search_dir
    else:
        path = (search_dir / base) if search_dir else Path(base)
        if not path.exists():
            raise ScenarioError(f"unknown base scenario {base!r}", field="base",
                                line=src.lines.get("base"), source=src.origin)
        parent = _parse_text(path.read_text(), str(path))
        parent_dir = path.parent
    merged = _deep_merge(_resolve(parent, parent_dir, depth + 1), src.data)
    merged.pop("base", None)
    return merged


class _Checker:
    def __init__(self, data, lines, origin):
        self.data, self.lines, self.origin = data, lines, origin

    def fail(self, msg, path):
        line = None
        p = path
        while p and line is None:
            line = self.lines.get(p)
            p = p.rpartition(".")[0]
        raise ScenarioError(msg, field=path, line=line, source=self.origin)

    def section(self, name):
        sec = self.data.get(name) or {}
        if not isinstance(sec, dict):
            self.fail("must be a mapping", name)
        allowed = _SCHEMA[name]
        for k in sec:
            if k not in allowed:
                self.fail(f"unknown key; expected one of {sorted(allowed)}", f"{name}.{k}")
        return sec

    def num(self, sec, name, key, default=None, required=False, integer=False):
        path = f"{name}.{key}"
        if key not in sec or sec[key] is None:
            if required:
                self.fail("required field missing", path)
            return default
        v = sec[key]
        if isinstance(v, bool):
            self.fail("expected a number", path)
        try:
            v = float(v)  # YAML 1.1 reads exponents without a sign (4.6e7) as strings
        except (TypeError, ValueError):
            self.fail(f"expected a number, got {sec[key]!r}", path)
        if integer:
            if v != int(v):
                self.fail("expected an integer", path)
            return int(v)
        return v

    def num_list(self, sec, name, key, default=None, integer=False):
        path = f"{name}.{key}"
        if key not in sec or sec[key] is None:
            return default
        vals = sec[key]
        if not isinstance(vals, list):
            self.fail("expected a list", path)
        return [self.num({key: v}, name, key, integer=integer) for v in vals]

    def build(self, label, fn, path):
        try:
            return fn()
        except ScenarioError:
            raise
        except (ValueError, NormalizationError) as exc:
            self.fail(str(exc), path)


@dataclass(frozen=True)
class BernoulliSettings:
    theta0: float = 0.5
    nu2: Optional[float] = None
    xi: Optional[float] = None
    T: Optional[float] = None
    n_list: tuple = (50, 100, 200, 400)
    reps: int = 10_000


@dataclass
class Scenario:
    name: str
    prior: PriorSpec
    util: UtilitySpec
    cost: CostSpec
    grid_params: Dict[str, float]
    simcfg: SimConfig
    v0_mode: str = "multiple"
    v0: float = 1.0
    final_paths: int = 1_000_000
    rel_tol: float = 1e-3
    bernoulli: BernoulliSettings = field(default_factory=BernoulliSettings)
    sweep_kind: Optional[str] = None
    sweep_values: Optional[list] = None
    description: str = ""
    source: str = ""

    @property
    def grid(self):
        return GridSpec.default(self.prior, **self.grid_params)

    def resolve_v0(self):
        if self.v0_mode == "absolute":
            return float(self.v0)
        return float(self.v0) * model.rct_welfare(self.prior, self.util.alpha)

    def to_dict(self):
        p, u, c, s = self.prior, self.util, self.cost, self.simcfg
        cost = {"c": c.c, "structural": None}
        if c.structural is not None:
            st = c.structural
            cost = {"c": None, "structural": {"C": st.C, "B_n": st.B_n, "gamma_n": st.gamma_n, "n": st.n}}
        b = self.bernoulli
        return {
            "name": self.name, "description": self.description,
            "prior": {"m0": p.m0, "varrho0": p.varrho0, "sigma1": p.sigma1, "sigma0": p.sigma0,
                      "cov": None if p.cov is None else [list(r) for r in p.cov]},
            "utility": {"alpha": u.alpha, "alpha_prime": u.alpha_prime, "gamma": u.gamma, "B": u.B},
            "cost": cost,
            "grid": dict(self.grid_params),
            "sim": {"n_paths": s.n_paths, "seed": s.seed, "xi": s.xi, "rho_step": s.rho_step,
                    "thresholds": list(s.thresholds)},
            "v0": {"mode": self.v0_mode, "value": self.v0},
            "calibration": {"final_paths": self.final_paths, "rel_tol": self.rel_tol},
            "bernoulli": {"theta0": b.theta0, "nu2": b.nu2, "xi": b.xi, "T": b.T,
                          "n_list": list(b.n_list), "reps": b.reps},
            "sweep": {"kind": self.sweep_kind, "values": self.sweep_values},
        }

    def metadata(self):
        d = self.to_dict()
        d["limit_c"] = self.cost.c
        d["c_over_B"] = self.cost.c / self.util.B if self.util.B > 0 else None
        d["rct_welfare"] = model.rct_welfare(self.prior, self.util.alpha)
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, seed=None, paths=None):
        from dataclasses import replace
        s = self.simcfg
        if seed is not None:
            s = replace(s, seed=int(seed))
        if paths is not None:
            s = replace(s, n_paths=int(paths))
        return replace(self, simcfg=s)

    @classmethod
    def from_dict(cls, data, lines=None, origin="<dict>"):
        return _build(data, lines or {}, origin)


def _build(data, lines, origin):
    ck = _Checker(data, lines, origin)
    for k in data:
        if k not in _SCHEMA:
            ck.fail(f"unknown top-level key; expected one of {sorted(_SCHEMA)}", k)
    name = data.get("name")
    if not isinstance(name, str) or not name:
        ck.fail("scenario needs a non-empty name", "name")
    if not _NAME_RE.match(name):
        ck.fail("name must use only letters, digits, '.', '_' and '-'", "name")

    pr = ck.section("prior")
    sigma1 = ck.num(pr, "prior", "sigma1", 0.5)
    sigma0 = ck.num(pr, "prior", "sigma0", 0.5)
    m0 = ck.num(pr, "prior", "m0", 0.0)
    for key, v in (("sigma1", sigma1), ("sigma0", sigma0), ("varrho0", ck.num(pr, "prior", "varrho0", 1.0))):
        if not v > 0:
            ck.fail(f"must be positive, got {v!r}", f"prior.{key}")
    cov = pr.get("cov")
    if cov is not None:
        if not (isinstance(cov, list) and len(cov) == 2 and all(isinstance(r, list) and len(r) == 2 for r in cov)):
            ck.fail("cov must be a 2x2 nested list", "prior.cov")
        prior = ck.build("prior", lambda: PriorSpec.from_cov(cov, sigma1, sigma0, m0=m0), "prior.cov")
    else:
        varrho0 = ck.num(pr, "prior", "varrho0")
        if varrho0 is None:
            vn = ck.num(pr, "prior", "varrho0_n")
            if vn is None:
                ck.fail("give varrho0 (limit units) or varrho0_n with a structural cost block", "prior.varrho0")
            st = (data.get("cost") or {}).get("structural") or {}
            if "n" not in st:
                ck.fail("varrho0_n needs cost.structural.n to scale it", "prior.varrho0_n")
            varrho0 = float(vn) * float(st["n"]) ** 0.5
        prior = ck.build("prior", lambda: PriorSpec(m0=m0, varrho0=varrho0, sigma1=sigma1, sigma0=sigma0), "prior")

    ut = ck.section("utility")
    util = ck.build("utility", lambda: UtilitySpec(
        alpha=ck.num(ut, "utility", "alpha", 1.0), alpha_prime=ck.num(ut, "utility", "alpha_prime", 1.0),
        gamma=ck.num(ut, "utility", "gamma", 0.0), B=ck.num(ut, "utility", "B", 1.0)), "utility")

    co = ck.section("cost")
    st = co.get("structural")
    c = ck.num(co, "cost", "c")
    if st is not None and c is not None:
        ck.fail("give either cost.c or cost.structural, not both", "cost")
    if st is not None:
        if not isinstance(st, dict):
            ck.fail("must be a mapping", "cost.structural")
        for k in st:
            if k not in _STRUCTURAL_KEYS:
                ck.fail(f"unknown key; expected one of {sorted(_STRUCTURAL_KEYS)}", f"cost.structural.{k}")
        vals = {k: ck.num(st, "cost.structural", k, required=k in ("C", "B_n")) for k in _STRUCTURAL_KEYS}
        vals["gamma_n"] = vals["gamma_n"] or 0.0
        vals["n"] = vals["n"] or 300.0
        if util.B != 1.0:
            ck.fail("structural costs are normalized to B = 1; set utility.B to 1 or give cost.c directly",
                    "utility.B")
        cost = ck.build("cost", lambda: CostSpec.from_structural(vals["C"], vals["B_n"], vals["gamma_n"], vals["n"]),
                        "cost.structural.B_n")
        if vals["gamma_n"] and util.gamma == 0.0:
            lp = model.scale_params(vals["C"], vals["B_n"], vals["gamma_n"], vals["n"])
            util = UtilitySpec(alpha=util.alpha, alpha_prime=util.alpha_prime, gamma=lp.gamma, B=util.B)
    elif c is not None:
        cost = ck.build("cost", lambda: CostSpec(c=c), "cost.c")
    else:
        ck.fail("cost needs either c or structural", "cost")

    gr = ck.section("grid")
    grid_params = {"n_rho": ck.num(gr, "grid", "n_rho", 4000, integer=True),
                   "m_bar_factor": ck.num(gr, "grid", "m_bar_factor", 6.0),
                   "rho_max_frac": ck.num(gr, "grid", "rho_max_frac", 1 - 1e-3)}
    ck.build("grid", lambda: GridSpec.default(prior, **grid_params).check_prior(prior), "grid")

    sm = ck.section("sim")
    thresholds = ck.num_list(sm, "sim", "thresholds", list(DEFAULT_THRESHOLDS))
    simcfg = ck.build("sim", lambda: SimConfig(
        n_paths=ck.num(sm, "sim", "n_paths", 100_000, integer=True),
        seed=ck.num(sm, "sim", "seed", 20250101, integer=True),
        xi=ck.num(sm, "sim", "xi", 0.0), rho_step=ck.num(sm, "sim", "rho_step"),
        thresholds=tuple(thresholds)), "sim")

    v0s = ck.section("v0")
    mode = v0s.get("mode", "multiple")
    if mode not in ("multiple", "absolute"):
        ck.fail("mode must be 'multiple' or 'absolute'", "v0.mode")
    v0 = ck.num(v0s, "v0", "value", 1.0)

    cal = ck.section("calibration")
    final_paths = ck.num(cal, "calibration", "final_paths", 1_000_000, integer=True)
    rel_tol = ck.num(cal, "calibration", "rel_tol", 1e-3)
    if final_paths < 1:
        ck.fail("must be positive", "calibration.final_paths")
    if not 0 < rel_tol < 1:
        ck.fail("must lie in (0, 1)", "calibration.rel_tol")

    be = ck.section("bernoulli")
    bern = BernoulliSettings(
        theta0=ck.num(be, "bernoulli", "theta0", 0.5), nu2=ck.num(be, "bernoulli", "nu2"),
        xi=ck.num(be, "bernoulli", "xi"), T=ck.num(be, "bernoulli", "T"),
        n_list=tuple(ck.num_list(be, "bernoulli", "n_list", [50, 100, 200, 400], integer=True)),
        reps=ck.num(be, "bernoulli", "reps", 10_000, integer=True))
    if not 0 < bern.theta0 < 1:
        ck.fail("must lie in (0, 1)", "bernoulli.theta0")

    sw = ck.section("sweep")
    kind = sw.get("kind")
    if kind is not None and kind not in ("V0-multiple", "B", "nu0"):
        ck.fail("kind must be one of V0-multiple, B, nu0", "sweep.kind")
    values = ck.num_list(sw, "sweep", "values")

    return Scenario(name=name, prior=prior, util=util, cost=cost, grid_params=grid_params, simcfg=simcfg,
                    v0_mode=mode, v0=v0, final_paths=final_paths, rel_tol=rel_tol, bernoulli=bern,
                    sweep_kind=kind, sweep_values=values, description=str(data.get("description") or ""),
                    source=origin)


def load_scenario(ref):
    """Load a built-in by name or a YAML file by path."""
    if isinstance(ref, str) and ref in BUILTINS:
        src = _parse_text(_builtin_text(ref), f"<builtin {ref}>")
        search = None
    else:
        path = Path(ref)
        if not path.exists():
            raise ScenarioError(f"scenario {str(ref)!r} is neither a built-in ({', '.join(BUILTINS)}) nor a file")
        src = _parse_text(path.read_text(), str(path))
        search = path.parent
    data = _resolve(src, search)
    # lines refer to the top file; inherited fields fall back to the nearest parent key
    return _build(data, src.lines, src.origin)


def loads_scenario(text, origin="<string>"):
    src = _parse_text(text, origin)
    return _build(_resolve(src, None), src.lines, origin)
