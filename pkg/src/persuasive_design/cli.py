"""Command-line front end.

    persuasive-design [--scenario S] [--out DIR] [--seed N] [--paths N] [--quiet] COMMAND ...

``S`` is a built-in scenario name or a YAML file. Every command writes its
artifacts under ``DIR`` (default ``./out/<scenario name>``).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import model
from ._io import read_json, write_json
from .bernoulli import TrialConfig, welfare_convergence
from .calibrate import calibrate_lambda, interpolate_crossing, sweep
from .errors import (GridEscalationError, GridResolutionError, InfeasibleWelfareError, MismatchError,
                     ScenarioError)
from .scenario import BUILTINS, load_scenario
from .simulator import SimConfig, rct_compare, simulate
from .solver import BoundarySolution, find_t_star, solve_boundaries

log = logging.getLogger("persuasive_design")

SOLUTION_CACHE = "solution.json"
CALIBRATION_FILE = "calibration.json"


class _Ctx:
    def __init__(self, args):
        self.quiet = args.quiet
        sc = load_scenario(args.scenario)
        self.scenario = sc.with_overrides(seed=args.seed, paths=args.paths)
        self.out = Path(args.out) if args.out else Path("out") / self.scenario.name
        self.out.mkdir(parents=True, exist_ok=True)

    def say(self, msg):
        if not self.quiet:
            print(msg)

    def notice(self, msg):
        if not self.quiet:
            print(f"notice: {msg}", file=sys.stderr)


def _print_boundaries(ctx, sol):
    ts = find_t_star(sol)
    ctx.say(f"lambda = {sol.lam:.6g}")
    ctx.say(f"t_star = {ts.t_star:.4f}")
    if ts.t_star not in (0.0, float("inf")):
        ctx.say(f"b_minus(t_star) = {ts.b_minus_at_t_star:.4f} (-B/lambda = {ts.target:.4f}, "
                f"{ts.cells_off:.1f} cells apart)")
    for t in (0.0, 0.5, 1.0):
        ctx.say(f"t = {t:<4}  b_plus = {float(sol.b_plus_at_t(t)):+.4f}  b_minus = {float(sol.b_minus_at_t(t)):+.4f}")


def _write_solution(ctx, sol, stem="boundaries"):
    sol.to_csv(ctx.out / f"{stem}.csv")
    write_json(ctx.out / f"{stem}.json", {"kind": "boundary_metadata", "scenario": ctx.scenario.name,
                                          **sol.metadata()})


def _calibrate(ctx):
    sc = ctx.scenario
    v0 = sc.resolve_v0()
    res = calibrate_lambda(v0, sc.prior, sc.util, sc.cost, sc.grid, sc.simcfg,
                           final_paths=max(sc.final_paths, sc.simcfg.n_paths) if sc.final_paths else None,
                           rel_tol=sc.rel_tol)
    body = {"scenario": sc.name, "fingerprint": sc.fingerprint(), **res.to_dict(),
            "scenario_metadata": sc.metadata()}
    write_json(ctx.out / CALIBRATION_FILE, body)
    cache = res.sol.to_dict()
    cache["fingerprint"] = sc.fingerprint()
    write_json(ctx.out / SOLUTION_CACHE, cache)
    _write_solution(ctx, res.sol)
    return res


def _cached_solution(ctx):
    path = ctx.out / SOLUTION_CACHE
    if path.exists():
        d = read_json(path)
        if d.get("fingerprint") == ctx.scenario.fingerprint():
            return BoundarySolution.from_dict(d)
        ctx.notice(f"{path} belongs to a different scenario configuration; recalibrating")
    else:
        ctx.notice("no cached calibration found; running calibrate first")
    return _calibrate(ctx).sol


def cmd_solve(ctx, args):
    sc = ctx.scenario
    if args.lam is None:
        sol = _cached_solution(ctx)
    else:
        sol = solve_boundaries(sc.prior, sc.util, args.lam, sc.cost, sc.grid)
        _write_solution(ctx, sol)
    _print_boundaries(ctx, sol)
    return 0


def cmd_calibrate(ctx, args):
    sc = ctx.scenario
    res = _calibrate(ctx)
    ctx.say(f"V0 target = {res.target:.6f}")
    ctx.say(f"lambda* = {res.lambda_star:.6g} after {res.iterations} bisection steps")
    ctx.say(f"achieved welfare = {res.achieved_welfare:.6f} +- {res.stderr:.2g} (tol {res.tol_w:.2g})")
    _print_boundaries(ctx, res.sol)
    if args.v0_multiples:
        table = sweep("V0-multiple", args.v0_multiples, sc.prior, sc.util, sc.cost, sc.grid, sc.simcfg,
                      rel_tol=sc.rel_tol)
        table.to_csv(ctx.out / "calibration_v0_sweep.csv")
        table.write_boundaries(ctx.out)
        ctx.say(f"wrote {len(table.rows)} rows to {ctx.out / 'calibration_v0_sweep.csv'}")
    return 0


def cmd_simulate(ctx, args):
    sc = ctx.scenario
    sol = _cached_solution(ctx)
    cfg = sc.simcfg
    if args.thresholds:
        cfg = SimConfig(n_paths=cfg.n_paths, seed=cfg.seed, rho_step=cfg.rho_step, xi=cfg.xi,
                        thresholds=tuple(args.thresholds))
    sim = simulate(sol, sc.prior, sc.util, sc.cost, cfg)
    cmp_ = rct_compare(sim, sc.prior, sc.util, sc.cost)
    body = sim.to_dict()
    body["scenario"] = sc.name
    body["lambda"] = sol.lam
    body["rct_comparison"] = cmp_.to_dict()
    write_json(ctx.out / "sim.json", body)
    sim.write_histograms(ctx.out / "hist_tau.csv", ctx.out / "hist_m_tau.csv")
    ctx.say(f"paths = {sim.n_paths}, lambda = {sol.lam:.6g}")
    ctx.say(f"mean tau = {sim.mean_tau:.4f} +- {sim.stderr['mean_tau']:.2g}, median tau = {sim.median_tau:.4f}")
    for thr, f in sim.frac_stop_before.items():
        ctx.say(f"P(tau < {thr:g}) = {f:.4f}")
    ctx.say(f"welfare (regulator) = {sim.welfare_alice:.5f}, welfare (experimenter) = {sim.welfare_bob:.5f}")
    ctx.say(f"approval rate = {sim.approval_rate:.4f}")
    ctx.say(f"sample size reduction vs RCT = {100 * cmp_.sample_size_reduction:.1f}%")
    if cmp_.savings is not None:
        ctx.say(f"expected savings = ${cmp_.savings / 1e6:.2f}M")
    return 0


def cmd_sweep(ctx, args):
    sc = ctx.scenario
    kind = args.kind or sc.sweep_kind
    values = args.values or sc.sweep_values
    if not kind or not values:
        raise ScenarioError("sweep needs --kind and --values (or a sweep block in the scenario)")
    table = sweep(kind, values, sc.prior, sc.util, sc.cost, None if kind == "nu0" else sc.grid, sc.simcfg,
                  rel_tol=sc.rel_tol)
    path = ctx.out / f"sweep_{kind}.csv"
    table.to_csv(path)
    table.write_boundaries(ctx.out)
    for r in table.rows:
        ctx.say(f"{kind} = {r.value:g}: lambda* = {r.lambda_star:.5g}, mean tau = {r.mean_tau:.4f}, "
                f"median tau = {r.median_tau:.4f}, welfare = {r.welfare:.5f}")
    if kind == "V0-multiple":
        x = interpolate_crossing(table)
        if x is not None:
            ctx.say(f"mean tau crosses 1 at V0 = {x:.4f} x RCT welfare")
    ctx.say(f"wrote {path}")
    return 0


def cmd_bernoulli(ctx, args):
    sc = ctx.scenario
    reps = args.reps or sc.bernoulli.reps
    if reps < 100:
        raise ValueError("reps below 100 gives statistically meaningless welfare estimates")
    n_list = args.n_list or list(sc.bernoulli.n_list)
    sol = _cached_solution(ctx)
    b = sc.bernoulli
    cfg = TrialConfig(theta0=b.theta0, nu2=b.nu2, xi=b.xi, T=b.T, seed=sc.simcfg.seed)
    table = welfare_convergence(sol, sc.prior, sc.util, sc.cost, sorted(n_list), reps, cfg=cfg,
                                v0=sc.resolve_v0(), limit_paths=sc.simcfg.n_paths)
    table.to_csv(ctx.out / "bernoulli_convergence.csv")
    table.to_json(ctx.out / "bernoulli_convergence.json")
    for r in table.rows:
        ctx.say(f"n = {r.n:<5d} alice ratio = {r.alice_ratio:.4f} +- {r.alice_stderr / table.v0:.3f}  "
                f"bob ratio = {r.bob_ratio:.4f}  clamped = {r.clamped}")
    return 0


def cmd_rct_baseline(ctx, args):
    sc = ctx.scenario
    v0 = model.rct_welfare(sc.prior, sc.util.alpha)
    nu = float(model.time_change_psi(1.0, sc.prior)) ** 0.5
    body = {"kind": "rct_baseline", "scenario": sc.name, "rct_welfare": v0, "nu": nu,
            "posterior_variance_t1": float(model.posterior_variance(1.0, sc.prior)),
            "c": sc.cost.c, "c_over_B": sc.cost.c / sc.util.B if sc.util.B > 0 else None,
            "scenario_metadata": sc.metadata()}
    write_json(ctx.out / "rct_baseline.json", body)
    ctx.say(f"RCT welfare V0* = {v0:.6f} (nu = {nu:.5f})")
    if sc.util.B > 0:
        ctx.say(f"c/B = {sc.cost.c / sc.util.B:.6g}")
    else:
        ctx.say(f"c = {sc.cost.c:.6g} (B = 0)")
    return 0


COMMANDS = {"solve": cmd_solve, "calibrate": cmd_calibrate, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "bernoulli": cmd_bernoulli, "rct-baseline": cmd_rct_baseline}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the same flags appear before or after the subcommand
    common.add_argument("--scenario", default=argparse.SUPPRESS,
                        help=f"built-in name ({', '.join(BUILTINS)}) or YAML file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="64-bit simulation seed")
    common.add_argument("--paths", type=_positive_int, default=argparse.SUPPRESS, help="Monte Carlo paths")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress console output")

    p = argparse.ArgumentParser(prog="persuasive-design", parents=[common],
                                description="Welfare-constrained adaptive trial designs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="stopping boundaries at a given multiplier")
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="multiplier; omitted means use (or run) the calibration")
    s = sub.add_parser("calibrate", parents=[common], help="find the multiplier that meets the welfare floor")
    s.add_argument("--v0-multiples", type=float, nargs="+", default=None,
                   help="also calibrate at these multiples of the RCT welfare")
    s = sub.add_parser("simulate", parents=[common], help="stopping-time and welfare distributions")
    s.add_argument("--thresholds", type=float, nargs="+", default=None, help="times for P(tau < t)")
    s = sub.add_parser("sweep", parents=[common], help="comparative statics over V0, B or prior sd")
    s.add_argument("--kind", choices=("V0-multiple", "B", "nu0"), default=None)
    s.add_argument("--values", type=float, nargs="+", default=None)
    s = sub.add_parser("bernoulli", parents=[common], help="finite-sample welfare with Bernoulli outcomes")
    s.add_argument("--n-list", type=_positive_int, nargs="+", default=None)
    s.add_argument("--reps", type=int, default=None)
    sub.add_parser("rct-baseline", parents=[common], help="fixed-horizon RCT welfare and scaled costs")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("scenario", "baseline-2025"), ("out", None), ("seed", None), ("paths", None),
                          ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        ctx = _Ctx(args)
        return COMMANDS[args.command](ctx, args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except GridEscalationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except (GridResolutionError, MismatchError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except InfeasibleWelfareError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
