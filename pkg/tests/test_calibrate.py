import json

import numpy as np
import pytest

from persuasive_design import model
from persuasive_design.calibrate import (calibrate_lambda, interpolate_crossing, mean_tau_crossing,
                                         sweep, SweepRow, SweepTable)
from persuasive_design.errors import InfeasibleWelfareError
from persuasive_design.simulator import SimConfig
from persuasive_design.solver import GridSpec

CFG = SimConfig(n_paths=4000, seed=17)


@pytest.fixture(scope="module")
def small(baseline):
    prior, util, cost = baseline
    return prior, util, cost, GridSpec.default(prior, n_rho=500)


@pytest.fixture(scope="module")
def calibrated(small):
    prior, util, cost, grid = small
    v0 = model.rct_welfare(prior)
    return calibrate_lambda(v0, prior, util, cost, grid, CFG, final_paths=4000)


class TestCalibrate:
    def test_meets_floor(self, calibrated):
        res = calibrated
        assert res.within_tolerance
        assert res.monotone
        assert 1.5 < res.lambda_star < 3.5

    def test_brackets_shrink(self, calibrated):
        hist = calibrated.bracket_history
        widths = [hi - lo for lo, hi in hist]
        assert all(b <= a * 0.5 + 1e-15 for a, b in zip(widths[1:], widths[2:]))
        lo, hi = hist[-1]
        assert lo <= calibrated.lambda_star <= hi
        assert hi - lo <= 1e-3 * hi

    def test_deterministic(self, small, calibrated):
        prior, util, cost, grid = small
        again = calibrate_lambda(calibrated.target, prior, util, cost, grid, CFG, final_paths=4000)
        assert again.lambda_star == calibrated.lambda_star
        assert again.achieved_welfare == calibrated.achieved_welfare

    def test_welfare_curve_monotone(self, calibrated):
        w = [v for _, v in calibrated.evaluations]
        assert np.all(np.diff(w) >= -3 * calibrated.stderr)

    def test_slack_floor_gives_zero(self, small):
        prior, util, cost, grid = small
        # stopping at once at m = 0 earns zero welfare
        res = calibrate_lambda(0.0, prior, util, cost, grid, CFG)
        assert res.lambda_star == 0.0
        assert res.iterations == 0

    def test_infeasible_floor(self, small):
        prior, util, cost, grid = small
        # E[max(theta, 0)] under the prior bounds any design's welfare
        cap = np.sqrt(prior.varrho0 / (2 * np.pi))
        with pytest.raises(InfeasibleWelfareError) as err:
            calibrate_lambda(1.5 * cap, prior, util, cost, grid, CFG, lam_cap=64)
        lo, hi = err.value.feasible_range
        assert lo <= hi < 1.5 * cap

    def test_rejects_nan(self, small):
        prior, util, cost, grid = small
        with pytest.raises(ValueError):
            calibrate_lambda(float("nan"), prior, util, cost, grid, CFG)

    def test_json(self, calibrated, tmp_path):
        d = json.loads(calibrated.to_json(tmp_path / "c.json").read_text())
        assert d["schema_version"] == 1
        assert d["lambda_star"] == calibrated.lambda_star
        assert len(d["bracket_history"]) == calibrated.iterations + 1


class TestSweep:
    def test_v0_multiple(self, small, tmp_path):
        prior, util, cost, grid = small
        table = sweep("V0-multiple", [0.9, 1.0], prior, util, cost, grid, CFG, rel_tol=1e-2)
        lam = table.column("lambda_star")
        assert lam[0] < lam[1]
        assert table.column("mean_tau")[0] < table.column("mean_tau")[1]
        lines = table.to_csv(tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "value,lambda_star,mean_tau,median_tau,welfare,approval_rate"
        assert len(table.write_boundaries(tmp_path)) == 2

    def test_nu0_rescales_floor(self, small):
        prior, util, cost, _ = small
        table = sweep("nu0", [2.0], prior, util, cost, None, CFG, rel_tol=1e-2)
        p = model.PriorSpec(varrho0=4.0)
        assert table.rows[0].target == pytest.approx(model.rct_welfare(p))

    def test_unknown_kind(self, small):
        prior, util, cost, grid = small
        with pytest.raises(ValueError):
            sweep("gamma", [1.0], prior, util, cost, grid, CFG)
        with pytest.raises(ValueError):
            sweep("B", [], prior, util, cost, grid, CFG)

    def test_interpolate_crossing(self):
        rows = [SweepRow(v, 0, t, 0, 0, 0, 0) for v, t in [(1.0, 0.5), (1.02, 0.9), (1.04, 1.3)]]
        assert interpolate_crossing(SweepTable("V0-multiple", rows)) == pytest.approx(1.025)
        assert interpolate_crossing(SweepTable("V0-multiple", rows[:2])) is None


def test_mean_tau_crossing(small):
    prior, util, cost, grid = small
    cr = mean_tau_crossing(prior, util, cost, grid, CFG, target_tau=0.6, rel_tol=1e-2)
    assert cr.mean_tau == pytest.approx(0.6, abs=0.02)
    lo, hi = cr.bracket
    assert lo <= cr.lambda_at <= hi
