import math
from dataclasses import replace

import numpy as np
import pytest

from persuasive_design import _rng
from persuasive_design.bernoulli import (TrialConfig, TrialState, posterior_mean_n, run_batch, run_trial,
                                         score_update, welfare_convergence)
from persuasive_design.errors import MismatchError
from persuasive_design.model import PriorSpec
from persuasive_design.simulator import SimConfig, simulate


@pytest.fixture(scope="module")
def wide_sol(baseline_sol):
    n = baseline_sol.rho_grid.size
    return replace(baseline_sol, b_plus=np.full(n, 1e9), b_minus=np.full(n, -1e9))


class TestScores:
    def test_example(self):
        st = TrialState(n=100, theta0=0.5)
        score_update(st, 1, 1)
        assert st.scores == [pytest.approx(0.1), 0.0]
        score_update(st, 0, 0)
        assert st.scores == [pytest.approx(0.1), pytest.approx(-0.1)]
        assert st.counts == [1, 1] and st.successes == [1, 0]
        assert st.q(1) == pytest.approx(0.01)

    def test_rejects_bad_input(self):
        st = TrialState(n=10, theta0=0.3)
        with pytest.raises(ValueError):
            score_update(st, 2, 1)
        with pytest.raises(ValueError):
            score_update(st, 1, 0.5)

    def test_posterior_at_start_is_prior_mean(self, baseline):
        prior = replace(baseline[0], m0=0.4)
        st = TrialState(n=50, theta0=0.5)
        assert posterior_mean_n(st, prior, TrialConfig()) == pytest.approx(0.4)


def kalman_path(outcomes, arms, theta0, n, prior_var, m0):
    """Sequential Gaussian update of each arm's local effect, one observation at a time."""
    sa2 = theta0 * (1 - theta0)
    mean = {1: 0.5 * m0, 0: -0.5 * m0}
    var = {1: prior_var, 0: prior_var}
    path = [mean[1] - mean[0]]
    for y, a in zip(outcomes, arms):
        # y - theta0 = h / sqrt(n) + noise with variance sa2
        g = var[a] / math.sqrt(n) / (var[a] / n + sa2)
        mean[a] += g * (y - theta0 - mean[a] / math.sqrt(n))
        var[a] -= g * var[a] / math.sqrt(n)
        path.append(mean[1] - mean[0])
    return np.array(path)


class TestTrial:
    def test_conjugate_oracle(self, baseline, wide_sol):
        prior, util, _ = baseline
        cfg = TrialConfig(n=300, T=1.0, seed=3, fixed_theta=(0.56, 0.47))
        run = run_trial(wide_sol, prior, util, cfg, rep=4)
        assert run.tau_index == 300 and run.hit_cap
        res = cfg.resolved(wide_sol)
        key1 = _rng.stream_keys_np(3, [3 * 4 + 1])[0]
        key0 = _rng.stream_keys_np(3, [3 * 4 + 2])[0]
        c = {1: 0, 0: 0}
        arms, ys = [], []
        for j in range(300):
            a = 1 if c[1] <= 0.5 * j else 0
            u = _rng.uniform_at_np(key1 if a == 1 else key0, c[a])
            ys.append(1.0 if u <= (0.56 if a == 1 else 0.47) else 0.0)
            arms.append(a)
            c[a] += 1
        ref = kalman_path(ys, arms, 0.5, 300, res.sigma ** 2 * res.nu2, prior.m0)
        np.testing.assert_allclose(run.m_path, ref, rtol=0, atol=1e-10)

    def test_allocation_alternates(self, baseline, wide_sol):
        prior, util, _ = baseline
        run = run_trial(wide_sol, prior, util, TrialConfig(n=200, T=1.0), rep=1)
        assert run.q1_count + run.q0_count == run.tau_index
        assert abs(run.q1_count - run.q0_count) <= 1

    def test_stops_at_first_exit(self, baseline, baseline_sol):
        prior, util, _ = baseline
        cfg = TrialConfig(n=150, seed=11)
        res = cfg.resolved(baseline_sol)
        for rep in range(30):
            run = run_trial(baseline_sol, prior, util, cfg, rep=rep)
            t = np.minimum(np.arange(run.tau_index + 1) / 150, baseline_sol.t_grid[-1])
            up = baseline_sol.b_plus_at_t(t) + res.xi
            lo = baseline_sol.b_minus_at_t(t)
            inside = (run.m_path > lo) & (run.m_path < up)
            assert np.all(inside[:-1])
            assert run.hit_cap or not inside[-1]
            assert run.decision == int(run.m_path[-1] >= 0)

    def test_deterministic_and_forced_exploration(self, baseline, baseline_sol):
        prior = baseline[0]
        a = run_batch(baseline_sol, prior, TrialConfig(n=100, seed=2), 500)
        b = run_batch(baseline_sol, prior, TrialConfig(n=100, seed=2, forced_exploration=True), 500)
        np.testing.assert_array_equal(a.tau, b.tau)
        np.testing.assert_array_equal(a.m_tau, b.m_tau)
        c = run_batch(baseline_sol, prior, TrialConfig(n=100, seed=3), 500)
        assert not np.array_equal(a.m_tau, c.m_tau)

    def test_effect_shared_across_n(self, baseline, baseline_sol):
        prior = baseline[0]
        a = run_batch(baseline_sol, prior, TrialConfig(n=100, seed=2), 300)
        b = run_batch(baseline_sol, prior, TrialConfig(n=400, seed=2), 300)
        inner = np.all((a.theta > 1e-6) & (a.theta < 1 - 1e-6), axis=1)
        assert inner.mean() > 0.9
        np.testing.assert_allclose(a.effect[inner], b.effect[inner], rtol=1e-9, atol=1e-9)

    def test_large_xi_short_horizon(self, baseline, baseline_sol):
        prior = baseline[0]
        b = run_batch(baseline_sol, prior, TrialConfig(n=100, xi=100.0, T=0.3), 1000)
        assert b.tau.max() <= 0.3
        early = b.tau < 0.3
        # before the cap the only exit is rejection
        assert np.all(b.m_tau[early] < 0)
        assert b.capped == np.sum(~early)

    def test_clamps_counted(self, baseline, baseline_sol):
        prior = baseline[0]
        b = run_batch(baseline_sol, prior, TrialConfig(n=5, seed=1), 2000)
        assert b.clamped > 0
        assert np.all((b.theta >= 1e-6) & (b.theta <= 1 - 1e-6))

    def test_sigma_mismatch(self, baseline, baseline_sol):
        with pytest.raises(MismatchError):
            run_batch(baseline_sol, baseline[0], TrialConfig(theta0=0.2), 10)

    @pytest.mark.parametrize("kw", [dict(n=0), dict(theta0=1.0), dict(nu2=0.0), dict(xi=0.0), dict(T=-1.0)])
    def test_config_rejects(self, kw):
        with pytest.raises(ValueError):
            TrialConfig(**kw)


class TestConvergence:
    def test_table(self, baseline, baseline_sol, tmp_path):
        prior, util, cost = baseline
        tab = welfare_convergence(baseline_sol, prior, util, cost, [50, 200], 2000, limit_paths=5000)
        assert tab.column("n").tolist() == [50, 200]
        lines = tab.to_csv(tmp_path / "c.csv").read_text().splitlines()
        assert lines[0].startswith("n,alice_ratio,bob_ratio,stderr")
        assert len(lines) == 3

    def test_validation(self, baseline, baseline_sol):
        prior, util, cost = baseline
        with pytest.raises(ValueError):
            welfare_convergence(baseline_sol, prior, util, cost, [200, 100], 100)
        with pytest.raises(ValueError):
            welfare_convergence(baseline_sol, prior, util, cost, [], 100)
        with pytest.raises(ValueError):
            welfare_convergence(baseline_sol, prior, util, cost, [100], 1)

    @pytest.mark.slow
    def test_large_n_matches_limit_experiment(self, baseline, baseline_sol):
        prior, util, cost = baseline
        limit = simulate(baseline_sol, prior, util, cost, SimConfig(n_paths=50_000, seed=1))
        cfg = TrialConfig(n=1600, seed=5, xi=1e-9)
        b = run_batch(baseline_sol, prior, cfg, 20_000)
        se = math.sqrt(0.25 / 20_000 + 0.25 / 50_000)
        assert b.decision.mean() == pytest.approx(limit.approval_rate, abs=4 * se + 0.01)
        assert b.tau.mean() == pytest.approx(limit.mean_tau, abs=0.03)
