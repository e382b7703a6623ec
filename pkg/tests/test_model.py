import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from persuasive_design import model
from persuasive_design.errors import DegeneratePriorError, NormalizationError
from persuasive_design.model import CostSpec, PriorSpec, UtilitySpec


def unit_prior(varrho0=9.7344):
    return PriorSpec(varrho0=varrho0, sigma1=0.5, sigma0=0.5)


class TestSAlpha:
    def test_examples(self):
        assert model.s_alpha(0.0, 0.7) == 0.0
        assert model.s_alpha(3.0, 1.0) == 3.0
        assert model.s_alpha(-2.0, 0.5) == pytest.approx(1.0)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            model.s_alpha(1.0, 1.2)
        with pytest.raises(ValueError):
            model.s_alpha(1.0, -0.1)

    def test_two_branch_form_on_random_pairs(self):
        rng = np.random.default_rng(1)
        x = rng.normal(scale=5, size=10_000)
        a = rng.uniform(size=10_000)
        got = np.array([model.s_alpha(xi, ai) for xi, ai in zip(x, a)])
        np.testing.assert_allclose(got, np.maximum(a * x, -(1 - a) * x), rtol=0, atol=1e-12)


class TestPosteriorVariance:
    def test_examples(self):
        p = unit_prior()
        assert model.posterior_variance(0.0, p) == pytest.approx(9.7344)
        assert model.posterior_variance(1.0, p) == pytest.approx(1 / (1 / 9.7344 + 1), abs=1e-12)
        assert model.posterior_variance(1.0, p) == pytest.approx(0.90684, abs=5e-6)
        assert model.posterior_variance(1e12, p) < 1e-11

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            model.posterior_variance(-0.1, unit_prior())

    def test_strictly_decreasing(self):
        t = np.linspace(0, 50, 2001)
        assert np.all(np.diff(model.posterior_variance(t, unit_prior())) < 0)


class TestTimeChange:
    def test_psi_examples(self):
        p = unit_prior()
        assert model.time_change_psi(0.0, p) == 0.0
        assert model.time_change_psi(1.0, p) == pytest.approx(8.8276, abs=5e-5)
        assert model.time_change_psi(1e9, p) < p.varrho0

    def test_inverse_examples(self):
        p = unit_prior()
        assert model.time_change_inverse(0.0, p) == 0.0
        assert model.time_change_inverse(model.time_change_psi(2.0, p), p) == pytest.approx(2.0, abs=1e-12)
        assert model.time_change_inverse(8.8276, p) == pytest.approx(1.0, abs=1e-4)

    def test_inverse_rejects_out_of_range(self):
        p = unit_prior()
        with pytest.raises(ValueError):
            model.time_change_inverse(p.varrho0, p)
        with pytest.raises(ValueError):
            model.time_change_inverse(-1e-3, p)

    def test_round_trips(self):
        rng = np.random.default_rng(2)
        p = unit_prior()
        t = rng.uniform(0, 50, 10_000)
        np.testing.assert_allclose(model.time_change_inverse(model.time_change_psi(t, p), p), t, rtol=1e-10, atol=1e-10)
        rho = rng.uniform(0, p.varrho0 * 0.999, 10_000)
        np.testing.assert_allclose(model.time_change_psi(model.time_change_inverse(rho, p), p), rho, atol=1e-10)

    def test_inverse_diverges(self):
        p = unit_prior()
        assert model.time_change_inverse(p.varrho0 * (1 - 1e-9), p) > 1e7


class TestNeyman:
    def test_examples(self):
        assert model.neyman_fraction(1, 1) == 0.5
        assert model.neyman_fraction(2, 1) == pytest.approx(2 / 3)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            model.neyman_fraction(0, 1)

    @settings(max_examples=60, deadline=None)
    @given(s1=st.floats(0.1, 5), s0=st.floats(0.1, 5), v=st.floats(0.1, 20), t=st.floats(0.05, 10))
    def test_minimizes_fixed_split_variance(self, s1, s0, v, t):
        # independent arms with prior variances proportional to sigma_a
        p = PriorSpec(varrho0=v, sigma1=s1, sigma0=s0)
        S11, S00 = p.arm_prior_variances()
        q1 = np.linspace(0, t, 1001)
        obj = 1 / (1 / S11 + q1 / s1 ** 2) + 1 / (1 / S00 + (t - q1) / s0 ** 2)
        q_star = model.neyman_fraction(s1, s0) * t
        at_star = 1 / (1 / S11 + q_star / s1 ** 2) + 1 / (1 / S00 + (t - q_star) / s0 ** 2)
        assert at_star <= obj.min() + 1e-12
        assert at_star == pytest.approx(model.posterior_variance(t, p), rel=1e-10)

    def test_split_matters_when_prior_variance_tracks_sigma_squared(self):
        # with Sigma_aa proportional to sigma_a^2 the equal-precision split is not optimal
        s1, s0, k, t = 2.0, 1.0, 1.0, 3.0
        q1 = np.linspace(0, t, 300_001)
        obj = 1 / (1 / (k * s1 ** 2) + q1 / s1 ** 2) + 1 / (1 / (k * s0 ** 2) + (t - q1) / s0 ** 2)
        assert q1[np.argmin(obj)] == pytest.approx(7 / 3, abs=1e-4)


class TestScaleParams:
    def test_baseline(self):
        assert model.scale_params(41000, 46.3e6, 0, 300).c_over_B == pytest.approx(0.2656, abs=5e-4)

    def test_approval_only(self):
        assert model.scale_params(41000, 802e6, 0, 300).c_over_B == pytest.approx(0.01534, abs=2e-4)

    def test_large_benefit_limit(self):
        assert model.scale_params(41000, 1e18, 0, 300).c_over_B < 1e-9

    def test_gamma_and_varrho(self):
        lp = model.scale_params(41000, 46.3e6, 2e9, 300, varrho_0n=0.5)
        assert lp.gamma_over_c == pytest.approx(2e9 / (300 ** 1.5 * 41000))
        assert lp.varrho0 == pytest.approx(0.5 * math.sqrt(300))

    def test_zero_benefit_cannot_normalize(self):
        with pytest.raises(NormalizationError):
            model.scale_params(41000, 0.0, 0, 300)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            model.scale_params(0, 1, 0, 300)
        with pytest.raises(ValueError):
            model.scale_params(1, 1, 0, 0.5)


class TestRCTWelfare:
    def test_benchmark(self):
        assert model.rct_welfare(unit_prior()) == pytest.approx(1.1853, abs=5e-4)

    def test_degenerate_prior(self):
        assert model.rct_welfare(unit_prior(1e-14)) < 1e-6

    def test_far_positive_mean(self):
        # nu = 1 needs psi(1) = 1: varrho0 solves varrho0 / (1/varrho0 + 1) = 1
        v = (1 + math.sqrt(5)) / 2
        p = PriorSpec(m0=10.0, varrho0=v, sigma1=0.5, sigma0=0.5)
        assert model.time_change_psi(1.0, p) == pytest.approx(1.0)
        assert model.rct_welfare(p, alpha=1.0) == pytest.approx(10.0, abs=1e-4)

    def test_alpha_free_at_zero_mean(self):
        p = unit_prior()
        vals = [model.rct_welfare(p, alpha=a) for a in (0.0, 0.25, 0.5, 1.0)]
        assert max(vals) - min(vals) <= 1e-12

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(3)
        p = PriorSpec(m0=0.7, varrho0=4.0, sigma1=0.3, sigma0=0.9)
        x = rng.normal(0.7, math.sqrt(model.time_change_psi(1.0, p)), 400_000)
        mc = np.mean(np.maximum(x, 0) - 0.4 * x)
        assert model.rct_welfare(p, alpha=0.6) == pytest.approx(mc, abs=4 * x.std() / math.sqrt(x.size))


def fixed_split_variance(S, w, q1, q0):
    P = np.linalg.inv(S)
    a, d, b = P[0, 0] + q1, P[1, 1] + q0, P[0, 1]
    return (w[0] ** 2 * d - 2 * w[0] * w[1] * b + w[1] ** 2 * a) / (a * d - b * b)


def random_cov_priors(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        A = rng.normal(size=(2, 2))
        S = A @ A.T + 0.05 * np.eye(2)
        s1, s0 = rng.uniform(0.3, 2.0, 2)
        try:
            out.append(PriorSpec.from_cov(S, s1, s0))
        except ValueError:
            continue
    return out


class TestGeneralCovariance:
    def test_hand_example(self):
        p = PriorSpec.from_cov([[2, 0], [0, 1]], 1.0, 1.0)
        assert model.general_cov_t_star(p) == pytest.approx(0.5)
        assert p.first_arm == 1

    def test_equal_cov_terms_give_zero(self):
        p = PriorSpec.from_cov([[1.0, 0.3], [0.3, 1.0]], 1.0, 1.0)
        assert model.general_cov_t_star(p) == 0.0

    def test_diagonal_matching_independent_case(self):
        s1, s0, v = 1.5, 0.5, 4.0
        sig = s1 + s0
        # transformed variances Sigma_aa / sigma_a^2 with Sigma_aa = v sigma_a / sigma
        p = PriorSpec.from_cov([[v / (sig * s1), 0.0], [0.0, v / (sig * s0)]], s1, s0)
        assert model.general_cov_t_star(p) == pytest.approx(0.0, abs=1e-12)
        t = np.linspace(0, 5, 50)
        np.testing.assert_allclose(model.posterior_variance(t, p),
                                   model.posterior_variance(t, PriorSpec(varrho0=v, sigma1=s1, sigma0=s0)),
                                   rtol=1e-12)

    def test_relabels_arms(self):
        p = PriorSpec.from_cov([[1, 0], [0, 2]], 1.0, 1.0)
        assert p.arms_swapped and p.first_arm == 0
        assert model.general_cov_t_star(p) == pytest.approx(0.5)

    def test_singular_covariance(self):
        p = PriorSpec.from_cov([[1.0, 1.0], [1.0, 1.0]], 1.0, 2.0)
        with pytest.raises(DegeneratePriorError):
            model.general_cov_t_star(p)

    def test_rejects_invalid_cov(self):
        with pytest.raises(ValueError):
            PriorSpec(varrho0=1.0, cov=((1.0, 0.2), (0.0, 1.0)))
        with pytest.raises(ValueError):
            PriorSpec.from_cov([[1.0, 2.0], [2.0, 1.0]], 1.0, 1.0)

    def test_continuous_at_switch(self):
        for p in random_cov_priors(200, 4):
            ts = model.general_cov_t_star(p)
            left = model.posterior_variance(ts * (1 - 1e-15), p)
            right = model.posterior_variance(ts + 1e-13, p)
            assert abs(model.posterior_variance(ts, p) - right) <= 1e-10
            assert abs(left - right) <= 1e-10

    def test_matches_best_fixed_split(self):
        # independent oracle: minimum over splits of the exact Gaussian posterior variance
        for p in random_cov_priors(60, 5):
            S = np.array(p.cov)
            w = np.array([p.sigma1, p.sigma0])
            ts = model.general_cov_t_star(p)
            for t in (0.3 * ts, ts, 0.7, 2 * ts + 0.4):
                q = np.linspace(0, t, 100_001)
                best = fixed_split_variance(S, w, q, t - q).min()
                assert model.posterior_variance(t, p) == pytest.approx(best, rel=1e-8)

    def test_decreasing_and_round_trip(self):
        for p in random_cov_priors(50, 6):
            t = np.linspace(0, 10, 4001)
            v = model.posterior_variance(t, p)
            assert np.all(np.diff(v) < 0)
            rho = model.time_change_psi(t, p)
            np.testing.assert_allclose(model.time_change_inverse(rho, p), t, atol=1e-8)

    def test_allocation_switches_to_neyman(self):
        p = PriorSpec.from_cov([[2, 0], [0, 1]], 1.0, 1.0)
        q1, q0 = model.arm_allocation(np.array([0.25, 0.5, 1.5]), p)
        np.testing.assert_allclose(q1, [0.25, 0.5, 1.0])
        np.testing.assert_allclose(q0, [0.0, 0.0, 0.5])


class TestSpecs:
    def test_prior_invariants(self):
        with pytest.raises(ValueError):
            PriorSpec(varrho0=0.0)
        with pytest.raises(ValueError):
            PriorSpec(sigma1=-1.0)

    def test_utility_invariants(self):
        with pytest.raises(ValueError):
            UtilitySpec(alpha=2.0)
        with pytest.raises(ValueError):
            UtilitySpec(gamma=-1.0)
        with pytest.raises(ValueError):
            UtilitySpec(B=-0.1)

    def test_cost_invariants(self):
        with pytest.raises(ValueError):
            CostSpec(c=0.0)
        cs = CostSpec.from_structural(41000, 46.3e6)
        assert cs.c == pytest.approx(300 * 41000 / 46.3e6)
        with pytest.raises(ValueError):
            CostSpec(c=1.0, structural=cs.structural)

    def test_sigma_is_derived(self):
        p = PriorSpec(sigma1=0.2, sigma0=0.7)
        assert p.sigma == pytest.approx(0.9)
        assert p.sigma_sq == pytest.approx(0.81)
