"""Point scores, entropies, expected scores, and divergences."""

import math

import numpy as np
import pytest

from ensrisk.gaussians import GaussianComponent, GaussianEnsemble
from ensrisk.oracle import (
    McConfig,
    crps_point_quadrature,
    mc_expected_score,
    oracle_divergence,
)
from ensrisk.scores import (
    NOT_CLOSED_FORM,
    ScoringRule,
    divergence,
    entropy,
    expected_score,
    point_score,
    point_scores,
)

G01 = GaussianComponent(0.0, 1.0)
G11 = GaussianComponent(1.0, 1.0)
SQRT_PI = math.sqrt(math.pi)


class TestPointScores:
    def test_crps_standard_normal_at_zero(self):
        # frozen quadrature of the defining integral: 0.2336949772551084
        assert point_score(ScoringRule.CRPS, G01, 0.0) == pytest.approx(
            0.2336949772551084, abs=1e-12)
        assert crps_point_quadrature(G01, 0.0) == pytest.approx(
            point_score(ScoringRule.CRPS, G01, 0.0), abs=1e-10)

    def test_log_direct_substitution(self):
        assert point_score(ScoringRule.LOG, G01, 1.0) == pytest.approx(
            0.5 * math.log(2 * math.pi) + 0.5, rel=1e-15)

    def test_se_ignores_variance(self):
        assert point_score(ScoringRule.SE, GaussianComponent(3.0, 7.0), 5.0) == 4.0

    def test_quadratic_frozen(self):
        # -2 phi(0) plus quadrature of int p^2: -0.5157897690289881
        assert point_score(ScoringRule.QUADRATIC, G01, 0.0) == pytest.approx(
            -0.5157897690289881, abs=1e-12)

    def test_crps_scale_linearity(self):
        base = point_score(ScoringRule.CRPS, G01, 0.0)
        for sigma in (0.2, 2.0, 17.0):
            scaled = point_score(ScoringRule.CRPS, GaussianComponent(0.0, sigma**2), 0.0)
            assert scaled == pytest.approx(sigma * base, rel=1e-12)

    def test_mixture_point_score_matches_raw_integral(self):
        mix = GaussianEnsemble.from_arrays([0.0, 2.0], [1.0, 0.5])
        closed = point_score(ScoringRule.CRPS, mix, 0.7)
        assert closed == pytest.approx(crps_point_quadrature(mix, 0.7), abs=1e-10)

    def test_vectorized_matches_scalar(self):
        ys = np.array([-1.0, 0.0, 2.5])
        for rule in ScoringRule:
            vec = point_scores(rule, G11, ys)
            for y, v in zip(ys, vec):
                assert point_score(rule, G11, float(y)) == pytest.approx(v, rel=1e-14)

    def test_rejects_non_finite_outcome(self):
        with pytest.raises(ValueError):
            point_score(ScoringRule.SE, G01, float("nan"))


class TestEntropy:
    def test_gaussian_closed_forms(self):
        for mu in (-3.0, 0.0, 4.5):
            g = GaussianComponent(mu, 1.0)
            assert entropy(ScoringRule.CRPS, g) == pytest.approx(1 / SQRT_PI, rel=1e-14)
            assert entropy(ScoringRule.LOG, g) == pytest.approx(
                0.5 * math.log(2 * math.pi * math.e), rel=1e-14)
            assert entropy(ScoringRule.QUADRATIC, g) == pytest.approx(
                -1 / (2 * SQRT_PI), rel=1e-14)
            assert entropy(ScoringRule.SE, g) == 1.0

    def test_crps_mixture_of_identical_parts(self):
        mix = GaussianEnsemble.from_arrays([0.0, 0.0], [1.0, 1.0])
        assert entropy(ScoringRule.CRPS, mix) == pytest.approx(1 / SQRT_PI, rel=1e-14)

    def test_crps_mixture_frozen(self):
        # (1/8) sum_ij A(mu_ij, sigma_ij) for {N(0,1), N(3,1)}
        mix = GaussianEnsemble.from_arrays([0.0, 3.0], [1.0, 1.0])
        assert entropy(ScoringRule.CRPS, mix) == pytest.approx(
            1.0364062239362686, rel=1e-12)

    def test_quadratic_mixture_frozen(self):
        mix = GaussianEnsemble.from_arrays([0.0, 3.0], [1.0, 1.0])
        assert entropy(ScoringRule.QUADRATIC, mix) == pytest.approx(
            -0.15591368203989275, rel=1e-12)

    def test_log_mixture_has_no_closed_form(self):
        mix = GaussianEnsemble.from_arrays([0.0, 3.0], [1.0, 2.0])
        assert entropy(ScoringRule.LOG, mix) is NOT_CLOSED_FORM

    def test_se_mixture_is_total_variance(self):
        mix = GaussianEnsemble.from_arrays([0.0, 2.0], [1.0, 1.0])
        assert entropy(ScoringRule.SE, mix) == pytest.approx(2.0, rel=1e-14)

    def test_crps_entropy_is_half_mean_gap_monte_carlo(self):
        mix = GaussianEnsemble.from_arrays([-1.0, 0.5, 3.0], [0.4, 1.5, 0.9])
        rng = np.random.default_rng(7)
        n = 400_000
        idx = rng.integers(0, 3, size=(2, n))
        draws = mix.means[idx] + np.sqrt(mix.variances[idx]) * rng.standard_normal((2, n))
        gaps = np.abs(draws[0] - draws[1])
        est = 0.5 * gaps.mean()
        se = 0.5 * gaps.std(ddof=1) / math.sqrt(n)
        assert entropy(ScoringRule.CRPS, mix) == pytest.approx(est, abs=3 * se)


class TestExpectedScore:
    def test_self_score_is_entropy(self):
        for rule in ScoringRule:
            h = entropy(rule, G01)
            assert expected_score(rule, G01, G01) == pytest.approx(h, rel=1e-14)

    def test_crps_frozen_pair(self):
        # quadrature of int CRPS(P, y) q(y) dy: 0.8350928732007326
        assert expected_score(ScoringRule.CRPS, G01, G11) == pytest.approx(
            0.8350928732007326, abs=1e-10)

    def test_log_frozen_pair(self):
        # Monte-Carlo of -log p(Y), Y ~ N(1,1), 1e6 draws seed 7 gives
        # 1.91858944 +/- 0.00122; the closed form must land inside 3 se.
        closed = expected_score(ScoringRule.LOG, G01, G11)
        assert closed == pytest.approx(1.9185894428949537, abs=3 * 0.00123)
        assert closed == pytest.approx(0.5 * (math.log(2 * math.pi) + 2.0), rel=1e-14)

    def test_se_pair(self):
        assert expected_score(ScoringRule.SE, G01, GaussianComponent(2.0, 5.0)) == 9.0

    def test_label_mixture_linearity(self):
        mix = GaussianEnsemble.from_arrays([-1.0, 2.0, 0.3], [0.5, 1.5, 2.5])
        for rule in ScoringRule:
            whole = expected_score(rule, G01, mix)
            parts = [expected_score(rule, G01, GaussianComponent(m, v))
                     for m, v in zip(mix.means, mix.variances)]
            assert whole == pytest.approx(float(np.mean(parts)), rel=1e-14)

    def test_log_mixture_prediction_not_closed(self):
        mix = GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 1.0])
        assert expected_score(ScoringRule.LOG, mix, G01) is NOT_CLOSED_FORM


class TestDivergence:
    def test_self_divergence_zero(self):
        g = GaussianComponent(3.0, 2.0)
        for rule in ScoringRule:
            assert divergence(rule, g, g) == pytest.approx(0.0, abs=1e-14)

    def test_log_kl_frozen(self):
        # quadrature of the KL integrand gives 1/2 exactly here
        assert divergence(ScoringRule.LOG, G01, G11) == pytest.approx(0.5, rel=1e-14)

    def test_se_mean_gap(self):
        assert divergence(ScoringRule.SE, G01, GaussianComponent(2.0, 5.0)) == 4.0

    def test_quadratic_frozen_against_quadrature(self):
        g04 = GaussianComponent(0.0, 4.0)
        closed = divergence(ScoringRule.QUADRATIC, G01, g04)
        assert closed == pytest.approx(0.06631736443026287, abs=1e-8)

    def test_crps_alternative_form(self):
        # d(P, Q) = int (F_P - F_Q)^2 dt, checked through the oracle
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = GaussianComponent(rng.uniform(-3, 3), rng.uniform(0.2, 4))
            q = GaussianComponent(rng.uniform(-3, 3), rng.uniform(0.2, 4))
            assert divergence(ScoringRule.CRPS, p, q) == pytest.approx(
                oracle_divergence(ScoringRule.CRPS, p, q), abs=1e-8)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        sym_rules = (ScoringRule.CRPS, ScoringRule.QUADRATIC, ScoringRule.SE)
        for _ in range(200):
            p = GaussianComponent(rng.uniform(-4, 4), rng.uniform(0.1, 5))
            q = GaussianComponent(rng.uniform(-4, 4), rng.uniform(0.1, 5))
            for rule in sym_rules:
                assert divergence(rule, p, q) == pytest.approx(
                    divergence(rule, q, p), abs=1e-12 * max(1, abs(divergence(rule, p, q))))

    def test_log_asymmetry(self):
        p = GaussianComponent(0.0, 1.0)
        q = GaussianComponent(1.5, 3.0)
        assert abs(divergence(ScoringRule.LOG, p, q)
                   - divergence(ScoringRule.LOG, q, p)) > 1e-3

    def test_log_mixture_not_closed(self):
        mix = GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 2.0])
        assert divergence(ScoringRule.LOG, G01, mix) is NOT_CLOSED_FORM
        assert divergence(ScoringRule.LOG, mix, G01) is NOT_CLOSED_FORM

    def test_properness_sweep(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            p = GaussianComponent(rng.uniform(-5, 5), rng.uniform(0.05, 9))
            q = GaussianComponent(rng.uniform(-5, 5), rng.uniform(0.05, 9))
            for rule in ScoringRule:
                assert expected_score(rule, p, q) >= entropy(rule, q) - 1e-10


class TestMonteCarloCrossChecks:
    def test_mc_matches_closed_for_log_pair(self):
        mc = mc_expected_score(ScoringRule.LOG, G01, G11, McConfig(samples=200_000, seed=4))
        assert expected_score(ScoringRule.LOG, G01, G11) == pytest.approx(
            mc.value, abs=4 * mc.standard_error)

    def test_mc_mixture_prediction(self):
        mix = GaussianEnsemble.from_arrays([0.0, 2.0], [1.0, 0.5])
        for rule in (ScoringRule.CRPS, ScoringRule.QUADRATIC, ScoringRule.SE):
            mc = mc_expected_score(rule, mix, G11, McConfig(samples=200_000, seed=9))
            assert expected_score(rule, mix, G11) == pytest.approx(
                mc.value, abs=4 * mc.standard_error)
