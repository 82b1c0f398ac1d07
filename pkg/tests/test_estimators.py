"""The risk-estimator registry: values, identities, availability, matrix."""

import math

import numpy as np
import pytest

from ensrisk.estimators import (
    ApproximationId,
    Availability,
    EstimatorId,
    PredictionPoint,
    PredictionSet,
    RiskKind,
    availability,
    bayes_risk,
    default_estimators,
    excess_risk,
    log_excess_ba_ens,
    log_quadrature_cells,
    measure_matrix,
    total_risk,
)
from ensrisk.gaussians import (
    GaussianComponent,
    GaussianEnsemble,
    averaged_surrogate,
    moment_surrogate,
)
from ensrisk.oracle import McConfig, QuadratureConfig, mc_expected_score, oracle_entropy
from ensrisk.scores import NOT_CLOSED_FORM, ScoringRule, divergence, expected_score

BA, ENS, MM, AV = (ApproximationId.BA, ApproximationId.ENS,
                   ApproximationId.MM, ApproximationId.AV)
SQRT_PI = math.sqrt(math.pi)


def random_ensemble(rng, m_range=(2, 8)):
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    return GaussianEnsemble.from_arrays(
        rng.uniform(-5, 5, m), rng.uniform(0.05, 9, m))


class TestEstimatorId:
    def test_labels_and_keys(self):
        est = EstimatorId(RiskKind.EXCESS, MM, ENS)
        assert est.label == "Exc(3a,2)"
        assert est.key == "exc_3a_2"
        assert EstimatorId.parse("exc_3a_2") == est
        assert EstimatorId.parse("bayes_2") == EstimatorId(RiskKind.BAYES, ENS)

    def test_rejects_unsupported(self):
        with pytest.raises(ValueError):
            EstimatorId(RiskKind.TOTAL, BA, ENS)
        with pytest.raises(ValueError):
            EstimatorId(RiskKind.BAYES, BA, BA)
        with pytest.raises(ValueError):
            EstimatorId.parse("bogus_1_1")

    def test_default_set_matches_tables(self):
        assert len(default_estimators()) == 16
        assert [e.key for e in default_estimators()[:6]] == [
            "tot_1_1", "tot_2_1", "tot_3a_1", "tot_3b_1", "tot_3a_2", "tot_3b_2"]


class TestBayesRisk:
    def test_se_table_row(self):
        ens = GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 3.0])
        assert bayes_risk(ScoringRule.SE, ens, BA) == 2.0
        mm_var = moment_surrogate(ens).variance
        assert bayes_risk(ScoringRule.SE, ens, ENS) == pytest.approx(mm_var, rel=1e-15)
        assert bayes_risk(ScoringRule.SE, ens, MM) == pytest.approx(mm_var, rel=1e-15)
        assert bayes_risk(ScoringRule.SE, ens, AV) == 2.0

    def test_crps_moment_matched(self):
        # any ensemble with mixture variance 4 has Bayes(3a) = 2 / sqrt(pi)
        ens = GaussianEnsemble.from_arrays([0.0, 0.0], [4.0, 4.0])
        assert bayes_risk(ScoringRule.CRPS, ens, MM) == pytest.approx(
            2.0 / SQRT_PI, rel=1e-14)

    def test_quadratic_bayesian_averaging(self):
        ens = GaussianEnsemble.from_arrays([5.0, -5.0], [1.0, 1.0])
        assert bayes_risk(ScoringRule.QUADRATIC, ens, BA) == pytest.approx(
            -1.0 / (2.0 * SQRT_PI), rel=1e-14)

    def test_log_mixture_not_closed(self):
        ens = GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 2.0])
        assert bayes_risk(ScoringRule.LOG, ens, ENS) is NOT_CLOSED_FORM

    def test_agrees_with_entropy_of_the_plugin(self):
        rng = np.random.default_rng(2)
        from ensrisk.scores import entropy
        for _ in range(50):
            ens = random_ensemble(rng)
            for rule in ScoringRule:
                for approx, dist in ((BA, None), (ENS, ens),
                                     (MM, moment_surrogate(ens).as_component()),
                                     (AV, averaged_surrogate(ens).as_component())):
                    got = bayes_risk(rule, ens, approx)
                    if approx is BA:
                        parts = [entropy(rule, GaussianComponent(m, v))
                                 for m, v in zip(ens.means, ens.variances)]
                        want = float(np.mean(parts))
                    else:
                        want = entropy(rule, dist)
                    if want is NOT_CLOSED_FORM:
                        assert got is NOT_CLOSED_FORM
                    else:
                        assert got == pytest.approx(want, rel=1e-12, abs=1e-13)


class TestExcessRisk:
    def test_identical_components_give_zero(self):
        ens = GaussianEnsemble.from_arrays([1.3] * 3, [0.8] * 3)
        pairs = [(BA, BA), (ENS, BA), (MM, BA), (AV, BA), (MM, ENS), (AV, ENS)]
        for rule in ScoringRule:
            for pair in pairs:
                val = excess_risk(rule, ens, pair)
                if val is NOT_CLOSED_FORM:
                    cells = log_quadrature_cells(ens)
                    key = EstimatorId(RiskKind.EXCESS, *pair).key
                    val = cells[key]
                assert val == pytest.approx(0.0, abs=1e-12)

    def test_se_hand_sum(self):
        ens = GaussianEnsemble.from_arrays([0.0, 2.0], [0.6, 2.2])
        assert excess_risk(ScoringRule.SE, ens, (BA, BA)) == pytest.approx(2.0, rel=1e-14)

    def test_se_identically_zero_cells(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            ens = random_ensemble(rng)
            assert excess_risk(ScoringRule.SE, ens, (MM, ENS)) == 0.0
            assert excess_risk(ScoringRule.SE, ens, (AV, ENS)) == 0.0

    def test_factor_two_for_symmetric_rules(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            ens = random_ensemble(rng)
            for rule in (ScoringRule.CRPS, ScoringRule.QUADRATIC):
                e11 = excess_risk(rule, ens, (BA, BA))
                e21 = excess_risk(rule, ens, (ENS, BA))
                assert e11 == pytest.approx(2.0 * e21, rel=1e-12)

    def test_pairwise_sum_against_divergence(self):
        """Exc(1,1) from the reduced formula equals the explicit pairwise sum."""
        rng = np.random.default_rng(10)
        for _ in range(20):
            ens = random_ensemble(rng, (2, 5))
            comps = [GaussianComponent(m, v)
                     for m, v in zip(ens.means, ens.variances)]
            for rule in ScoringRule:
                want = float(np.mean([[divergence(rule, a, b) for b in comps]
                                      for a in comps]))
                assert excess_risk(rule, ens, (BA, BA)) == pytest.approx(
                    want, rel=1e-11, abs=1e-12)

    def test_surrogate_cells_against_divergence(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            ens = random_ensemble(rng, (2, 5))
            comps = [GaussianComponent(m, v)
                     for m, v in zip(ens.means, ens.variances)]
            for approx, surrogate in ((MM, moment_surrogate(ens)),
                                      (AV, averaged_surrogate(ens))):
                s = surrogate.as_component()
                for rule in ScoringRule:
                    want = float(np.mean([divergence(rule, s, c) for c in comps]))
                    assert excess_risk(rule, ens, (approx, BA)) == pytest.approx(
                        want, rel=1e-11, abs=1e-12)
                for rule in (ScoringRule.CRPS, ScoringRule.QUADRATIC, ScoringRule.SE):
                    want = divergence(rule, s, ens)
                    assert excess_risk(rule, ens, (approx, ENS)) == pytest.approx(
                        want, rel=1e-11, abs=1e-12)

    def test_log_surrogate_reduced_forms(self):
        """The generic pair sums collapse to their simplified closed forms."""
        rng = np.random.default_rng(13)
        for _ in range(50):
            ens = random_ensemble(rng)
            mu, var = ens.means, ens.variances
            v_mm = moment_surrogate(ens).variance
            v_av = averaged_surrogate(ens).variance
            want_mm = 0.5 * (math.log(v_mm) - float(np.mean(np.log(var))))
            got_mm = excess_risk(ScoringRule.LOG, ens, (MM, BA))
            assert got_mm == pytest.approx(want_mm, rel=1e-10, abs=1e-12)
            want_av = 0.5 * (math.log(v_av) - float(np.mean(np.log(var)))
                             + float(np.mean((mu - mu.mean()) ** 2)) / v_av)
            got_av = excess_risk(ScoringRule.LOG, ens, (AV, BA))
            assert got_av == pytest.approx(want_av, rel=1e-10, abs=1e-12)

    def test_log_quadrature_pairs_marked(self):
        ens = GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 2.0])
        for pair in ((ENS, BA), (BA, ENS), (MM, ENS), (AV, ENS)):
            assert excess_risk(ScoringRule.LOG, ens, pair) is NOT_CLOSED_FORM

    def test_unsupported_pair_rejected(self):
        ens = GaussianEnsemble.from_arrays([0.0], [1.0])
        with pytest.raises(ValueError):
            excess_risk(ScoringRule.SE, ens, (ENS, ENS))


class TestIdentities:
    def test_bregman_information_identity(self):
        """Exc(2,1) = Bayes(2) - Bayes(1) and Exc(1,1) = Exc(2,1) + Exc(1,2)."""
        rng = np.random.default_rng(14)
        cfg = QuadratureConfig()
        for _ in range(40):
            ens = random_ensemble(rng)
            for rule in ScoringRule:
                if rule is ScoringRule.LOG:
                    h_ens = oracle_entropy(rule, ens, cfg)
                    b1 = bayes_risk(rule, ens, BA)
                    e21 = h_ens - b1
                    e12 = log_excess_ba_ens(ens, cfg)
                else:
                    e21 = excess_risk(rule, ens, (ENS, BA))
                    e12 = excess_risk(rule, ens, (BA, ENS))
                    assert e21 == pytest.approx(
                        bayes_risk(rule, ens, ENS) - bayes_risk(rule, ens, BA),
                        rel=1e-12, abs=1e-13)
                e11 = excess_risk(rule, ens, (BA, BA))
                assert e11 == pytest.approx(e21 + e12, rel=1e-8, abs=1e-8)
                assert e21 >= -1e-10

    def test_total_is_mean_pairwise_expected_score(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            ens = random_ensemble(rng, (2, 5))
            comps = [GaussianComponent(m, v)
                     for m, v in zip(ens.means, ens.variances)]
            for rule in ScoringRule:
                want = float(np.mean([[expected_score(rule, a, b) for b in comps]
                                      for a in comps]))
                assert total_risk(rule, ens, (BA, BA)) == pytest.approx(
                    want, rel=1e-11, abs=1e-12)

    def test_se_total_coincidences(self):
        ens = GaussianEnsemble.from_arrays([0.0, 2.0], [1.0, 1.0])
        # Tot(3b,2) = sigma_bar^2 + 0
        assert total_risk(ScoringRule.SE, ens, (AV, ENS)) == 1.0
        # Tot(2,1) = Tot(1,1) = 2 Var(mu) + sigma_bar^2
        assert total_risk(ScoringRule.SE, ens, (ENS, BA)) == pytest.approx(3.0, rel=1e-14)
        assert total_risk(ScoringRule.SE, ens, (BA, BA)) == pytest.approx(3.0, rel=1e-14)
        assert total_risk(ScoringRule.SE, ens, (MM, BA)) == pytest.approx(3.0, rel=1e-14)
        # Tot(3b,1) collapses onto Bayes(3a)
        assert total_risk(ScoringRule.SE, ens, (AV, BA)) == pytest.approx(
            bayes_risk(ScoringRule.SE, ens, MM), rel=1e-14)

    def test_entropy_orderings(self):
        rng = np.random.default_rng(16)
        cfg = QuadratureConfig()
        for _ in range(60):
            ens = random_ensemble(rng)
            b1 = bayes_risk(ScoringRule.LOG, ens, BA)
            b2 = oracle_entropy(ScoringRule.LOG, ens, cfg)
            b3 = bayes_risk(ScoringRule.LOG, ens, MM)
            assert b1 <= b2 + 1e-8 and b2 <= b3 + 1e-8
            for rule in (ScoringRule.CRPS, ScoringRule.QUADRATIC, ScoringRule.SE):
                assert bayes_risk(rule, ens, MM) >= bayes_risk(rule, ens, BA) - 1e-10

    def test_excess_nonnegative(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            ens = random_ensemble(rng)
            for rule in ScoringRule:
                for pair in ((BA, BA), (ENS, BA), (MM, BA), (AV, BA),
                             (MM, ENS), (AV, ENS)):
                    val = excess_risk(rule, ens, pair)
                    if val is NOT_CLOSED_FORM:
                        continue
                    if pair[1] is ENS and rule is ScoringRule.QUADRATIC:
                        assert val >= -1e-6
                    else:
                        assert val >= -1e-10


class TestAvailability:
    def test_log_quadrature_cells(self):
        for key in ("bayes_2", "exc_2_1", "exc_3a_2", "exc_3b_2",
                    "tot_2_1", "tot_3a_2", "tot_3b_2"):
            assert availability(ScoringRule.LOG, EstimatorId.parse(key)) \
                is Availability.QUADRATURE_REQUIRED

    def test_log_closed_cells(self):
        for key in ("tot_1_1", "tot_3a_1", "tot_3b_1", "bayes_1", "bayes_3a",
                    "bayes_3b", "exc_1_1", "exc_3a_1", "exc_3b_1"):
            assert availability(ScoringRule.LOG, EstimatorId.parse(key)) \
                is Availability.CLOSED_FORM

    def test_se_zero_cells(self):
        assert availability(ScoringRule.SE, EstimatorId.parse("exc_3a_2")) \
            is Availability.IDENTICALLY_ZERO
        assert availability(ScoringRule.SE, EstimatorId.parse("exc_3b_2")) \
            is Availability.IDENTICALLY_ZERO
        assert availability(ScoringRule.SE, EstimatorId.parse("tot_3a_2")) \
            is Availability.CLOSED_FORM

    def test_everything_else_closed(self):
        for rule in (ScoringRule.CRPS, ScoringRule.QUADRATIC):
            for est in default_estimators():
                assert availability(rule, est) is Availability.CLOSED_FORM


def _prediction_set(rng, n, m=4, **kwargs):
    points = []
    for i in range(n):
        ens = GaussianEnsemble.from_arrays(rng.normal(size=m), rng.uniform(0.2, 2, m))
        points.append(PredictionPoint(f"p{i}", ens, **kwargs))
    return PredictionSet(tuple(points))


class TestMeasureMatrix:
    def test_se_cell_counts(self):
        rng = np.random.default_rng(20)
        ps = _prediction_set(rng, 1)
        matrix = measure_matrix([ScoringRule.SE], ps)
        assert matrix.values.shape == (1, 16)
        zero_cols = [k for k, c in enumerate(matrix.columns)
                     if c.availability is Availability.IDENTICALLY_ZERO]
        assert len(zero_cols) == 2
        assert all(matrix.values[0, k] == 0.0 for k in zero_cols)
        assert np.count_nonzero(~np.isnan(matrix.values[0])) == 16

    def test_identical_members_zero_excess(self):
        ens = GaussianEnsemble.from_arrays([0.5] * 3, [1.1] * 3)
        ps = PredictionSet((PredictionPoint("only", ens),))
        matrix = measure_matrix(list(ScoringRule), ps, use_oracle_fallback=True)
        for k, col in enumerate(matrix.columns):
            if col.estimator.kind is RiskKind.EXCESS:
                assert matrix.values[0, k] == pytest.approx(0.0, abs=1e-10)

    def test_log_cells_nan_without_fallback(self):
        rng = np.random.default_rng(24)
        ps = _prediction_set(rng, 3)
        matrix = measure_matrix([ScoringRule.LOG], ps)
        for k, col in enumerate(matrix.columns):
            isnan = np.isnan(matrix.values[:, k]).all()
            assert isnan == (col.availability is Availability.QUADRATURE_REQUIRED)

    def test_oracle_fallback_matches_mc_entropy(self):
        rng = np.random.default_rng(25)
        ps = _prediction_set(rng, 1)
        matrix = measure_matrix([ScoringRule.LOG], ps, use_oracle_fallback=True)
        cell = matrix.column(ScoringRule.LOG, EstimatorId.parse("bayes_2"))[0]
        ens = ps.points[0].ensemble
        mc = mc_expected_score(ScoringRule.LOG, ens, ens, McConfig(samples=400_000, seed=5))
        assert cell == pytest.approx(mc.value, abs=4 * mc.standard_error)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            PredictionSet(())

    def test_mixed_ensemble_sizes(self):
        rng = np.random.default_rng(26)
        pts = [PredictionPoint("a", GaussianEnsemble.from_arrays([0.0], [1.0])),
               PredictionPoint("b", GaussianEnsemble.from_arrays([0.0, 1.0], [1.0, 2.0]))]
        matrix = measure_matrix([ScoringRule.SE], PredictionSet(tuple(pts)))
        assert not np.isnan(matrix.values).any()
        # singleton ensembles have zero excess everywhere
        for k, col in enumerate(matrix.columns):
            if col.estimator.kind is RiskKind.EXCESS:
                assert matrix.values[0, k] == pytest.approx(0.0, abs=1e-15)
