from __future__ import annotations

import math

import numpy as np
import pytest

from rm_lab.core.error import InputError, NumericError
from rm_lab.core.jets import AnalyticFunction, constant_field
from rm_lab.core.quadrature import UNIFORM, box
from rm_lab.data import LossBreakdown, RunReport
from rm_lab.estimators import (
    aposteriori_bound,
    aposteriori_bound_regularized,
    apriori_bound,
    bernstein_probe,
    bound_soundness,
    calibrated_delta,
    delta_schedule,
    discrete_bound_I,
    discrete_bound_report,
    estimate_rademacher,
    hp_bound_report,
    loss_gap_audit,
    q_probability,
    residual_cap_audit,
    trapezoid_norm_sq,
)
from rm_lab.models import MlpArch, mlp_model

UNIT = (box([0.0], [1.0]),)
PI = math.pi


def _report(total: float, v_error: float | None = None) -> RunReport:
    report = RunReport("n=4,seed=0", {}, {}, "mlp", {"model": 0})
    report.final_loss = LossBreakdown("continuous_rm", 2.0, 1.0, total, 0.0, total)
    if v_error is not None:
        report.errors["v_norm"] = v_error
    return report


class TestAposteriori:
    def test_plain_bound(self):
        np.testing.assert_allclose(aposteriori_bound(0.01, 1.0, 2.0), math.sqrt(2.0) * 0.1)
        np.testing.assert_allclose(aposteriori_bound(0.25, 2.0, 1.0), 0.125)

    def test_invalid_inputs(self):
        with pytest.raises(InputError):
            aposteriori_bound(0.1, 0.0, 2.0)
        with pytest.raises(InputError):
            aposteriori_bound(-0.1, 1.0, 2.0)

    def test_regularized_bound(self):
        # p = 1: C·ε(1+τ) = 2·ε·(1+τ) = 0.02
        np.testing.assert_allclose(aposteriori_bound_regularized(0.1, 1.0, 1.0, 1, 0.005, 1.0), 0.12)

    def test_apriori_bound(self):
        np.testing.assert_allclose(apriori_bound(1.0, 2.0, 1.0, 2.0, 0.5), 2.0)

    def test_soundness_flags(self):
        good = bound_soundness(_report(0.01, v_error=0.1), 1.0, 2.0, 1.0, 0.01)
        assert good.flags["holds"]
        bad = bound_soundness(_report(0.01, v_error=0.2), 1.0, 2.0, 0.5, 0.01)
        assert not bad.flags["holds"]
        assert bad.flags["within_factor"]
        assert bad.flags["tau_below_one"]


class TestHpBound:
    def test_value(self):
        report = hp_bound_report(_report(0.01), 1.0, 0.01, 0.0)
        np.testing.assert_allclose(report.value, 0.2)
        assert report.constants["projection_deficit"] == 0.01

    def test_negative_deficit(self):
        with pytest.raises(NumericError):
            hp_bound_report(0.01, 1.0, -1e-6, 0.0)

    def test_missing_final_loss(self):
        with pytest.raises(InputError):
            hp_bound_report(RunReport("x", {}, {}, "mlp", {}), 1.0, 0.0, 0.0)


class TestDiscreteBounds:
    def test_q_probability(self):
        q, vacuous = q_probability(1, 0, 0.1, 1.0, 1.0, 2.0)
        assert vacuous
        assert q < 0.0
        q, vacuous = q_probability(10**7, 10**7, 0.1, 1.0, 1.0, 2.0)
        assert not vacuous
        assert q > 0.99

    def test_calibrated_delta_hits_the_confidence(self):
        delta = calibrated_delta(500, 1.5, 2.0, 0.9)
        q, _ = q_probability(500, 0, delta, 1.5, 1.0, 2.0)
        np.testing.assert_allclose(q, 0.9)

    def test_calibrated_delta_rejects_bad_confidence(self):
        with pytest.raises(InputError):
            calibrated_delta(10, 1.0, 2.0, 1.0)

    def test_delta_schedule(self):
        np.testing.assert_allclose(delta_schedule(100, 0.25), 2.0 / math.sqrt(10.0))
        with pytest.raises(InputError):
            delta_schedule(100, 0.5)

    def test_bound_one(self):
        np.testing.assert_allclose(discrete_bound_I(1.0, 1.0, 0.02, 0.02), 5.0 * math.sqrt(2.0) * math.sqrt(0.02))

    def test_bound_two(self):
        report = discrete_bound_report(0.02, 1.0, 2.0, (0.01, 0.0), 0.04, 1.0, 1.0, (64, 0))
        np.testing.assert_allclose(report.value, aposteriori_bound(0.02 + 0.02 + 0.04, 1.0, 2.0))
        assert report.flags["vacuous"]
        assert report.name == "discrete_II"


class TestRademacher:
    def test_single_sample_constant_family(self):
        mean, stderr = estimate_rademacher([lambda x: np.ones(x.shape[0])], UNIFORM, UNIT, 1, 16, 2, seed=0)
        assert mean == 1.0
        assert stderr == 0.0

    def test_zero_family(self):
        mean, _ = estimate_rademacher([lambda x: np.zeros(x.shape[0])], UNIFORM, UNIT, 50, 8, 2, seed=0)
        assert mean == 0.0

    def test_random_walk_scaling(self):
        mean, _ = estimate_rademacher([lambda x: np.ones(x.shape[0])], UNIFORM, UNIT, 100, 400, 5, seed=1)
        # E|S_M|/M ≈ sqrt(2/(πM))
        np.testing.assert_allclose(mean, math.sqrt(2.0 / (PI * 100)), rtol=0.1)

    def test_invalid_arguments(self):
        with pytest.raises(InputError):
            estimate_rademacher([], UNIFORM, UNIT, 10, 4, 1, seed=0)
        with pytest.raises(InputError):
            estimate_rademacher([lambda x: x[:, 0]], UNIFORM, UNIT, 0, 4, 1, seed=0)


class TestAudits:
    def test_residual_caps(self, poisson1d):
        audit = residual_cap_audit(poisson1d, constant_field(0.0, 1), cap_r=5.0)
        np.testing.assert_allclose(audit["G_r"], PI**2)
        assert audit["G_b"] == 0.0
        assert not audit["within"]

    def test_loss_gap_rows(self, poisson1d):
        models = [constant_field(0.0, 1), AnalyticFunction(lambda x: x[0] * (1.0 - x[0]), 1)]
        rows, _ = loss_gap_audit(poisson1d, models, 2.0, 1.0, [16, 64], trials=4, seed=0, n_sign_trials=8)
        assert [r.m for r in rows] == [16, 64]
        for row in rows:
            assert 0.0 <= row.coverage <= 1.0
            assert row.rhs > 0.0
            assert row.gap_mean >= 0.0

    @pytest.mark.slow
    def test_loss_gap_is_covered(self, poisson1d):
        models = [
            constant_field(0.0, 1),
            AnalyticFunction(lambda x: x[0] * (1.0 - x[0]), 1),
            mlp_model(MlpArch((1, 8, 1)), seed=0),
        ]
        rows, _ = loss_gap_audit(poisson1d, models, 2.0, 1.0, [32, 128, 512], trials=40, seed=0, n_sign_trials=16)
        for row in rows:
            assert row.coverage >= 0.95, row


class TestBernstein:
    def test_trapezoid_norm(self):
        region = box([-1.0], [1.0])
        np.testing.assert_allclose(trapezoid_norm_sq(lambda x: np.ones(x.shape[0]), region, 8), 2.0)

    @pytest.mark.slow
    def test_constants_and_equivalence(self):
        rows = bernstein_probe([2.0, 8.0], 20, seed=0)
        assert rows[1].ratio_over_m <= 3.0 * rows[0].ratio_over_m
        for row in rows:
            assert row.equivalence_pass >= 0.95
            assert row.m_r >= 1
