from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from rm_lab.bases import Partition
from rm_lab.core import autodiff as ad
from rm_lab.core.const import LossForm, SampleKind
from rm_lab.core.error import ConfigurationError, InputError
from rm_lab.core.jets import AnalyticFunction, constant_field
from rm_lab.core.quadrature import QuadratureRule, box, grid_samples
from rm_lab.data import LossSpec, minimal_m
from rm_lab.losses import (
    LossObjective,
    evaluate_loss,
    loss_continuous,
    loss_discrete,
    loss_hp_vrm,
    loss_pwconst_weak,
    loss_regularized,
    phi_regularizer,
    projection_deficit,
    regularization_check,
    regularization_error_constant,
    residual_l2_squared,
    small_epsilon_report,
    training_samples,
)
from rm_lab.models import MlpArch, mlp_model
from rm_lab.presets import counterexample_adversary, get_preset

PI = math.pi
ZERO = constant_field(0.0, 1)
PARABOLA = AnalyticFunction(lambda x: x[0] * (1.0 - x[0]), 1)


class TestLossSpec:
    def test_minimal_m(self):
        assert [minimal_m(p) for p in (1.0, 2.0, 3.0, 4.5)] == [1, 1, 2, 3]

    def test_validation(self):
        with pytest.raises(InputError):
            LossSpec(tau=0.0)
        with pytest.raises(InputError):
            LossSpec(p=0.5)
        with pytest.raises(InputError):
            LossSpec(form=LossForm.HP_VRM, p=3.0)
        with pytest.raises(InputError):
            LossSpec(m=1).m_for(3.0)

    def test_small_tau_warns(self, caplog, monkeypatch):
        # the CLI turns propagation off once it has configured the package logger
        monkeypatch.setattr(logging.getLogger("rm_lab"), "propagate", True)
        with caplog.at_level(logging.WARNING, logger="rm_lab.data"):
            LossSpec(tau=1.0)
            assert not caplog.records
            LossSpec(tau=0.5)
        assert [r.levelno for r in caplog.records] == [logging.WARNING]
        assert "tau=0.5" in caplog.records[0].getMessage()

    def test_describe_is_plain(self):
        out = LossSpec(form="discrete_rm", sample_kind="grid").describe()
        assert out["form"] == "discrete_rm"
        assert out["sample_kind"] == "grid"


class TestCounterexample:
    def test_discrete_loss_vanishes_on_the_grid(self):
        prob = get_preset("poisson1d_zero")
        spec = LossSpec(form=LossForm.DISCRETE_RM, sample_kind=SampleKind.GRID, m_r=16)
        interior, boundary = training_samples(prob, spec)
        loss = loss_discrete(prob, counterexample_adversary(16), None, 1.0, interior, boundary)
        assert loss.total <= 1e-12

    def test_continuous_loss_stays_at_one_half(self):
        prob = get_preset("poisson1d_zero")
        loss = loss_continuous(prob, counterexample_adversary(16), rule=QuadratureRule(8, 64))
        np.testing.assert_allclose(loss.total, 0.5, atol=1e-6)
        assert loss.quadrature_certificate["converged"]


class TestReferenceLosses:
    def test_exact_solution(self, poisson1d):
        assert loss_continuous(poisson1d, poisson1d.exact).total < 1e-20

    def test_l1_loss_of_zero(self, poisson1d):
        # ∫₀¹ π² sin(πx) dx = 2π
        np.testing.assert_allclose(loss_continuous(poisson1d, ZERO, p=1.0).total, 2.0 * PI, rtol=1e-10)

    def test_boundary_part_is_weighted(self, poisson1d):
        u = constant_field(1.0, 1)
        loss = loss_continuous(poisson1d, u, tau=3.0)
        np.testing.assert_allclose(loss.boundary, 1.0, rtol=1e-12)
        np.testing.assert_allclose(loss.total, loss.interior + 3.0, rtol=1e-12)

    def test_samples_outside_the_domain(self, poisson1d):
        outside = grid_samples((box([0.0], [2.0]),), 8)
        with pytest.raises(InputError):
            loss_discrete(poisson1d, ZERO, 2.0, 1.0, outside, None)

    def test_inflow_boundary_weight(self, advection1d):
        spec = LossSpec(form=LossForm.DISCRETE_RM, sample_kind=SampleKind.GRID, m_r=8)
        interior, boundary = training_samples(advection1d, spec)
        loss = loss_discrete(advection1d, advection1d.exact, None, 1.0, interior, boundary)
        assert loss.total < 1e-20


class TestRegularizedLoss:
    def test_phi_matches_power_without_regularization(self):
        x = np.array([0.0, 0.5, 2.0])
        value, deriv = phi_regularizer(x, 3.0, 2, 0.0)
        np.testing.assert_allclose(value, x**3)
        np.testing.assert_allclose(deriv, 3.0 * x**2)

    def test_phi_derivative(self):
        value, deriv = phi_regularizer(1.0, 3.0, 2, 0.1)
        np.testing.assert_allclose(value, 1.0 / 1.1)
        h = 1e-6
        fd = (phi_regularizer(1.0 + h, 3.0, 2, 0.1)[0] - phi_regularizer(1.0 - h, 3.0, 2, 0.1)[0]) / (2.0 * h)
        np.testing.assert_allclose(deriv, fd, rtol=1e-7)

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    @pytest.mark.parametrize("epsilon", [0.1, 0.01, 1e-4])
    def test_phi_bounds_on_a_log_grid(self, p, epsilon):
        x = np.logspace(-3.0, 1.0, 1000)
        m = minimal_m(p)
        value, deriv = phi_regularizer(x, p, m, epsilon)
        power = x**p
        slack = 1e-12 * np.maximum(1.0, power)
        # Ï â¤ x^p â¤ Ï + (2m â p)Îµ x^{pâ1}
        assert np.all(value <= power + slack)
        assert np.all(power <= value + (2 * m - p) * epsilon * x ** (p - 1.0) + slack)
        # pÂ·Ï â¤ xÂ·Ïâ² â¤ 2mÂ·x^p
        assert np.all(p * value <= x * deriv + 2 * m * slack)
        assert np.all(x * deriv <= 2 * m * (power + slack))

    def test_phi_rejects_negative_arguments(self):
        with pytest.raises(InputError):
            phi_regularizer(-0.1, 2.0, 1, 0.1)

    def test_error_constant(self):
        assert regularization_error_constant(1.0, 1, 0.01, 1.0) == pytest.approx(0.04)
        assert regularization_error_constant(3.0, 2, 0.01, 1.0) == pytest.approx(2.0 * 0.01 * 2.0 * 2.0 / 3.0)

    def test_small_epsilon_condition(self):
        assert small_epsilon_report(3.0, 2, 0.1)["ok"]
        assert not small_epsilon_report(3.0, 2, 1.0)["ok"]

    @pytest.mark.parametrize(("p", "m"), [(1.0, 1), (3.0, 2)])
    def test_sandwich(self, poisson1d, p, m):
        check = regularization_check(poisson1d, PARABOLA, p, m, 0.05, 1.0)
        assert check["holds"], check

    def test_zero_epsilon_is_the_plain_loss(self, poisson1d):
        plain = loss_continuous(poisson1d, PARABOLA, 3.0)
        reg = loss_regularized(poisson1d, PARABOLA, 3.0, 2, 0.0, 1.0)
        assert reg.total == plain.total
        assert reg.form == LossForm.REGULARIZED_RM.value


class TestProjectedLosses:
    def test_hp_loss_recovers_the_residual_norm(self, poisson1d):
        partition = Partition.uniform(poisson1d.domain, 4, order=12)
        loss = loss_hp_vrm(poisson1d, ZERO, 1.0, partition)
        np.testing.assert_allclose(loss.interior, PI**4 / 2.0, rtol=1e-8)
        assert projection_deficit(poisson1d, ZERO, partition) < 1e-6

    def test_legendre_deficit_shrinks_with_the_order(self, poisson1d):
        model = mlp_model(MlpArch((1, 8, 1)), seed=0)
        for u in (ZERO, model):
            partitions = [Partition.uniform(poisson1d.domain, 4, order=n) for n in (1, 2, 4, 8, 12)]
            deficits = [projection_deficit(poisson1d, u, partition) for partition in partitions]
            assert all(b <= a + 1e-10 for a, b in zip(deficits, deficits[1:], strict=False)), deficits
        assert deficits[0] > 0.0

    @pytest.mark.slow
    def test_bessel_inequality_for_random_networks(self, poisson1d, rule):
        partition = Partition.uniform(poisson1d.domain, 4, order=4)
        violations = []
        for seed in range(50):
            model = mlp_model(MlpArch((1, 8, 1)), seed=seed)
            deficit = projection_deficit(poisson1d, model, partition, rule)
            scale = max(1.0, residual_l2_squared(poisson1d, model, rule))
            if deficit < -1e-10 * scale:
                violations.append((seed, deficit))
        assert violations == []

    def test_hp_loss_of_exact_solution(self, poisson1d):
        partition = Partition.uniform(poisson1d.domain, 2, order=4)
        assert loss_hp_vrm(poisson1d, poisson1d.exact, 1.0, partition).total < 1e-20

    def test_foreign_partition(self, poisson1d):
        with pytest.raises(InputError):
            loss_hp_vrm(poisson1d, ZERO, 1.0, Partition.uniform(box([0.0], [2.0]), 2))

    def test_integration_by_parts_matches(self, poisson1d):
        partition = Partition.uniform(poisson1d.domain, 5)
        u = AnalyticFunction(lambda x: x[0] * x[0], 1)
        direct = loss_pwconst_weak(poisson1d, u, 1.0, partition)
        weak = loss_pwconst_weak(poisson1d, u, 1.0, partition, integrate_by_parts=True)
        np.testing.assert_allclose(weak.interior, direct.interior, rtol=1e-10)

    def test_integration_by_parts_needs_1d_elliptic(self, advection1d):
        with pytest.raises(ConfigurationError):
            loss_pwconst_weak(advection1d, ZERO, 1.0, Partition.uniform(advection1d.domain, 2), integrate_by_parts=True)


class TestLossObjective:
    @pytest.mark.parametrize(
        "spec",
        [
            LossSpec(form=LossForm.DISCRETE_RM, sample_kind=SampleKind.GRID, m_r=12),
            LossSpec(form=LossForm.HP_VRM, cells=2, order=3),
            LossSpec(form=LossForm.PWCONST_WEAK, cells=3),
        ],
    )
    def test_breakdown_matches_reference(self, poisson1d, spec):
        model = mlp_model(MlpArch((1, 4, 1)), seed=0)
        objective = LossObjective(poisson1d, spec)
        reference = evaluate_loss(poisson1d, model, spec, objective)
        np.testing.assert_allclose(objective.breakdown(model).total, reference.total, rtol=1e-10)

    def test_continuous_objective_is_close_to_adaptive_value(self, poisson1d):
        spec = LossSpec(form=LossForm.CONTINUOUS_RM)
        objective = LossObjective(poisson1d, spec)
        np.testing.assert_allclose(
            objective.breakdown(PARABOLA).total, loss_continuous(poisson1d, PARABOLA).total, rtol=1e-8
        )

    def test_taped_gradient_matches_finite_differences(self, poisson1d):
        model = mlp_model(MlpArch((1, 4, 1)), seed=0)
        objective = LossObjective(poisson1d, LossSpec(form=LossForm.DISCRETE_RM, sample_kind=SampleKind.GRID, m_r=8))
        _, grad = ad.grad_params(lambda p: objective.evaluate(model.bind(p))[0], model.theta)
        h = 1e-6
        for i in (0, 5, model.theta.size - 1):
            step = np.zeros_like(model.theta)
            step[i] = h
            up = objective.breakdown(model.with_theta(model.theta + step)).total
            down = objective.breakdown(model.with_theta(model.theta - step)).total
            np.testing.assert_allclose(grad[i], (up - down) / (2.0 * h), rtol=1e-5, atol=1e-6)

    def test_rule_is_shared(self, poisson1d):
        objective = LossObjective(poisson1d, LossSpec(quad_order=6, quad_panels=3))
        assert objective.rule == QuadratureRule(6, 3)
