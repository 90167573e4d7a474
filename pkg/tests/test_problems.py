from __future__ import annotations

import math

import numpy as np
import pytest

from rm_lab.core import jets
from rm_lab.core.const import Norm, OperatorA, OperatorB
from rm_lab.core.error import ConfigurationError, InputError
from rm_lab.core.jets import AnalyticFunction, constant_field
from rm_lab.core.quadrature import box
from rm_lab.presets import PRESETS, counterexample_adversary, get_preset
from rm_lab.problems import (
    AdvectionCoeffs,
    EllipticCoeffs,
    ProblemSpec,
    apply_A,
    apply_B,
    boundary_weight,
    check_manufactured,
    density_masses,
    interior_residual,
    norm_of,
    probe_stability_constant,
    recast_time_dependent,
)

PI = math.pi


def _advection(b, c, *, eta=None, omega_filling=False, domain=None):
    domain = domain or box([0.0], [1.0])
    d = domain.dim
    return ProblemSpec(
        "custom",
        domain,
        OperatorA.ADVECTION_REACTION,
        OperatorB.INFLOW_TRACE,
        AdvectionCoeffs(b, c, eta=eta, omega_filling=omega_filling),
        constant_field(0.0, d),
        constant_field(0.0, d),
    )


class TestPresets:
    @pytest.mark.parametrize(
        "name", ["poisson1d_sin", "poisson2d_product", "advreac1d_friedrichs", "advreac_spacetime", "poisson1d_zero"]
    )
    def test_manufactured_solutions(self, name):
        check = check_manufactured(get_preset(name), n_points=400)
        assert check.ok, check

    def test_fractional_manufactured_solution(self, fractional):
        check = check_manufactured(fractional, n_points=100, tol=1e-4)
        assert check.ok, check

    def test_density_masses(self, poisson2d, advection1d):
        for prob in (poisson2d, advection1d):
            np.testing.assert_allclose(density_masses(prob), (1.0, 1.0), rtol=1e-12)

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            get_preset("heat3d")

    def test_bad_override(self):
        with pytest.raises(ConfigurationError):
            get_preset("poisson1d_sin", alpha=1.5)

    def test_registry(self):
        assert set(PRESETS) >= {"poisson1d_sin", "advreac1d_friedrichs", "frac_adr_1d"}

    def test_counterexample_adversary_vanishes_on_grid(self):
        prob = get_preset("poisson1d_zero")
        grid = (np.arange(1, 17) / 16.0).reshape(-1, 1)
        res = interior_residual(prob, counterexample_adversary(16), grid)
        np.testing.assert_allclose(res, 0.0, atol=1e-12)


class TestOperators:
    def test_apply_a_at_a_point(self, poisson1d):
        np.testing.assert_allclose(apply_A(poisson1d, poisson1d.exact, 0.25), PI * PI * math.sin(PI / 4.0))

    def test_apply_a_with_variable_coefficients(self):
        a = ((AnalyticFunction(lambda x: x[0] + 1.0, 1),),)
        prob = ProblemSpec(
            "variable",
            box([0.0], [1.0]),
            OperatorA.ELLIPTIC,
            OperatorB.DIRICHLET_TRACE,
            EllipticCoeffs(a=a, b=(constant_field(2.0, 1),), c=constant_field(3.0, 1)),
            constant_field(0.0, 1),
            constant_field(0.0, 1),
        )
        u = AnalyticFunction(lambda x: x[0] * x[0] * x[0], 1)
        x = np.array([0.2, 0.5, 0.9])
        expected = -(x + 1.0) * 6.0 * x + 2.0 * 3.0 * x**2 + 3.0 * x**3
        np.testing.assert_allclose(apply_A(prob, u, x), expected)
        assert prob.certificates["lambda0"] >= 1.0

    def test_points_outside_the_domain(self, poisson1d):
        with pytest.raises(InputError):
            apply_A(poisson1d, poisson1d.exact, 1.5)
        with pytest.raises(InputError):
            apply_B(poisson1d, poisson1d.exact, 0.5)

    def test_trace(self, poisson1d):
        assert apply_B(poisson1d, poisson1d.exact, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_non_elliptic_coefficients(self):
        a = ((constant_field(-1.0, 1),),)
        with pytest.raises(InputError):
            EllipticCoeffs(a=a).certify(box([0.0], [1.0]))


class TestAdvection:
    def test_inflow_boundary(self, advection1d):
        assert len(advection1d.boundary) == 1
        assert advection1d.boundary[0].lower == (0.0,)
        np.testing.assert_allclose(boundary_weight(advection1d, np.array([[0.0]])), [1.0])
        assert advection1d.certificates["mu0"] == pytest.approx(1.0)

    def test_positivity_failure(self):
        with pytest.raises(InputError):
            _advection((constant_field(1.0, 1),), constant_field(0.0, 1))

    def test_lipschitz_weight_route(self):
        eta = AnalyticFunction(lambda x: x[0] * -5.0, 1)
        prob = _advection((constant_field(1.0, 1),), constant_field(0.1, 1), eta=eta)
        assert prob.certificates["mu1"] == pytest.approx(0.1 + 2.5)

    def test_omega_filling_route_is_rejected(self):
        with pytest.raises(ConfigurationError):
            _advection((constant_field(1.0, 1),), constant_field(1.0, 1), omega_filling=True)

    def test_sign_changing_flux_is_rejected(self):
        b = (AnalyticFunction(lambda x: x[1] - 0.5, 2), constant_field(0.0, 2))
        with pytest.raises(ConfigurationError):
            _advection(b, constant_field(1.0, 2), domain=box([0.0, 0.0], [1.0, 1.0]))

    def test_spacetime_recast(self, spacetime):
        labels = sorted(face.label for face in spacetime.boundary)
        assert labels == ["x0=lower", "x1=lower"]
        corner = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])
        np.testing.assert_allclose(spacetime.g.value(corner), spacetime.exact.value(corner), atol=1e-14)

    def test_recast_rejects_bad_horizon(self):
        with pytest.raises(InputError):
            recast_time_dependent(
                box([0.0], [1.0]),
                0.0,
                (constant_field(1.0, 2),),
                constant_field(1.0, 2),
                constant_field(0.0, 1),
                constant_field(0.0, 2),
            )


class TestNorms:
    def test_sobolev_norms_of_sine(self, poisson1d):
        u = poisson1d.exact
        np.testing.assert_allclose(norm_of(poisson1d, u, Norm.L2), math.sqrt(0.5), rtol=1e-8)
        np.testing.assert_allclose(norm_of(poisson1d, u, Norm.H1), math.sqrt(0.5 + PI**2 / 2.0), rtol=1e-8)
        np.testing.assert_allclose(
            norm_of(poisson1d, u, Norm.H2), math.sqrt(0.5 + PI**2 / 2.0 + PI**4 / 2.0), rtol=1e-8
        )

    def test_graph_norm(self, advection1d):
        u = AnalyticFunction(lambda x: x[0], 1)
        # (‖u‖²_{L²} + ‖u′‖²_{L²})^{1/2} for p = 2
        np.testing.assert_allclose(norm_of(advection1d, u, Norm.GRAPH_LP), math.sqrt(1.0 / 3.0 + 1.0), rtol=1e-10)

    def test_c2_norm(self, poisson1d):
        np.testing.assert_allclose(norm_of(poisson1d, poisson1d.exact, Norm.C2), 1.0 + PI + PI**2, rtol=1e-2)


class TestStabilityProbe:
    def test_constant_function_ratio(self, poisson1d):
        probe = probe_stability_constant(poisson1d, [constant_field(1.0, 1)])
        np.testing.assert_allclose(probe.c1_hat, 1.0, rtol=1e-10)
        np.testing.assert_allclose(probe.c2_hat, 1.0, rtol=1e-10)
        assert "over-estimates" in probe.as_dict()["provenance"]

    def test_minimum_over_family(self, poisson1d):
        family = [constant_field(1.0, 1), poisson1d.exact]
        probe = probe_stability_constant(poisson1d, family)
        # ‖A sin(πx)‖ / ‖sin(πx)‖ = π²
        np.testing.assert_allclose(probe.ratios_v[1], PI**2, rtol=1e-8)
        assert probe.c1_hat == min(probe.ratios_v)

    def test_empty_family(self, poisson1d):
        with pytest.raises(InputError):
            probe_stability_constant(poisson1d, [])

    def test_zero_member(self, poisson1d):
        with pytest.raises(InputError):
            probe_stability_constant(poisson1d, [constant_field(0.0, 1)])


class TestJetsInProblems:
    def test_interior_residual_of_exact_solution(self, poisson2d, rng):
        points = rng.uniform(0.0, 1.0, size=(20, 2))
        np.testing.assert_allclose(interior_residual(poisson2d, poisson2d.exact, points), 0.0, atol=1e-12)

    def test_closed_form_uses_jets(self):
        u = AnalyticFunction(lambda x: jets.exp(x[0]), 1)
        np.testing.assert_allclose(u.value(np.array([[0.0], [1.0]])), [1.0, math.e])
