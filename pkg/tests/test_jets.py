from __future__ import annotations

import numpy as np
import pytest

from rm_lab.core import autodiff as ad
from rm_lab.core import jets
from rm_lab.core.error import InputError, JetDomainError
from rm_lab.core.jets import AnalyticFunction, Jet2, jet_apply, jet_seed, tri_index


def _second_difference(fn, x: float, h: float = 1e-4) -> tuple[float, float]:
    first = (fn(x + h) - fn(x - h)) / (2.0 * h)
    second = (fn(x + h) - 2.0 * fn(x) + fn(x - h)) / (h * h)
    return first, second


class TestJetArithmetic:
    def test_tri_index_is_row_major_upper_triangle(self):
        assert [tri_index(i, j, 3) for i in range(3) for j in range(i, 3)] == list(range(6))
        assert tri_index(2, 0, 3) == tri_index(0, 2, 3)

    def test_product_of_coordinates(self):
        points = np.array([[0.3, -0.4], [1.2, 0.5], [-0.7, 2.0]])
        f = AnalyticFunction(lambda c: jets.sin(c[0]) * c[1] * c[1], 2)
        jet = f.jet(points)
        x, y = points[:, 0], points[:, 1]
        np.testing.assert_allclose(jet.value, np.sin(x) * y**2)
        np.testing.assert_allclose(jet.d1[0], np.cos(x) * y**2)
        np.testing.assert_allclose(jet.d1[1], 2.0 * np.sin(x) * y)
        np.testing.assert_allclose(jet.hess(0, 0), -np.sin(x) * y**2)
        np.testing.assert_allclose(jet.hess(0, 1), 2.0 * np.cos(x) * y)
        np.testing.assert_allclose(jet.hess(1, 1), 2.0 * np.sin(x))
        np.testing.assert_allclose(jet.laplacian(), -np.sin(x) * y**2 + 2.0 * np.sin(x))

    @pytest.mark.parametrize(
        ("build", "plain"),
        [
            (lambda u: jets.tanh(jets.softplus(u)), lambda x: np.tanh(np.logaddexp(0.0, x))),
            (lambda u: jets.exp(u * u) / (u + 3.0), lambda x: np.exp(x * x) / (x + 3.0)),
            (lambda u: jets.log(u + 2.0) * jets.cos(u), lambda x: np.log(x + 2.0) * np.cos(x)),
            (lambda u: jets.sqrt(u * u + 1.0) ** 1.5, lambda x: (x * x + 1.0) ** 0.75),
            (lambda u: 1.0 / (2.0 - u), lambda x: 1.0 / (2.0 - x)),
        ],
    )
    def test_chain_rule_against_finite_differences(self, build, plain):
        for x in (-0.6, 0.1, 0.9):
            jet = build(jet_seed(x, 0))
            first, second = _second_difference(plain, x)
            np.testing.assert_allclose(jet.value, plain(x), rtol=1e-12)
            np.testing.assert_allclose(jet.d1[0], first, rtol=1e-6)
            np.testing.assert_allclose(jet.d2[0], second, rtol=1e-5, atol=1e-6)

    def test_pos_pow_vanishes_outside_support(self):
        points = np.array([[-1.5], [-0.5], [0.0], [0.5], [1.5]])
        jet = AnalyticFunction(lambda c: jets.pos_pow(1.0 - c[0] * c[0], 0.75), 1).jet(points)
        inside = np.abs(points[:, 0]) < 1.0
        np.testing.assert_allclose(np.asarray(jet.value)[~inside], 0.0)
        np.testing.assert_allclose(np.asarray(jet.value)[inside], (1.0 - points[inside, 0] ** 2) ** 0.75)
        np.testing.assert_allclose(np.asarray(jet.d1[0])[~inside], 0.0)

    def test_vanishing_derivatives_stay_literal_zeros(self):
        jet = Jet2.constant(2.0, 2) * jet_seed([0.1, 0.2], 0)
        assert ad.is_zero(jet.d1[1])
        assert all(ad.is_zero(c) for c in jet.d2)


class TestJetOverTape:
    def test_parameter_gradient_of_spatial_laplacian(self):
        points = np.linspace(0.1, 0.9, 5).reshape(-1, 1)

        def loss(p):
            x = jet_seed(points, 0)
            u = jets.sin(x * p[0]) * p[1]
            return ad.total(u.laplacian() * u.laplacian())

        a, b = 1.3, 0.7
        value, grad = ad.grad_params(loss, [a, b])
        x = points[:, 0]
        lap = -(a**2) * b * np.sin(a * x)
        np.testing.assert_allclose(value, np.sum(lap**2))
        dlap_da = -2.0 * a * b * np.sin(a * x) - a**2 * b * x * np.cos(a * x)
        np.testing.assert_allclose(grad, [np.sum(2.0 * lap * dlap_da), np.sum(2.0 * lap * lap / b)], rtol=1e-12)

    def test_untaped_copy(self):
        tape = ad.Tape()
        w = tape.leaf(2.0)
        jet = (jet_seed(0.5, 0) * w) * (jet_seed(0.5, 0) * w)
        plain = jet.untaped()
        np.testing.assert_allclose([plain.value, plain.d1[0], plain.d2[0]], [1.0, 4.0, 8.0])


class TestJetErrors:
    def test_wrong_arity(self):
        with pytest.raises(InputError):
            jet_apply("add", [jet_seed(0.1, 0)])

    def test_unknown_primitive(self):
        with pytest.raises(InputError):
            jet_apply("gamma", [jet_seed(0.1, 0)])

    def test_axis_out_of_range(self):
        with pytest.raises(InputError):
            jet_seed([0.1, 0.2], axis=2)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            jet_seed([0.1, 0.2], 0) + jet_seed([0.1, 0.2, 0.3], 0)

    def test_domain_errors(self):
        with pytest.raises(JetDomainError):
            jets.sqrt(jet_seed(-1.0, 0))
        with pytest.raises(JetDomainError):
            jets.log(jet_seed(0.0, 0))
        with pytest.raises(JetDomainError):
            jet_seed(0.0, 0) / 0.0


@pytest.fixture
def asinh_primitive():
    """asinh registered at both levels as a stand-in for an exotic activation."""
    ad.register_primitive("asinh", ad.ReverseRule(np.arcsinh, lambda out, a: (1.0 / np.sqrt(1.0 + a * a),)))

    def rule(u: Jet2) -> Jet2:
        v = u.value
        s = 1.0 + v * v
        return jets.chain(u, ad.apply_primitive("asinh", v), ad.power(s, -0.5), -v * ad.power(s, -1.5))

    jets.register_jet_primitive("asinh", rule)
    yield "asinh"
    ad.REVERSE_RULES.pop("asinh")
    jets.JET_RULES.pop("asinh")
    jets._ARITY.pop("asinh")


class TestRegisteredPrimitive:
    def test_untaped_evaluation(self, asinh_primitive):
        np.testing.assert_allclose(ad.apply_primitive(asinh_primitive, 0.5), np.arcsinh(0.5))
        with pytest.raises(InputError):
            ad.apply_primitive("acosh", 0.5)

    def test_jet_level(self, asinh_primitive):
        out = jet_apply(asinh_primitive, [jet_seed(0.5, 0)])
        np.testing.assert_allclose(
            [out.value, out.d1[0], out.d2[0]], [np.arcsinh(0.5), 1.25**-0.5, -0.5 * 1.25**-1.5], rtol=1e-14
        )

    def test_reverse_level(self, asinh_primitive):
        value, grad = ad.grad_params(lambda p: ad.apply_primitive(asinh_primitive, p[0]) * p[1], [0.3, 2.0])
        np.testing.assert_allclose(value, 2.0 * np.arcsinh(0.3))
        np.testing.assert_allclose(grad, [2.0 / np.sqrt(1.09), np.arcsinh(0.3)], rtol=1e-14)

    def test_second_derivative_through_the_tape(self, asinh_primitive):
        x = 0.5

        def uxx(theta: float) -> float:
            # d²/dx² asinh(θx) = −θ³x(1 + θ²x²)^{−3/2}
            return -(theta**3) * x * (1.0 + (theta * x) ** 2) ** -1.5

        def loss(p):
            return jet_apply(asinh_primitive, [jet_seed(x, 0) * p[0]]).d2[0]

        value, grad = ad.grad_params(loss, [1.3], check_replay=True)
        np.testing.assert_allclose(value, uxx(1.3), rtol=1e-12)
        h = 1e-5
        np.testing.assert_allclose(grad[0], (uxx(1.3 + h) - uxx(1.3 - h)) / (2.0 * h), rtol=1e-6)
