from __future__ import annotations

import numpy as np
import pytest

from rm_lab.core import autodiff as ad
from rm_lab.core.error import InputError, JetDomainError, NumericError


class TestTape:
    def test_scalar_gradient(self):
        value, grad = ad.grad_params(lambda p: p[0] * p[1] + ad.sin(p[0]), [1.5, -0.5])
        np.testing.assert_allclose(value, -0.75 + np.sin(1.5))
        np.testing.assert_allclose(grad, [-0.5 + np.cos(1.5), 1.5])

    def test_quotient_and_transcendental_chain(self):
        def loss(p):
            return ad.exp(p[0]) / p[1] + ad.log(p[1]) * ad.tanh(p[0])

        a, b = 0.3, 2.0
        value, grad = ad.grad_params(loss, [a, b])
        np.testing.assert_allclose(value, np.exp(a) / b + np.log(b) * np.tanh(a))
        expected = [
            np.exp(a) / b + np.log(b) * (1.0 - np.tanh(a) ** 2),
            -np.exp(a) / b**2 + np.tanh(a) / b,
        ]
        np.testing.assert_allclose(grad, expected, rtol=1e-12)

    def test_batched_nodes_reduce_with_total(self):
        x = np.linspace(0.0, 1.0, 11)
        value, grad = ad.grad_params(lambda p: ad.total((p[0] * x + p[1]) ** 2), [2.0, 0.5])
        r = 2.0 * x + 0.5
        np.testing.assert_allclose(value, np.sum(r**2))
        np.testing.assert_allclose(grad, [np.sum(2.0 * r * x), np.sum(2.0 * r)])

    def test_matvec_pullback(self, rng):
        matrix = rng.normal(size=(3, 5))
        v = rng.normal(size=5)
        value, grad = ad.grad_params(lambda p: ad.total(ad.matvec(matrix, p[0] * v)), [1.5])
        np.testing.assert_allclose(value, 1.5 * np.sum(matrix @ v))
        np.testing.assert_allclose(grad, [np.sum(matrix @ v)])

    def test_constant_loss_has_zero_gradient(self):
        value, grad = ad.grad_params(lambda p: 3.0, [1.0, 2.0])
        assert value == 3.0
        np.testing.assert_array_equal(grad, np.zeros(2))

    def test_replay_matches_forward(self):
        x = np.linspace(-1.0, 1.0, 7)
        value, _ = ad.grad_params(
            lambda p: ad.total(ad.sigmoid(p[0] * x) * ad.softplus(p[1] - x)), [0.7, 0.1], check_replay=True
        )
        assert np.isfinite(value)

    def test_replay_reproduces_every_node(self):
        tape = ad.Tape()
        a = tape.leaf(0.5)
        out = ad.cos(a * a)
        values = tape.replay([0.5])
        assert values[out.index] == out.value
        np.testing.assert_allclose(tape.replay([1.0])[out.index], np.cos(1.0))


class TestTapeErrors:
    def test_division_by_zero(self):
        with pytest.raises(JetDomainError):
            ad.grad_params(lambda p: p[0] / (p[1] - 1.0), [1.0, 1.0])

    def test_sqrt_of_negative(self):
        with pytest.raises(JetDomainError):
            ad.grad_params(lambda p: ad.sqrt(p[0]), [-1.0])

    def test_non_finite_loss(self):
        with pytest.raises(NumericError):
            ad.grad_params(lambda p: ad.exp(p[0]), [1000.0])

    def test_loss_must_be_scalar(self):
        x = np.ones(3)
        with pytest.raises(InputError):
            ad.grad_params(lambda p: p[0] * x, [1.0])

    def test_operands_from_different_tapes(self):
        first, second = ad.Tape(), ad.Tape()
        with pytest.raises(InputError):
            first.leaf(1.0) + second.leaf(2.0)

    def test_error_codes(self):
        with pytest.raises(JetDomainError) as info:
            ad.grad_params(lambda p: ad.log(p[0]), [0.0])
        assert info.value.error_code == "JET_DOMAIN"
