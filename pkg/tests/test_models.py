from __future__ import annotations

import math

import numpy as np
import pytest

from rm_lab.core import autodiff as ad
from rm_lab.core.const import Activation, ModelKind
from rm_lab.core.error import InputError
from rm_lab.core.quadrature import make_rng
from rm_lab.models import (
    MlpArch,
    RbfArch,
    embed_arch,
    hessian_entry,
    load_checkpoint,
    mlp_model,
    model_eval,
    rbf_model,
    sample_rbf_member,
    save_checkpoint,
    unit_path_norm_family,
)


class TestMlp:
    def test_param_count(self):
        assert MlpArch((2, 5, 3, 1)).param_count == (5 * 2 + 5) + (3 * 5 + 3) + (1 * 3 + 1)

    def test_arch_validation(self):
        with pytest.raises(InputError):
            MlpArch((1, 4, 2))
        with pytest.raises(InputError):
            MlpArch((1,))

    def test_jet_matches_finite_differences(self, rng):
        model = mlp_model(MlpArch((2, 6, 4, 1), Activation.TANH), seed=3)
        points = rng.uniform(-1.0, 1.0, size=(4, 2))
        jet = model.jet(points)
        h = 1e-5
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = h
            first = (model.value(points + step) - model.value(points - step)) / (2.0 * h)
            np.testing.assert_allclose(jet.d1[axis], first, rtol=1e-6, atol=1e-9)
        h = 1e-4
        step0, step1 = np.array([h, 0.0]), np.array([0.0, h])
        mixed = (
            model.value(points + step0 + step1)
            - model.value(points + step0 - step1)
            - model.value(points - step0 + step1)
            + model.value(points - step0 - step1)
        ) / (4.0 * h * h)
        np.testing.assert_allclose(hessian_entry(jet, 0, 1), mixed, rtol=1e-4, atol=1e-6)

    @pytest.mark.parametrize("activation", list(Activation))
    def test_taped_and_plain_paths_agree(self, activation):
        model = mlp_model(MlpArch((1, 5, 1), activation), seed=0)
        points = np.linspace(-0.8, 0.8, 7).reshape(-1, 1)
        plain = model.jet(points)
        tape = ad.Tape()
        taped = model.bind([tape.leaf(t) for t in model.theta]).jet(points).untaped()
        np.testing.assert_allclose(taped.value, plain.value, rtol=1e-12)
        np.testing.assert_allclose(taped.d1[0], plain.d1[0], rtol=1e-12)
        np.testing.assert_allclose(taped.d2[0], plain.d2[0], rtol=1e-10, atol=1e-14)

    def test_model_eval_single_point(self):
        model = mlp_model(MlpArch((2, 3, 1)), seed=1)
        jet = model_eval(model, [0.2, -0.1])
        np.testing.assert_allclose(jet.value, model.value(np.array([[0.2, -0.1]]))[0])

    def test_model_eval_rejects_wrong_dimension(self):
        with pytest.raises(InputError):
            model_eval(mlp_model(MlpArch((2, 3, 1)), seed=1), [0.2, 0.1, 0.0])

    def test_envelope_vanishes_at_radius(self):
        model = mlp_model(MlpArch((1, 4, 1)), seed=2, envelope_radius=1.0)
        np.testing.assert_allclose(model.value(np.array([[-1.0], [1.0], [1.5]])), 0.0, atol=1e-15)

    def test_seeded_initialization_is_reproducible(self):
        arch = MlpArch((1, 8, 1))
        np.testing.assert_array_equal(mlp_model(arch, 5).theta, mlp_model(arch, 5).theta)
        assert not np.array_equal(mlp_model(arch, 5).theta, mlp_model(arch, 6).theta)


class TestEmbedding:
    def test_wider_network_has_same_realization(self, rng):
        small = mlp_model(MlpArch((1, 4, 1)), seed=0)
        big = embed_arch(small, MlpArch((1, 9, 1)))
        points = rng.uniform(-1.0, 1.0, size=(10, 1))
        np.testing.assert_allclose(big.value(points), small.value(points), rtol=1e-14)
        assert big.theta.size == MlpArch((1, 9, 1)).param_count

    def test_multi_layer_embedding(self, rng):
        small = mlp_model(MlpArch((2, 3, 2, 1)), seed=4)
        big = embed_arch(small, MlpArch((2, 5, 6, 1)))
        points = rng.uniform(-1.0, 1.0, size=(6, 2))
        np.testing.assert_allclose(big.value(points), small.value(points), rtol=1e-14)

    def test_seeded_embedding_wakes_the_new_units(self, rng):
        small = mlp_model(MlpArch((1, 4, 1)), seed=0)
        big = embed_arch(small, MlpArch((1, 9, 1)), seed=3)
        points = rng.uniform(-1.0, 1.0, size=(10, 1))
        np.testing.assert_allclose(big.value(points), small.value(points), rtol=1e-13, atol=1e-15)
        # layout: 9 hidden weights, 9 hidden biases, 9 output weights, 1 output bias
        assert np.all(big.theta[4:9] != 0.0)
        assert np.all(big.theta[22:27] == 0.0)
        deep = mlp_model(MlpArch((2, 3, 2, 1)), seed=4)
        wide = embed_arch(deep, MlpArch((2, 5, 6, 1)), seed=3)
        pairs = rng.uniform(-1.0, 1.0, size=(6, 2))
        np.testing.assert_allclose(wide.value(pairs), deep.value(pairs), rtol=1e-13, atol=1e-15)

    def test_nesting_violations(self):
        small = mlp_model(MlpArch((1, 4, 1)), seed=0)
        with pytest.raises(InputError):
            embed_arch(small, MlpArch((1, 3, 1)))
        with pytest.raises(InputError):
            embed_arch(small, MlpArch((1, 4, 4, 1)))
        with pytest.raises(InputError):
            embed_arch(small, MlpArch((1, 8, 1), Activation.SIN))

    def test_contains(self):
        assert MlpArch((1, 8, 8, 1)).contains(MlpArch((1, 4, 8, 1)))
        assert not MlpArch((1, 8, 1)).contains(MlpArch((1, 4, 4, 1)))

    def test_shallower_arch_is_nested_but_not_embeddable(self):
        big = MlpArch((1, 4, 4, 1))
        assert big.contains(MlpArch((1, 4, 1)))
        assert not big.contains(MlpArch((1, 4, 1)), same_depth=True)
        assert big.contains(MlpArch((1, 2, 3, 1)), same_depth=True)
        with pytest.raises(InputError, match="across depths"):
            embed_arch(mlp_model(MlpArch((1, 4, 1)), seed=0), big)


class TestRbf:
    def test_value_and_laplacian(self):
        model = rbf_model([[0.0], [1.5]], m=2.0, coeffs=[1.0, -0.5])
        x = np.array([[0.3], [1.0]])
        jet = model.jet(x)
        g = np.exp(-(x[:, 0] ** 2)) - 0.5 * np.exp(-((x[:, 0] - 1.5) ** 2))
        np.testing.assert_allclose(jet.value, g)
        second = (4.0 * x[:, 0] ** 2 - 2.0) * np.exp(-(x[:, 0] ** 2)) - 0.5 * (
            4.0 * (x[:, 0] - 1.5) ** 2 - 2.0
        ) * np.exp(-((x[:, 0] - 1.5) ** 2))
        np.testing.assert_allclose(jet.laplacian(), second)

    def test_separation_is_enforced(self):
        with pytest.raises(InputError):
            rbf_model([[0.0], [0.4]], m=2.0, coeffs=[1.0, 1.0])

    def test_term_count_is_bounded(self):
        arch = RbfArch(np.linspace(0.0, 30.0, 4).reshape(-1, 1), 1.0)
        with pytest.raises(InputError):
            arch.validate()

    def test_random_member_respects_constraints(self):
        rng = make_rng(0)
        for m in (2.0, 4.0, 8.0):
            for _ in range(20):
                member = sample_rbf_member(m, rng)
                centers = member.arch.centers[:, 0]
                assert np.all(np.abs(centers) <= 1.0 + 1e-12)
                assert member.arch.n_terms <= math.exp(m * m)
                if centers.size > 1:
                    assert np.min(np.diff(np.sort(centers))) > 1.0 / m


class TestFamiliesAndCheckpoints:
    def test_unit_path_norm(self):
        family = unit_path_norm_family(5, 6, seed=0)
        assert len(family) == 5
        for member in family:
            w, b, v = member.theta[:6], member.theta[6:12], member.theta[12:18]
            np.testing.assert_allclose(np.sum(np.abs(v) * (np.abs(w) + np.abs(b))), 1.0)

    @pytest.mark.parametrize("kind", [ModelKind.MLP, ModelKind.GAUSSIAN_RBF])
    def test_checkpoint_round_trip(self, tmp_path, kind):
        if kind is ModelKind.MLP:
            model = mlp_model(MlpArch((1, 4, 1)), seed=9, envelope_radius=1.0)
        else:
            model = rbf_model([[-0.5], [0.5]], 2.0, [0.3, 0.7])
        path = tmp_path / "model.checkpoint.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        points = np.linspace(-0.9, 0.9, 5).reshape(-1, 1)
        np.testing.assert_array_equal(loaded.value(points), model.value(points))
        assert loaded.kind is kind
