from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pagefl import numerics as nm
from pagefl.data import Dataset
from pagefl.flcore import (
    LocalTrainSpec,
    aggregate,
    evaluate,
    global_loss,
    local_train,
    steps_per_epoch,
    validate_weights,
)
from pagefl.numerics import MlpSpec, ShapeError

SPEC = MlpSpec((3, 4), output_head="softmax_logits")


def _data(n=50, d=3, k=4, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), rng.integers(0, k, size=n), k)


def _simplex(n, seed):
    w = np.random.default_rng(seed).random(n) + 0.01
    w /= w.sum()
    return w


class TestWeights:
    def test_valid(self):
        validate_weights([0.25, 0.75])

    @pytest.mark.parametrize("p", [[0.5, 0.6], [0.0, 1.0], [1.2, -0.2], [], [np.nan, 1.0]])
    def test_invalid(self, p):
        with pytest.raises(ShapeError):
            validate_weights(p)

    def test_single_client_weight_one(self):
        validate_weights([1.0])


class TestLocalTrain:
    def test_zero_lr_is_identity(self):
        w = nm.init_params(SPEC, np.random.default_rng(0))
        for alpha in (1, 3, 7):
            out = local_train(SPEC, w, _data(), LocalTrainSpec(alpha, 0.0, 32))
            assert out.tobytes() == w.tobytes()

    def test_does_not_mutate_input(self):
        w = nm.init_params(SPEC, np.random.default_rng(0))
        before = w.copy()
        local_train(SPEC, w, _data(), LocalTrainSpec(2, 0.1, 8))
        assert np.array_equal(w, before)

    @pytest.mark.parametrize("lr", [1e-7, 0.05, 0.5])
    def test_dominant_prox_stays_at_anchor(self, lr):
        anchor = nm.init_params(SPEC, np.random.default_rng(0))
        out = local_train(SPEC, anchor, _data(), LocalTrainSpec(3, lr, 16, prox_mu=1e6), anchor=anchor)
        assert np.max(np.abs(out - anchor)) < 1e-3

    def test_small_prox_close_to_explicit_step(self):
        d = _data(n=1)
        w = nm.init_params(SPEC, np.random.default_rng(1))
        _, g = nm.ce_loss_and_grad(SPEC, w, d.features, d.labels)
        explicit = w - 1e-3 * (g + 1e-3 * (w - 0.0))
        out = local_train(SPEC, w, d, LocalTrainSpec(1, 1e-3, 4, prox_mu=1e-3), anchor=np.zeros_like(w))
        assert np.max(np.abs(out - explicit)) < 1e-9

    def test_prox_needs_anchor(self):
        with pytest.raises(ValueError):
            local_train(SPEC, np.zeros(SPEC.num_params), _data(), LocalTrainSpec(1, 0.1, 8, prox_mu=0.5))

    def test_separable_toy(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(100, 2))
        y = (X[:, 0] + X[:, 1] > 0).astype(int)
        d = Dataset(X, y, 2)
        spec = MlpSpec((2, 2), output_head="softmax_logits")
        w = local_train(spec, np.zeros(spec.num_params), d, LocalTrainSpec(20, 0.1, 32), seed=1)
        assert evaluate(spec, w, d)[0] >= 0.95

    def test_step_count_and_short_batch(self, monkeypatch):
        sizes = []
        real = nm.ce_grad

        def spy(spec, params, X, y):
            sizes.append(len(y))
            return real(spec, params, X, y)

        monkeypatch.setattr(nm, "ce_grad", spy)
        local_train(SPEC, np.zeros(SPEC.num_params), _data(n=70), LocalTrainSpec(3, 0.1, 32))
        assert sizes == [32, 32, 6] * 3
        assert steps_per_epoch(70, 32) == 3

    def test_seeded_determinism(self):
        w = nm.init_params(SPEC, np.random.default_rng(0))
        a = local_train(SPEC, w, _data(), LocalTrainSpec(2, 0.1, 8), seed=5)
        b = local_train(SPEC, w, _data(), LocalTrainSpec(2, 0.1, 8), seed=5)
        c = local_train(SPEC, w, _data(), LocalTrainSpec(2, 0.1, 8), seed=6)
        assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()

    def test_prox_step_matches_manual_arithmetic(self):
        # one sample, one step: w' minimises lr*<g, v> + ||v - w||^2 / 2 + lr*mu/2 ||v - anchor||^2
        d = _data(n=1)
        w = nm.init_params(SPEC, np.random.default_rng(1))
        anchor = np.random.default_rng(2).normal(size=w.size)
        _, g = nm.ce_loss_and_grad(SPEC, w, d.features, d.labels)
        expected = (w - 0.1 * g + 0.05 * anchor) / 1.05
        out = local_train(SPEC, w, d, LocalTrainSpec(1, 0.1, 4, prox_mu=0.5), anchor=anchor)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


class TestEvaluate:
    def test_uniform_model_loss(self):
        acc, loss = evaluate(SPEC, np.zeros(SPEC.num_params), _data())
        assert abs(loss - math.log(4)) < 1e-12

    def test_perfect_labels(self):
        d = _data()
        w = nm.init_params(SPEC, np.random.default_rng(2))
        pred = np.argmax(nm.mlp_forward(SPEC, w, d.features), axis=1)
        acc, _ = evaluate(SPEC, w, Dataset(d.features, pred, 4))
        assert acc == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_recount(self, seed):
        d = _data(seed=seed)
        w = nm.init_params(SPEC, np.random.default_rng(seed))
        correct = 0
        for x, y in zip(d.features, d.labels):
            logits = list(nm.mlp_forward(SPEC, w, x))
            correct += int(logits.index(max(logits)) == y)
        assert evaluate(SPEC, w, d)[0] == correct / len(d)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(SPEC, np.zeros(SPEC.num_params), Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 4))


class TestAggregate:
    def test_two_models(self):
        out = aggregate([np.array([1.0, 0.0]), np.array([0.0, 1.0])], [0.5, 0.5])
        assert np.array_equal(out, [0.5, 0.5])

    @given(st.integers(1, 12), st.integers(0, 10_000))
    def test_identical_copies_exact(self, n, seed):
        m = np.random.default_rng(seed).normal(size=9)
        out = aggregate([m.copy() for _ in range(n)], _simplex(n, seed))
        assert out.tobytes() == m.tobytes()

    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_uniform_is_mean(self, n, seed):
        models = list(np.random.default_rng(seed).normal(size=(n, 6)))
        np.testing.assert_allclose(aggregate(models, np.full(n, 1 / n)), np.mean(models, axis=0), rtol=0, atol=1e-12)

    @given(st.integers(2, 10), st.integers(0, 10_000))
    def test_convexity(self, n, seed):
        models = np.random.default_rng(seed).normal(size=(n, 5))
        out = aggregate(list(models), _simplex(n, seed))
        assert np.all(out >= models.min(axis=0) - 1e-12) and np.all(out <= models.max(axis=0) + 1e-12)

    def test_matches_weighted_sum(self):
        rng = np.random.default_rng(0)
        models = rng.normal(size=(4, 7))
        p = _simplex(4, 1)
        np.testing.assert_allclose(aggregate(list(models), p), p @ models, rtol=0, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            aggregate([np.zeros(2)], [0.5, 0.5])


class TestGlobalLoss:
    def test_arithmetic(self):
        assert global_loss([2.0, 2.0], [0.5, 0.5]) == 2.0

    def test_one_hot_like(self):
        p = np.array([1e-12, 1 - 2e-12, 1e-12])
        assert abs(global_loss([5.0, 3.0, 9.0], p) - 3.0) < 1e-10

    @given(st.integers(1, 20), st.integers(0, 10_000))
    def test_recompute(self, n, seed):
        f = np.random.default_rng(seed).random(n) * 5
        p = _simplex(n, seed + 1) if n > 1 else np.array([1.0])
        assert abs(global_loss(f, p) - float(np.dot(p, f))) <= 1e-12

    @given(st.integers(2, 10), st.integers(0, 10_000), st.integers(0, 9), st.floats(0.001, 3.0))
    def test_monotone(self, n, seed, j, bump):
        f = np.random.default_rng(seed).random(n)
        p = _simplex(n, seed)
        g = f.copy()
        g[j % n] += bump
        assert global_loss(g, p) >= global_loss(f, p)
