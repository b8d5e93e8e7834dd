"""Finite-difference verification of every backward rule.

All checks run on float64 graphs with central differences; tolerances are
relative 1e-4 for single ops and 1e-3 for full-model composites.
"""

import numpy as np
import pytest

from pkge.gradcheck import check_gradients, numeric_grad
from pkge.model import ModelConfig, build_model, multi_head_attention, scaled_dot_attention
from pkge.tensor import (absolute, add, clip, concat, dropout, gather_rows,
                         layer_norm, log, matmul, mul, narrow, reduce_mean,
                         reduce_sum, relu, reshape, sigmoid, softmax_lastdim,
                         sqrt, transpose)
from pkge.training import bce_smoothed_loss, seed_streams

RNG = np.random.default_rng(42)

PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3


def check(fn, params, tol=PRIMITIVE_TOL, h=1e-4):
    worst = check_gradients(fn, params, h=h, rtol=tol, atol=1e-10)
    assert worst < tol
    return worst


class TestElementwiseGrads:
    def test_add_mul_broadcast(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal(4)
        check(lambda x, y: reduce_sum(mul(add(x, y), y)), [a, b])

    def test_log(self):
        x = RNG.uniform(0.5, 2.0, size=(6,))
        check(lambda t: reduce_sum(log(t)), [x])

    def test_sqrt(self):
        x = RNG.uniform(0.5, 4.0, size=(6,))
        check(lambda t: reduce_sum(sqrt(t)), [x])

    def test_abs_away_from_kink(self):
        x = RNG.standard_normal(8)
        x[np.abs(x) < 0.1] = 0.5
        check(lambda t: reduce_sum(absolute(t)), [x])

    def test_relu_away_from_kink(self):
        x = RNG.standard_normal(8)
        x[np.abs(x) < 0.1] = -0.5
        check(lambda t: reduce_sum(relu(t)), [x])

    def test_clip_interior_and_exterior(self):
        x = np.array([-2.0, -0.4, 0.3, 1.7])
        check(lambda t: reduce_sum(mul(clip(t, -1.0, 1.0), 3.0)), [x])

    def test_sigmoid(self):
        x = RNG.standard_normal((3, 3)) * 3
        check(lambda t: reduce_sum(sigmoid(t)), [x])


class TestStructuralGrads:
    def test_matmul(self):
        a = RNG.standard_normal((4, 5))
        b = RNG.standard_normal((5, 3))
        check(lambda x, y: reduce_sum(matmul(x, y)), [a, b])

    def test_matmul_batched_broadcast(self):
        a = RNG.standard_normal((2, 3, 4))
        b = RNG.standard_normal((4, 3))
        check(lambda x, y: reduce_sum(mul(matmul(x, y), 0.5)), [a, b])

    def test_reshape_transpose(self):
        x = RNG.standard_normal((2, 6))
        check(lambda t: reduce_sum(mul(transpose(reshape(t, (3, 4))),
                                       RNG_CONST)), [x])

    def test_concat(self):
        a = RNG.standard_normal((2, 2))
        b = RNG.standard_normal((2, 3))
        w = RNG.standard_normal((2, 5))
        check(lambda x, y: reduce_sum(mul(concat([x, y], axis=1), w)), [a, b])

    def test_narrow(self):
        x = RNG.standard_normal((3, 6))
        check(lambda t: reduce_sum(mul(narrow(t, 1, 2, 3), 2.0)), [x])

    def test_gather_rows_with_duplicates(self):
        table = RNG.standard_normal((5, 3))
        ids = np.array([0, 2, 2, 4])
        w = RNG.standard_normal((4, 3))
        check(lambda t: reduce_sum(mul(gather_rows(t, ids), w)), [table])

    def test_reductions(self):
        x = RNG.standard_normal((3, 4))
        check(lambda t: reduce_sum(mul(reduce_mean(t, axis=1), 2.0)), [x])
        check(lambda t: reduce_sum(reduce_sum(t, axis=0, keepdims=True)), [x])


RNG_CONST = np.random.default_rng(9).standard_normal((4, 3))


class TestNormalizationGrads:
    def test_softmax(self):
        x = RNG.standard_normal((3, 5)) * 2
        w = RNG.standard_normal((3, 5))
        check(lambda t: reduce_sum(mul(softmax_lastdim(t), w)), [x])

    def test_layer_norm_all_inputs(self):
        x = RNG.standard_normal((4, 6))
        gamma = RNG.uniform(0.5, 1.5, size=6)
        beta = RNG.standard_normal(6)
        w = RNG.standard_normal((4, 6))
        check(lambda a, g, b: reduce_sum(mul(layer_norm(a, g, b), w)),
              [x, gamma, beta])

    def test_dropout_fixed_mask(self):
        x = RNG.standard_normal((5, 5))

        def fn(t):
            rng = np.random.default_rng(17)   # same mask every call
            return reduce_sum(dropout(t, 0.4, training=True, rng=rng))

        check(fn, [x])


class TestCompositeGrads:
    def test_scaled_dot_attention(self):
        q = RNG.standard_normal((3, 4))
        k = RNG.standard_normal((5, 4))
        v = RNG.standard_normal((5, 4))
        w = RNG.standard_normal((3, 4))
        check(lambda a, b, c: reduce_sum(mul(scaled_dot_attention(a, b, c, 4.0), w)),
              [q, k, v])

    def test_multi_head_attention(self):
        d = 6
        xq = RNG.standard_normal((2, d))
        xkv = RNG.standard_normal((3, d))
        mats = [RNG.standard_normal((d, d)) * 0.5 for _ in range(4)]
        w = RNG.standard_normal((2, d))

        def fn(a, b, wq, wk, wv, wo):
            out = multi_head_attention(a, b, wq, wk, wv, wo, heads=2, denom=6.0)
            return reduce_sum(mul(out, w))

        check(fn, [xq, xkv] + mats)

    def test_bce_loss_grad(self):
        scores_logits = RNG.standard_normal((2, 7))
        targets = np.zeros((2, 7), dtype=np.float32)
        targets[0, 1] = 1.0
        targets[1, [2, 5]] = 1.0
        check(lambda t: bce_smoothed_loss(sigmoid(t), targets, 0.1),
              [scores_logits])


def model_loss_fn(model, ents, rels, targets, eps=0.1):
    """Loss of a model as a pure function of its parameter arrays."""
    names = model.params.names()

    def fn(*tensors):
        saved = dict(model.params._params)
        for n, t in zip(names, tensors):
            model.params._params[n] = t
        try:
            return bce_smoothed_loss(model.score_all(ents, rels), targets, eps)
        finally:
            model.params._params.update(saved)

    arrays = [model.params[n].data.astype(np.float64) for n in names]
    return fn, arrays


class TestFullModelGrads:
    ENTS = np.array([0, 1])
    RELS = np.array([0, 2])

    def _targets(self, n):
        t = np.zeros((2, n), dtype=np.float32)
        t[0, 3] = 1.0
        t[1, [1, 4]] = 1.0
        return t

    @pytest.mark.parametrize("kind", ["patreformer", "transe", "distmult"])
    def test_models_end_to_end(self, kind):
        cfg = ModelConfig(d_e=8, d_r=8, d=4, heads=2, layers=1, d_f=8,
                          p1=0.0, p2=0.0, p3=0.0)
        model = build_model(kind, cfg, 5, 4, seed_streams(3)["init"])
        fn, arrays = model_loss_fn(model, self.ENTS, self.RELS, self._targets(5))
        worst = check_gradients(fn, arrays, h=1e-4, rtol=MODEL_TOL, atol=1e-10)
        assert worst < MODEL_TOL

    @pytest.mark.parametrize("attention", ["full_self", "separate_self"])
    def test_attention_variants(self, attention):
        cfg = ModelConfig(d_e=8, d_r=8, d=4, heads=2, layers=1, d_f=8,
                          p1=0.0, p2=0.0, p3=0.0, attention=attention)
        model = build_model("patreformer", cfg, 5, 4, seed_streams(3)["init"])
        fn, arrays = model_loss_fn(model, self.ENTS, self.RELS, self._targets(5))
        worst = check_gradients(fn, arrays, h=1e-4, rtol=MODEL_TOL, atol=1e-10)
        assert worst < MODEL_TOL

    def test_numeric_grad_matches_manual(self):
        # d/dx of sum(x^2) is 2x; the helper itself must be trustworthy.
        x = np.array([1.0, -2.0, 3.0])
        fd = numeric_grad(lambda t: reduce_sum(mul(t, t)), [x], 0, h=1e-5)
        np.testing.assert_allclose(fd, 2 * x, rtol=1e-7)
