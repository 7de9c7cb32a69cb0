"""Tests for gate module."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from blockgate import InvalidArgumentError
from blockgate.gate.gate import (
    GateConfig,
    GateParams,
    gate_activations,
    gate_forward,
    init_gate_params,
    pooling_combinations,
)
from blockgate.kernels.numerics import PoolMethod, rope_rotate, seq_pool


def _inputs(seq, d, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((seq, d)), rng.standard_normal((seq, d))


class GateForwardTest(unittest.TestCase):
    def test_single_block_should_give_unit_score(self):
        cfg = GateConfig(8, block_size=16)
        q, k = _inputs(10, 8, 0)
        score = gate_forward(q, k, init_gate_params(cfg, 0), cfg)
        assert_allclose(score, [[1.0]])

    def test_zero_query_projection_should_give_uniform_rows(self):
        cfg = GateConfig(8, block_size=4)
        q, k = _inputs(22, 8, 1)
        params = init_gate_params(cfg, 1)
        params = GateParams(np.zeros_like(params.w_q), params.w_k)
        score = gate_forward(q, k, params, cfg)
        nb = score.shape[0]
        expected = np.tri(nb) / np.arange(1, nb + 1)[:, None]
        assert_allclose(score, expected, atol=1e-12)

    def test_rows_should_be_causal_distributions(self):
        cfg = GateConfig(16, block_size=8)
        q, k = _inputs(100, 16, 2)
        score = gate_forward(q, k, init_gate_params(cfg, 2), cfg)
        self.assertEqual(score.shape, (13, 13))
        assert_array_equal(np.triu(score, 1), 0)
        assert_allclose(score.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue((score.diagonal() > 0).all())

    def test_should_match_step_by_step_composition(self):
        cfg = GateConfig(8, block_size=8, rope_theta=10000.0)
        q, k = _inputs(60, 8, 3)
        params = init_gate_params(cfg, 3)
        pooled_q = np.concatenate([seq_pool(q, 8, m) for m in cfg.q_pooling], axis=1)
        pooled_k = np.concatenate([seq_pool(k, 8, m) for m in cfg.k_pooling], axis=1)
        nb = pooled_q.shape[0]
        positions = np.arange(nb)
        rq = rope_rotate(pooled_q.dot(params.w_q), positions, 10000.0 / 8)
        rk = rope_rotate(pooled_k.dot(params.w_k), positions, 10000.0 / 8)
        logits = rq.dot(rk.T) / math.sqrt(8)
        expected = np.zeros((nb, nb))
        for i in range(nb):
            row = np.exp(logits[i, : i + 1] - logits[i, : i + 1].max())
            expected[i, : i + 1] = row / row.sum()
        assert_allclose(gate_forward(q, k, params, cfg), expected, atol=1e-6)

    def test_logits_should_depend_on_block_distance_only(self):
        cfg = GateConfig(8, block_size=4)
        rng = np.random.default_rng(4)
        q = np.tile(rng.standard_normal(8), (40, 1))
        k = np.tile(rng.standard_normal(8), (40, 1))
        act = gate_activations(q, k, init_gate_params(cfg, 4), cfg)
        logits = act.rot_q.dot(act.rot_k.T)
        for i in range(1, 10):
            for j in range(i):
                assert_allclose(logits[i, j], logits[i - j, 0], atol=1e-9)

    def test_no_rotation_should_make_identical_rows_position_free(self):
        cfg = GateConfig(8, block_size=4, rope_mode='none')
        rng = np.random.default_rng(5)
        q = np.tile(rng.standard_normal(8), (40, 1))
        k = np.tile(rng.standard_normal(8), (40, 1))
        score = gate_forward(q, k, init_gate_params(cfg, 5), cfg)
        expected = np.tri(10) / np.arange(1, 11)[:, None]
        assert_allclose(score, expected, atol=1e-12)

    def test_long_sequence_should_give_one_score_per_block_pair(self):
        cfg = GateConfig(16, block_size=64)
        q, k = _inputs(4096, 16, 6)
        score = gate_forward(
            q.astype(np.float32), k.astype(np.float32),
            init_gate_params(cfg, 6, np.float32), cfg,
        )
        self.assertEqual(score.shape, (64, 64))
        self.assertEqual(score.dtype, np.float32)

    def test_mismatched_params_should_raise(self):
        cfg = GateConfig(8, block_size=4)
        other = GateConfig(8, block_size=4, k_pooling=[PoolMethod.MAX])
        q, k = _inputs(16, 8, 7)
        with self.assertRaises(InvalidArgumentError):
            gate_forward(q, k, init_gate_params(other, 7), cfg)

    def test_wrong_input_width_should_raise(self):
        cfg = GateConfig(8, block_size=4)
        q, k = _inputs(16, 6, 8)
        with self.assertRaises(InvalidArgumentError):
            gate_forward(q, k, init_gate_params(cfg, 8), cfg)


class InitGateParamsTest(unittest.TestCase):
    def test_same_seed_should_give_identical_params(self):
        cfg = GateConfig(16)
        a = init_gate_params(cfg, 42)
        b = init_gate_params(cfg, 42)
        assert_array_equal(a.w_q, b.w_q)
        assert_array_equal(a.w_k, b.w_k)

    def test_shapes_should_follow_pooling(self):
        cfg = GateConfig(16)
        params = init_gate_params(cfg, 0)
        self.assertEqual(params.w_q.shape, (16, 16))
        self.assertEqual(params.w_k.shape, (48, 16))

    def test_variance_should_be_one_over_dim(self):
        d = 512
        params = init_gate_params(GateConfig(d), 0)
        variance = params.w_k.var()
        self.assertGreater(variance, 0.8 / d)
        self.assertLess(variance, 1.2 / d)

    def test_different_seeds_should_differ(self):
        cfg = GateConfig(16)
        a = init_gate_params(cfg, 1)
        b = init_gate_params(cfg, 2)
        self.assertGreaterEqual(np.mean(a.w_k != b.w_k), 0.99)


class GateConfigTest(unittest.TestCase):
    def test_json_should_round_trip(self):
        cfg = GateConfig(
            32, block_size=16, rope_theta=10000.0,
            q_pooling=['max', 'avg'], k_pooling=['min'], rope_mode='post',
        )
        self.assertEqual(GateConfig.from_json(cfg.to_json()), cfg)

    def test_block_theta_should_divide_by_block_size(self):
        self.assertEqual(GateConfig(8, block_size=64).block_theta, 500000.0 / 64)

    def test_invalid_values_should_raise(self):
        for kwargs in (
            dict(head_dim=7),
            dict(head_dim=8, block_size=0),
            dict(head_dim=8, q_pooling=[]),
            dict(head_dim=8, k_pooling=['median']),
            dict(head_dim=8, rope_mode='sideways'),
        ):
            with self.assertRaises(InvalidArgumentError):
                GateConfig(**kwargs)

    def test_malformed_dict_should_raise(self):
        with self.assertRaises(InvalidArgumentError):
            GateConfig.from_dict({'head_dim': 8})

    def test_pooling_combinations_should_cover_all_pairs(self):
        combos = pooling_combinations()
        self.assertEqual(len(combos), 49)
        self.assertEqual(len(set(combos)), 49)
        self.assertIn(((PoolMethod.AVERAGE,), (PoolMethod.MAX, PoolMethod.MIN)), combos)


if __name__ == '__main__':
    unittest.main()
