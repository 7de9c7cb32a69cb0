"""Tests for synthetic module."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import math
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from blockgate import InvalidArgumentError
from blockgate.harness.synthetic import (
    gen_synthetic,
    planted_dims,
    recency_pair,
    target_window,
)
from blockgate.heads import attention_inputs
from blockgate.kernels.attention import attention_with_block_gt, oracle_block_gt


class GenSyntheticTest(unittest.TestCase):
    def test_same_seed_should_give_identical_tensors(self):
        a = gen_synthetic(200, 16, 2, 'planted', 11, block_size=32)
        b = gen_synthetic(200, 16, 2, 'planted', 11, block_size=32)
        for x, y in zip(a, b):
            assert_array_equal(x.q, y.q)
            assert_array_equal(x.k, y.k)
            assert_array_equal(x.v, y.v)
            assert_array_equal(x.planted, y.planted)

    def test_different_seeds_should_differ(self):
        a = gen_synthetic(64, 8, 1, 'random', 1)[0]
        b = gen_synthetic(64, 8, 1, 'random', 2)[0]
        self.assertFalse(np.array_equal(a.q, b.q))

    def test_random_entries_should_have_scaled_unit_variance(self):
        d = 64
        heads = gen_synthetic(4096, d, 4, 'random', 0)
        entries = np.concatenate([h.q.ravel() for h in heads]).astype(np.float64)
        self.assertEqual(entries.size, 4096 * d * 4)
        self.assertLess(abs(entries.mean()), 0.05 / math.sqrt(d))
        self.assertAlmostEqual(entries.std() * math.sqrt(d), 1.0, delta=0.01)
        self.assertIsNone(heads[0].planted)

    def test_planted_sets_should_be_causal_with_diagonal(self):
        head = gen_synthetic(300, 16, 1, 'planted', 5, block_size=32, planted_blocks=3)[0]
        planted = head.planted
        self.assertEqual(planted.shape, (10, 10))
        self.assertTrue(planted.diagonal().all())
        self.assertFalse(np.triu(planted, 1).any())
        assert_array_equal(
            planted.sum(axis=1), [min(3, i + 1) for i in range(10)]
        )

    def test_planted_blocks_should_carry_the_attention_mass(self):
        head = gen_synthetic(1024, 64, 1, 'planted', 7, block_size=64)[0]
        q, k, _ = attention_inputs(head)
        gt = oracle_block_gt(q, k, 64)
        causal = np.tri(gt.shape[0], dtype=bool)
        on = gt[head.planted].mean()
        off = gt[causal & ~head.planted].mean()
        self.assertGreaterEqual(on, 3 * off)

    def test_planted_targets_should_lie_within_the_window(self):
        head = gen_synthetic(2048, 64, 1, 'planted', 9)[0]
        rows, cols = np.nonzero(head.planted)
        self.assertTrue(np.all(rows - cols <= target_window(64)))
        self.assertEqual(target_window(64), 4)

    def test_targets_should_outrank_older_blocks_with_the_same_code(self):
        # 64 blocks, so every code is reused by blocks 8 apart
        head = gen_synthetic(4096, 64, 1, 'planted', 3)[0]
        q, k, v = attention_inputs(head)
        _, gt = attention_with_block_gt(q, k, v, 64)
        for i in range(1, gt.shape[0]):
            target = np.flatnonzero(head.planted[i, :i])
            self.assertEqual(np.argmax(gt[i, :i]), target[0])

    def test_planted_dims_should_be_the_slowest_pairs(self):
        assert_array_equal(planted_dims(64), np.arange(56, 64))
        assert_array_equal(planted_dims(16), np.arange(8, 16))
        assert_array_equal(planted_dims(4), np.arange(2, 4))

    def test_recency_pair_should_turn_less_than_half_a_revolution(self):
        self.assertEqual(recency_pair(64, 500000.0, 4096), 18)
        self.assertEqual(recency_pair(64, 500000.0, 1024), 15)
        self.assertIsNone(recency_pair(16, 500000.0, 4096))

    def test_locality_bias_should_be_shared_by_queries_and_keys(self):
        head = gen_synthetic(128, 64, 1, 'planted', 0)[0]
        shift = math.sqrt(120.0 * 8)
        self.assertAlmostEqual(float(head.q[:, 36].mean()), shift, delta=0.1)
        self.assertAlmostEqual(float(head.k[:, 36].mean()), shift, delta=0.1)
        self.assertLess(abs(float(head.q[:, 34].mean())), 0.1)

    def test_dtype_should_be_honoured(self):
        head = gen_synthetic(16, 4, 1, 'random', 0, dtype=np.float64)[0]
        self.assertEqual(head.q.dtype, np.float64)

    def test_invalid_arguments_should_raise(self):
        for args in (
            (64, 7, 1, 'random', 0),
            (0, 8, 1, 'random', 0),
            (64, 8, 0, 'random', 0),
            (64, 8, 1, 'stripes', 0),
            (64, 4, 1, 'planted', 0, 16, 1000.0, 3),
            (64, 8, 1, 'planted', 0, 16, 1000.0, 2, -1.0),
        ):
            with self.assertRaises(InvalidArgumentError):
                gen_synthetic(*args)


if __name__ == '__main__':
    unittest.main()
