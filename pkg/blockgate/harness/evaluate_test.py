"""Tests for evaluate module."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import json
import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from blockgate import InvalidArgumentError
from blockgate.gate.gate import GateConfig, init_gate_params
from blockgate.harness.evaluate import EvalReport, SeqReport, eval_gate, select_mask
from blockgate.harness.synthetic import gen_synthetic


class SelectMaskTest(unittest.TestCase):
    def test_text_and_tuple_modes_should_agree(self):
        score = np.tri(4) / np.arange(1, 5)[:, None]
        assert_array_equal(select_mask(score, 'topk:2'), select_mask(score, ('topk', 2)))
        assert_array_equal(
            select_mask(score, 'threshold:0.3'), select_mask(score, ('threshold', 0.3))
        )

    def test_invalid_mode_should_raise(self):
        with self.assertRaises(InvalidArgumentError):
            select_mask(np.eye(2), 'topk:0')


class EvalReportTest(unittest.TestCase):
    def test_recall_and_precision_should_pool_over_heads(self):
        report = EvalReport(
            [
                SeqReport(0, 0.5, 1, 2, 1, 0.1, 0.01),
                SeqReport(1, 0.3, 3, 3, 5, 0.2, 0.03),
            ]
        )
        self.assertAlmostEqual(report.mask_recall, 4.0 / 5.0)
        self.assertAlmostEqual(report.mask_precision, 4.0 / 6.0)
        self.assertAlmostEqual(report.sparsity, 0.4)
        self.assertAlmostEqual(report.output_max_abs_err, 0.2)
        self.assertAlmostEqual(report.output_rel_err, 0.02)

    def test_empty_masks_should_count_as_perfect(self):
        report = EvalReport([SeqReport(0, 0.6, 0, 0, 0, 0.0, 0.0)])
        self.assertEqual(report.mask_recall, 1.0)
        self.assertEqual(report.mask_precision, 1.0)

    def test_json_should_use_report_field_names(self):
        report = EvalReport([SeqReport(0, 0.5, 1, 2, 1, 0.1, 0.01)])
        fields = json.loads(report.to_json())
        self.assertEqual(
            list(fields),
            [
                'sparsity', 'maskRecall', 'maskPrecision',
                'outputMaxAbsErr', 'outputRelErr', 'perSeq',
            ],
        )
        self.assertEqual(fields['perSeq'][0]['maskRecall'], 0.5)


class EvalGateTest(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.cfg = GateConfig(16, block_size=16, rope_theta=10000.0)
        self.data = gen_synthetic(
            128, 16, 2, 'planted', 0, block_size=16, rope_theta=10000.0
        )
        self.params = init_gate_params(self.cfg, 0)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_full_topk_should_be_exact(self):
        report = eval_gate(self.params, self.cfg, self.data, 'topk:8')
        self.assertEqual(report.mask_recall, 1.0)
        self.assertEqual(report.mask_precision, 1.0)
        self.assertEqual(report.sparsity, 0.0)
        self.assertLess(report.output_max_abs_err, 1e-5)
        self.assertLess(report.output_rel_err, 1e-5)

    def test_sparse_masks_should_report_sparsity(self):
        report = eval_gate(self.params, self.cfg, self.data, ('topk', 1))
        self.assertAlmostEqual(report.sparsity, 1.0 - 8.0 / 36.0)
        self.assertEqual(len(report.seqs), 2)
        for seq in report.seqs:
            self.assertEqual(seq.predicted_blocks, 0)

    def test_threshold_mode_should_run(self):
        report = eval_gate(self.params, self.cfg, self.data, 'threshold:0.05')
        self.assertTrue(0.0 <= report.mask_recall <= 1.0)
        self.assertTrue(0.0 <= report.sparsity <= 1.0)
        self.assertTrue(np.isfinite(report.output_rel_err))

    def test_heatmaps_should_be_written_per_head(self):
        maps = os.path.join(self.temp_dir, 'maps')
        eval_gate(self.params, self.cfg, self.data[:1], 'topk:2', heatmap_dir=maps)
        self.assertEqual(
            sorted(os.listdir(maps)),
            ['h0_gt.pgm', 'h0_pred_mask.pgm', 'h0_ref_mask.pgm', 'h0_score.pgm'],
        )

    def test_params_of_other_config_should_raise(self):
        other = GateConfig(16, block_size=16, q_pooling=['max', 'min'])
        with self.assertRaises(InvalidArgumentError):
            eval_gate(init_gate_params(other, 0), self.cfg, self.data, 'topk:2')

    def test_empty_dataset_should_raise(self):
        with self.assertRaises(InvalidArgumentError):
            eval_gate(self.params, self.cfg, [], 'topk:2')


if __name__ == '__main__':
    unittest.main()
