"""Tests for heatmap module."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from blockgate import InvalidArgumentError
from blockgate.harness.heatmap import emit_heatmap, to_pixels


class HeatmapTest(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _emit(self, m):
        path = os.path.join(self.temp_dir, 'sub', 'map.pgm')
        emit_heatmap(m, path)
        with open(path, 'rb') as f:
            return f.read()

    def test_single_entry_should_be_black(self):
        self.assertEqual(self._emit([[0.7]]), b'P5\n1 1\n255\n\x00')

    def test_column_should_span_full_range(self):
        self.assertEqual(self._emit([[0.0], [1.0]]), b'P5\n1 2\n255\n\x00\xff')

    def test_identity_should_light_the_diagonal(self):
        data = self._emit(np.eye(4))
        header = b'P5\n4 4\n255\n'
        self.assertTrue(data.startswith(header))
        pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(4, 4)
        assert_array_equal(pixels, 255 * np.eye(4, dtype=np.uint8))

    def test_scaling_should_round_to_nearest(self):
        assert_array_equal(to_pixels([[0.0, 0.5, 1.0, 0.1]]), [[0, 128, 255, 26]])

    def test_boolean_mask_should_be_drawn(self):
        assert_array_equal(to_pixels(np.tri(2, dtype=bool)), [[255, 0], [255, 255]])

    def test_non_finite_matrix_should_raise(self):
        with self.assertRaises(InvalidArgumentError):
            to_pixels([[0.0, np.nan]])

    def test_unwritable_path_should_raise(self):
        blocker = os.path.join(self.temp_dir, 'file')
        open(blocker, 'w').close()
        with self.assertRaises(OSError):
            emit_heatmap([[1.0]], os.path.join(blocker, 'map.pgm'))


if __name__ == '__main__':
    unittest.main()
