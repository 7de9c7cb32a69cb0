"""Grayscale PGM images of block matrices."""

import logging

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.kernels.numerics import as_matrix
from blockgate.utils import ensure_parent


logger = logging.getLogger(__name__)


def to_pixels(m):
    """Scales ``m`` linearly onto ``0..255``; a constant matrix maps to 0."""
    m = as_matrix(m, np.float64)
    if m.size == 0 or m.max() == m.min():
        return np.zeros(m.shape, dtype=np.uint8)
    lo, hi = m.min(), m.max()
    return np.floor(255.0 * (m - lo) / (hi - lo) + 0.5).astype(np.uint8)


def emit_heatmap(m, path):
    """Writes ``m`` as a binary (P5) 8-bit PGM, one pixel per entry."""
    pixels = to_pixels(m)
    if pixels.size == 0:
        raise InvalidArgumentError("Cannot draw an empty matrix")
    height, width = pixels.shape
    ensure_parent(path)
    with open(path, 'wb') as f:
        f.write(b'P5\n%d %d\n255\n' % (width, height))
        f.write(pixels.tobytes())
    logger.debug('Wrote %dx%d heatmap to %s', height, width, path)
