"""Dense numeric building blocks: matrix product, masked softmax, sequence
pooling and rotary embeddings.

All functions are pure and compute in the precision of their inputs
(``float32`` or ``float64``).
"""

import enum

import numpy as np

from blockgate import DegenerateRowError, InvalidArgumentError
from blockgate.utils import check_positive


class PoolMethod(enum.Enum):
    AVERAGE = 'avg'
    MAX = 'max'
    MIN = 'min'

    @classmethod
    def parse_list(cls, text):
        """Parses a comma-separated list such as ``max,min,avg``."""
        names = [s.strip() for s in text.split(',') if s.strip()]
        if not names:
            raise InvalidArgumentError("Empty pooling list: %r" % (text,))
        try:
            return tuple(cls(name) for name in names)
        except ValueError:
            raise InvalidArgumentError(
                "Invalid pooling list %r: expected names from avg, max, min"
                % (text,)
            )

    @staticmethod
    def format_list(methods):
        return ','.join(m.value for m in methods)


_REDUCERS = {
    PoolMethod.AVERAGE: np.add,
    PoolMethod.MAX: np.maximum,
    PoolMethod.MIN: np.minimum,
}


def as_matrix(data, dtype=None):
    """Validates ``data`` as a finite two-dimensional matrix.

    Integer input is promoted to ``float64``; ``dtype`` forces a cast.
    """
    m = np.asarray(data)
    if dtype is not None:
        m = m.astype(dtype, copy=False)
    elif m.dtype.kind != 'f':
        m = m.astype(np.float64)
    if m.ndim != 2:
        raise InvalidArgumentError("Expected a matrix, got shape %s" % (m.shape,))
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("Matrix contains NaN or infinite entries")
    return m


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(
            "Cannot multiply %dx%d by %dx%d" % (a.shape + b.shape)
        )
    return np.matmul(a, b)


def block_causal(nb):
    """Returns the ``nb x nb`` lower-triangular support (diagonal included)."""
    return np.tri(nb, dtype=bool)


def row_softmax_masked(m, allowed):
    """Softmax of every row of ``m`` over the entries where ``allowed`` is
    true; disallowed entries come out as exact zeros.
    """
    m = np.asarray(m)
    allowed = np.asarray(allowed, dtype=bool)
    if m.shape != allowed.shape or m.ndim != 2:
        raise InvalidArgumentError(
            "Scores %s and mask %s must be matrices of equal shape"
            % (m.shape, allowed.shape)
        )
    empty_rows = np.flatnonzero(~allowed.any(axis=1))
    if empty_rows.size:
        raise DegenerateRowError(
            "Row %d has no allowed entries" % (empty_rows[0],)
        )
    masked = np.where(allowed, m, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.where(allowed, np.exp(shifted), 0)
    return (e / e.sum(axis=1, keepdims=True)).astype(m.dtype, copy=False)


def seq_pool(x, block_size, method):
    """Pools ``x`` column-wise over non-overlapping blocks of
    ``block_size`` consecutive rows.

    The last block may be partial and is pooled over the rows it actually
    has. Returns a ``ceil(seq / block_size) x d`` matrix.
    """
    x = np.asarray(x)
    method = PoolMethod(method)
    check_positive('block size', block_size)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError("Cannot pool an empty matrix")
    starts = np.arange(0, x.shape[0], block_size)
    pooled = _REDUCERS[method].reduceat(x, starts, axis=0)
    if method is PoolMethod.AVERAGE:
        counts = np.diff(np.append(starts, x.shape[0]))
        pooled = pooled / counts[:, None].astype(x.dtype)
    return pooled


def pool_concat(x, block_size, methods):
    """Pools ``x`` with each method in turn and concatenates the results
    along the feature dimension."""
    return np.concatenate(
        [seq_pool(x, block_size, method) for method in methods], axis=1
    )


def _rope_angles(positions, d, theta):
    freqs = np.power(float(theta), -np.arange(0, d, 2, dtype=np.float64) / d)
    return np.outer(np.asarray(positions, dtype=np.float64), freqs)


def rope_rotate(x, positions, theta):
    """Applies a rotary embedding to the rows of ``x``.

    Pair ``(x[2i], x[2i+1])`` of a row at position ``p`` is rotated by
    ``p * theta ** (-2i / d)``. Positions may be any real numbers.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] % 2:
        raise InvalidArgumentError(
            "Rotary embedding needs an even head dimension, got shape %s"
            % (x.shape,)
        )
    if len(positions) != x.shape[0]:
        raise InvalidArgumentError(
            "Got %d positions for %d rows" % (len(positions), x.shape[0])
        )
    angles = _rope_angles(positions, x.shape[1], theta)
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def rope_unrotate(x, positions, theta):
    """Inverse of :func:`rope_rotate` (rotation by the negated positions)."""
    return rope_rotate(x, -np.asarray(positions, dtype=np.float64), theta)
