"""Causal attention: a dense reference, a streaming (online-softmax) kernel
and the fused extraction of the 2D max-pooled attention map.

The streaming kernel walks the key blocks of every ``B``-row query tile,
keeping for each query row a running maximum ``m``, a running exp-sum ``l``
and an output accumulator (see :class:`StreamState`). The full
``seq x seq`` score matrix is never built: the largest temporaries are one
``B x B`` score tile and, when the ground truth is requested, a
``seq x nb`` buffer of per-block row maxima.

Ground-truth extraction stores each block's local row max ``r`` while
streaming. Once the final ``m`` and ``l`` of a row are known,
``exp(r - m) / l`` is the largest attention probability that row puts in
the block, and a column max over the rows of a query tile yields the
max-pooled map.
"""

import logging
import math

import numpy as np

from blockgate import InvalidArgumentError, ResourceLimitError
from blockgate.kernels.numerics import as_matrix, row_softmax_masked
from blockgate.utils import block_slice, check_positive, num_blocks


logger = logging.getLogger(__name__)

# The oracle materializes seq x seq probabilities.
ORACLE_MAX_SEQ = 8192


class KernelStats(object):
    """Optional instrumentation for the streaming kernels.

    ``blocks_processed`` counts (query tile, key block) pairs actually
    computed; ``peak_elements`` is the size of the largest temporary buffer
    the kernel allocated. The kernels are single-threaded, so plain
    counters suffice.
    """

    def __init__(self):
        self.blocks_processed = 0
        self.peak_elements = 0

    def record_block(self):
        self.blocks_processed += 1

    def record_buffer(self, array):
        self.peak_elements = max(self.peak_elements, array.size)


class _NoStats(object):
    def record_block(self):
        pass

    def record_buffer(self, array):
        pass


class StreamState(object):
    """Online-softmax state of one query tile.

    Per query row: running max ``m`` (non-decreasing across updates),
    running exp-sum ``l`` (positive after the first update) and an
    unnormalized output accumulator.
    """

    def __init__(self, rows, value_dim, dtype):
        self.m = np.full(rows, -np.inf, dtype=dtype)
        self.l = np.zeros(rows, dtype=dtype)
        self.acc = np.zeros((rows, value_dim), dtype=dtype)

    def update(self, scores, values):
        """Folds one key block into the state.

        Returns the block's local row maxima.
        """
        local_max = scores.max(axis=1)
        m_new = np.maximum(self.m, local_max)
        alpha = np.exp(self.m - m_new)
        p = np.exp(scores - m_new[:, None])
        self.l = alpha * self.l + p.sum(axis=1)
        self.acc = alpha[:, None] * self.acc + np.matmul(p, values)
        self.m = m_new
        return local_max

    def finish(self):
        return self.acc / self.l[:, None]


def check_qkv(q, k, v):
    """Validates self-attention operands and casts them to a common dtype."""
    dtype = np.result_type(np.asarray(q), np.asarray(k), np.asarray(v))
    if dtype.kind != 'f':
        dtype = np.dtype(np.float64)
    q, k, v = (as_matrix(x, dtype) for x in (q, k, v))
    if not q.shape[0] == k.shape[0] == v.shape[0]:
        raise InvalidArgumentError(
            "Q, K and V must have the same number of rows, got %d, %d, %d"
            % (q.shape[0], k.shape[0], v.shape[0])
        )
    if q.shape[1] != k.shape[1]:
        raise InvalidArgumentError(
            "Q and K must have the same width, got %d and %d"
            % (q.shape[1], k.shape[1])
        )
    if q.shape[0] == 0:
        raise InvalidArgumentError("Empty sequence")
    return q, k, v


def _scale(q):
    return q.dtype.type(1.0 / math.sqrt(q.shape[1]))


def attention_probs(q, k, causal=True):
    """Materializes ``softmax(Q K^T / sqrt(d))``, causally masked if
    requested."""
    seq = q.shape[0]
    scores = np.matmul(q, k.T) * _scale(q)
    if causal:
        allowed = np.tri(seq, dtype=bool)
    else:
        allowed = np.ones((seq, seq), dtype=bool)
    return row_softmax_masked(scores, allowed)


def dense_attention(q, k, v, causal=True):
    q, k, v = check_qkv(q, k, v)
    return np.matmul(attention_probs(q, k, causal), v)


def stream_attention(
    q, k, v, block_size, causal=True, key_blocks=None, keep_row_max=False,
    stats=None,
):
    """The streaming kernel behind every non-dense attention entry point.

    Args:
        q, k, v: validated operands (see :func:`check_qkv`).
        block_size: query tile and key block size ``B``.
        causal: apply the elementwise causal mask ``j <= i``.
        key_blocks: optional callable mapping a query tile index to the key
            block indices to visit, in increasing order. Defaults to every
            causal block (or every block when ``causal`` is false).
        keep_row_max: also return the ``seq x nb`` buffer of local row
            maxima together with each row's final ``m`` and ``l``.
        stats: optional :class:`KernelStats`.

    Returns ``out`` or, with ``keep_row_max``, ``(out, row_max, m, l)``.
    """
    check_positive('block size', block_size)
    stats = stats or _NoStats()
    seq = q.shape[0]
    nb = num_blocks(seq, block_size)
    scale = _scale(q)
    dtype = q.dtype
    positions = np.arange(seq)

    if key_blocks is None:
        if causal:
            key_blocks = lambda i: range(i + 1)
        else:
            key_blocks = lambda i: range(nb)

    out = np.empty((seq, v.shape[1]), dtype=dtype)
    row_max = m_final = l_final = None
    if keep_row_max:
        row_max = np.full((seq, nb), -np.inf, dtype=dtype)
        m_final = np.empty(seq, dtype=dtype)
        l_final = np.empty(seq, dtype=dtype)
        stats.record_buffer(row_max)

    for i in range(nb):
        rows = block_slice(i, block_size, seq)
        q_tile = q[rows]
        state = StreamState(q_tile.shape[0], v.shape[1], dtype)
        for j in key_blocks(i):
            cols = block_slice(j, block_size, seq)
            scores = np.matmul(q_tile, k[cols].T) * scale
            if causal and cols.stop - 1 > rows.start:
                visible = positions[cols][None, :] <= positions[rows][:, None]
                scores = np.where(visible, scores, -np.inf)
            stats.record_buffer(scores)
            stats.record_block()
            local_max = state.update(scores, v[cols])
            if keep_row_max:
                row_max[rows, j] = local_max
        out[rows] = state.finish()
        if keep_row_max:
            m_final[rows] = state.m
            l_final[rows] = state.l

    if keep_row_max:
        return out, row_max, m_final, l_final
    return out


def streaming_attention(q, k, v, block_size, causal=True, stats=None):
    q, k, v = check_qkv(q, k, v)
    return stream_attention(q, k, v, block_size, causal=causal, stats=stats)


def attention_with_block_gt(q, k, v, block_size, stats=None):
    """Causal streaming attention that also returns the ground truth.

    The ground truth is an ``nb x nb`` matrix whose entry ``[I][J]`` is the
    largest causal attention probability in block ``(I, J)``. Entries above
    the block diagonal are zero; partial diagonal blocks are pooled over
    their visible entries only.

    Returns a tuple ``(output, gt)``.
    """
    q, k, v = check_qkv(q, k, v)
    seq = q.shape[0]
    nb = num_blocks(seq, block_size)
    out, row_max, m, l = stream_attention(
        q, k, v, block_size, causal=True, keep_row_max=True, stats=stats
    )
    # Unvisited blocks hold -inf and rescale to exactly 0.
    probs_max = np.exp(row_max - m[:, None]) / l[:, None]
    gt = np.maximum.reduceat(probs_max, np.arange(0, seq, block_size), axis=0)
    logger.debug('Extracted %dx%d ground truth from seq=%d', nb, nb, seq)
    return out, gt


def oracle_block_gt(q, k, block_size):
    """Naive ground truth: materializes the causal probability map and
    max-pools it with kernel and stride ``block_size``."""
    check_positive('block size', block_size)
    q = as_matrix(q)
    k = as_matrix(k, q.dtype)
    seq = q.shape[0]
    if seq > ORACLE_MAX_SEQ:
        raise ResourceLimitError(
            "Oracle ground truth is limited to seq <= %d, got %d"
            % (ORACLE_MAX_SEQ, seq)
        )
    nb = num_blocks(seq, block_size)
    padded = np.zeros((nb * block_size, nb * block_size), dtype=q.dtype)
    padded[:seq, :seq] = attention_probs(q, k, causal=True)
    return padded.reshape(nb, block_size, nb, block_size).max(axis=(1, 3))
