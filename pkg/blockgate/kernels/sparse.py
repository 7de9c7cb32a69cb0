"""Binary block masks and block-sparse causal attention.

A block mask is an ``nb x nb`` boolean matrix. Valid masks are
block-causal (nothing above the diagonal) and always keep the diagonal
block, so every query row has at least one visible key.
"""

import logging

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.kernels.attention import check_qkv, stream_attention
from blockgate.utils import check_positive, num_blocks


logger = logging.getLogger(__name__)


def _causal_scores(score):
    score = np.asarray(score)
    if score.ndim != 2 or score.shape[0] != score.shape[1]:
        raise InvalidArgumentError(
            "Block scores must be a square matrix, got shape %s" % (score.shape,)
        )
    return score


def topk_mask(score, k):
    """Keeps, in row ``i``, the diagonal block plus the ``k - 1`` highest
    scoring earlier blocks (``min(k, i + 1)`` blocks in total).

    Ties go to the smaller column index.
    """
    check_positive('k', k)
    score = _causal_scores(score)
    nb = score.shape[0]
    bits = np.eye(nb, dtype=bool)
    for i in range(1, nb):
        # A stable sort keeps equal scores in column order.
        order = np.argsort(-score[i, :i], kind='stable')
        bits[i, order[: k - 1]] = True
    return bits


def threshold_mask(score, t):
    """Keeps the causal blocks scoring strictly above ``t``, plus the
    diagonal."""
    if not t >= 0:
        raise InvalidArgumentError("Threshold must be non-negative, not %r" % (t,))
    score = _causal_scores(score)
    nb = score.shape[0]
    bits = (score > t) & np.tri(nb, dtype=bool)
    bits[np.diag_indices(nb)] = True
    return bits


def check_mask(mask, nb=None):
    """Validates a block mask; returns it as a boolean matrix."""
    bits = np.asarray(mask)
    if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
        raise InvalidArgumentError(
            "Block mask must be square, got shape %s" % (bits.shape,)
        )
    if nb is not None and bits.shape[0] != nb:
        raise InvalidArgumentError(
            "Block mask is %dx%d but the sequence has %d blocks"
            % (bits.shape[0], bits.shape[1], nb)
        )
    if not np.all((bits == 0) | (bits == 1)):
        raise InvalidArgumentError("Block mask must be binary")
    bits = bits.astype(bool)
    if not bits.diagonal().all():
        raise InvalidArgumentError("Block mask must keep every diagonal block")
    if np.triu(bits, 1).any():
        raise InvalidArgumentError("Block mask has blocks above the diagonal")
    return bits


def block_sparse_attention(q, k, v, mask, block_size, stats=None):
    """Causal streaming attention that visits only the active key blocks
    of each query tile.

    Equals exact causal attention with the softmax restricted to keys in
    active blocks. ``q`` and ``k`` are expected to carry positional
    encoding already.
    """
    q, k, v = check_qkv(q, k, v)
    bits = check_mask(mask, num_blocks(q.shape[0], block_size))
    active = [np.flatnonzero(row) for row in bits]
    logger.debug(
        'Block-sparse attention over %d of %d causal blocks',
        int(bits.sum()),
        bits.shape[0] * (bits.shape[0] + 1) // 2,
    )
    return stream_attention(
        q, k, v, block_size, causal=True, key_blocks=active.__getitem__,
        stats=stats,
    )


def sparsity_ratio(mask):
    """Fraction of causal blocks the mask skips."""
    bits = check_mask(mask)
    nb = bits.shape[0]
    return 1.0 - float(bits.sum()) / (nb * (nb + 1) // 2)


def random_block_mask(nb, sparsity, rng):
    """Draws a valid mask with the requested sparsity.

    The diagonal is always active; the remaining active blocks are chosen
    uniformly among the off-diagonal causal blocks. The achieved sparsity
    is the closest one the block count allows, capped by the diagonal.
    """
    if not 0 <= sparsity <= 1:
        raise InvalidArgumentError("Sparsity must lie in [0, 1], not %r" % (sparsity,))
    causal = nb * (nb + 1) // 2
    rows, cols = np.tril_indices(nb, -1)
    extra = int(round((1.0 - sparsity) * causal)) - nb
    extra = min(max(extra, 0), rows.size)
    bits = np.eye(nb, dtype=bool)
    chosen = rng.choice(rows.size, size=extra, replace=False)
    bits[rows[chosen], cols[chosen]] = True
    return bits
