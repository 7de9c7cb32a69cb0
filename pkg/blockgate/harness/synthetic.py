"""Synthetic attention heads.

``random`` heads hold i.i.d. Gaussian Q, K and V with entries of standard
deviation ``1/sqrt(d)``.

``planted`` heads add known block structure on top of that noise:

* Every key block ``J`` carries a *code*, one of the ``L`` basis vectors
  spanning :func:`planted_dims`, scaled by ``g``. Codes are assigned by a
  per-head permutation and repeat every ``L`` blocks.
* Every query block ``I`` is given a target set: the diagonal block plus
  ``planted_blocks - 1`` distinct blocks drawn from the ``L // 2`` blocks
  before it. Its query tokens carry the codes of all its targets, which
  lifts the attention logits towards them by ``g**2 / sqrt(d) = boost``.
* Every query and key token also carries a constant component on one
  rotary pair (the *recency pair*). After the model's rotary embedding it
  adds ``recency * cos(omega * distance)`` to the logits, a locality bias
  that decreases monotonically up to ``horizon`` tokens. It is invisible
  in the pre-RoPE content, so only a position-aware gate can rank a
  target above an older block carrying the same code.

Codes live in the four slowest rotary pairs, which barely turn over the
lengths used here. The recency pair is the fastest other pair that turns by
less than half a revolution over ``horizon`` tokens; without one (small
bases, tiny heads) the locality bias is left out.
"""

import logging
import math

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.config import DEFAULT_BLOCK_SIZE, DEFAULT_ROPE_THETA
from blockgate.heads import make_head
from blockgate.utils import block_slice, check_positive, num_blocks


logger = logging.getLogger(__name__)

PATTERNS = ('random', 'planted')

DEFAULT_PLANTED_BLOCKS = 2
DEFAULT_BOOST = 10.0
DEFAULT_RECENCY = 120.0
DEFAULT_HORIZON = 4096


def _code_pairs(d):
    return max(1, min(d // 2 - 1, 4))


def planted_dims(d):
    """Feature indices that carry the block codes."""
    return np.arange(d - 2 * _code_pairs(d), d)


def target_window(d):
    """How many blocks back a planted target may lie."""
    return _code_pairs(d)


def recency_pair(d, rope_theta, horizon):
    """Index of the rotary pair carrying the locality bias, or ``None``."""
    for pair in range(d // 2 - _code_pairs(d)):
        if rope_theta ** (-2.0 * pair / d) * horizon < math.pi:
            return pair
    return None


def _plant(q, k, rng, block_size, planted_blocks, boost, recency_dim, recency):
    seq, d = q.shape
    nb = num_blocks(seq, block_size)
    dims = planted_dims(d)
    window = target_window(d)
    strength = math.sqrt(boost * math.sqrt(d))
    codes = dims[rng.permutation(dims.size)]

    planted = np.zeros((nb, nb), dtype=bool)
    for i in range(nb):
        planted[i, i] = True
        first = max(0, i - window)
        earlier = min(planted_blocks - 1, i - first)
        if earlier:
            chosen = rng.choice(i - first, size=earlier, replace=False)
            planted[i, first + chosen] = True
        k[block_slice(i, block_size, seq), codes[i % codes.size]] += strength
        for j in np.flatnonzero(planted[i]):
            q[block_slice(i, block_size, seq), codes[j % codes.size]] += strength

    if recency_dim is not None and recency > 0:
        shift = math.sqrt(recency * math.sqrt(d))
        q[:, recency_dim] += shift
        k[:, recency_dim] += shift
    return planted


def gen_synthetic(
    seq,
    d,
    heads,
    pattern,
    seed,
    block_size=DEFAULT_BLOCK_SIZE,
    rope_theta=DEFAULT_ROPE_THETA,
    planted_blocks=DEFAULT_PLANTED_BLOCKS,
    boost=DEFAULT_BOOST,
    recency=DEFAULT_RECENCY,
    horizon=DEFAULT_HORIZON,
    dtype=np.float32,
):
    """Generates ``heads`` heads of ``seq`` tokens.

    Returns a list of :class:`blockgate.heads.HeadTensors`; planted heads
    carry their target-block matrix in ``planted``. Equal arguments give
    identical tensors.
    """
    check_positive('sequence length', seq)
    check_positive('number of heads', heads)
    check_positive('block size', block_size)
    check_positive('planted blocks', planted_blocks)
    check_positive('horizon', horizon)
    if d < 2 or d % 2:
        raise InvalidArgumentError(
            "Head dimension must be a positive even number, not %r" % (d,)
        )
    if pattern not in PATTERNS:
        raise InvalidArgumentError(
            "Unknown pattern %r, expected one of %s" % (pattern, ', '.join(PATTERNS))
        )
    if planted_blocks - 1 > target_window(d):
        raise InvalidArgumentError(
            "At most %d planted blocks fit a head of dimension %d"
            % (target_window(d) + 1, d)
        )
    if not (boost >= 0 and recency >= 0):
        raise InvalidArgumentError("Boost and recency must not be negative")

    pair = recency_pair(d, rope_theta, horizon)
    recency_dim = None if pair is None else 2 * pair

    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d)
    result = []
    for _ in range(heads):
        q, k, v = (rng.standard_normal((seq, d)) * scale for _ in range(3))
        planted = None
        if pattern == 'planted':
            planted = _plant(
                q, k, rng, block_size, planted_blocks, boost, recency_dim, recency
            )
        result.append(
            make_head(
                q.astype(dtype),
                k.astype(dtype),
                v.astype(dtype),
                rope_theta,
                planted=planted,
            )
        )
    logger.info(
        'Generated %d %s heads (seq=%d, d=%d, seed=%r)', heads, pattern, seq, d, seed
    )
    if pattern == 'planted' and recency_dim is None:
        logger.debug('No rotary pair is slow enough for a locality bias')
    return result
