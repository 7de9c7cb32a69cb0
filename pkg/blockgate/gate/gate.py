"""The attention gate: predicts block-level attention scores from pooled
queries and keys.

For one head the forward pass is::

    q' = rope(pool_q(Q_pre) @ W_q, block positions, theta / B)
    k' = rope(pool_k(K_pre) @ W_k, block positions, theta / B)
    score = block_causal_softmax(q' @ k'^T / sqrt(d))

``pool_q`` / ``pool_k`` apply each configured pooling method along the
sequence and concatenate the results along the features, so ``W_q`` is
``(len(q_pooling) * d) x d`` and ``W_k`` is ``(len(k_pooling) * d) x d``.
The gate reads Q and K *before* the model's rotary embedding and applies
its own block-level rotation, which keeps relative block positions
meaningful after pooling.
"""

import collections
import itertools
import json
import logging
import math

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.config import DEFAULT_BLOCK_SIZE, DEFAULT_ROPE_THETA
from blockgate.kernels.numerics import (
    PoolMethod,
    block_causal,
    pool_concat,
    rope_rotate,
    row_softmax_masked,
)
from blockgate.utils import check_positive


logger = logging.getLogger(__name__)

ROPE_MODES = ('block', 'none', 'post')

DEFAULT_Q_POOLING = (PoolMethod.AVERAGE,)
DEFAULT_K_POOLING = (PoolMethod.MAX, PoolMethod.MIN, PoolMethod.AVERAGE)


class GateConfig(object):
    """Shape and design of one gate.

    :param int head_dim: head dimension ``d`` of Q and K
    :param int block_size: pooling kernel/stride ``B``, equal to the sparse
        kernel's tile size
    :param float rope_theta: the model's rotary base; the gate rotates with
        ``rope_theta / block_size``
    :param q_pooling: pooling methods for Q (non-empty sequence of
        :class:`PoolMethod`)
    :param k_pooling: pooling methods for K
    :param str rope_mode: ``block`` (pre-RoPE input, block-level rotation),
        ``none`` (pre-RoPE input, no rotation) or ``post`` (the gate is fed
        model-RoPE-encoded Q/K and applies no rotation of its own)
    """

    def __init__(
        self,
        head_dim,
        block_size=DEFAULT_BLOCK_SIZE,
        rope_theta=DEFAULT_ROPE_THETA,
        q_pooling=DEFAULT_Q_POOLING,
        k_pooling=DEFAULT_K_POOLING,
        rope_mode='block',
    ):
        check_positive('block size', block_size)
        if head_dim < 2 or head_dim % 2:
            raise InvalidArgumentError(
                "Head dimension must be a positive even number, not %r" % (head_dim,)
            )
        if not rope_theta > 0:
            raise InvalidArgumentError("RoPE theta must be positive")
        try:
            q_pooling = tuple(PoolMethod(m) for m in q_pooling)
            k_pooling = tuple(PoolMethod(m) for m in k_pooling)
        except ValueError as e:
            raise InvalidArgumentError("Invalid pooling method: %s" % (e,))
        if not q_pooling or not k_pooling:
            raise InvalidArgumentError("Pooling lists must not be empty")
        if rope_mode not in ROPE_MODES:
            raise InvalidArgumentError(
                "Invalid RoPE mode %r, expected one of %s"
                % (rope_mode, ', '.join(ROPE_MODES))
            )

        self.head_dim = head_dim
        self.block_size = block_size
        self.rope_theta = float(rope_theta)
        self.q_pooling = q_pooling
        self.k_pooling = k_pooling
        self.rope_mode = rope_mode

    @property
    def block_theta(self):
        return self.rope_theta / self.block_size

    @property
    def q_shape(self):
        return (len(self.q_pooling) * self.head_dim, self.head_dim)

    @property
    def k_shape(self):
        return (len(self.k_pooling) * self.head_dim, self.head_dim)

    def replace(self, **changes):
        fields = self.to_dict()
        fields.update(changes)
        return GateConfig.from_dict(fields)

    def to_dict(self):
        return collections.OrderedDict(
            [
                ('head_dim', self.head_dim),
                ('block_size', self.block_size),
                ('rope_theta', self.rope_theta),
                ('q_pooling', [m.value for m in self.q_pooling]),
                ('k_pooling', [m.value for m in self.k_pooling]),
                ('rope_mode', self.rope_mode),
            ]
        )

    @classmethod
    def from_dict(cls, fields):
        try:
            return cls(
                head_dim=int(fields['head_dim']),
                block_size=int(fields['block_size']),
                rope_theta=float(fields['rope_theta']),
                q_pooling=fields['q_pooling'],
                k_pooling=fields['k_pooling'],
                rope_mode=fields.get('rope_mode', 'block'),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InvalidArgumentError):
                raise
            raise InvalidArgumentError("Malformed gate config: %s" % (e,))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, GateConfig) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return 'GateConfig(%s)' % ', '.join(
            '%s=%r' % item for item in self.to_dict().items()
        )


class GateParams(object):
    """Learnable projections of a gate (no biases)."""

    def __init__(self, w_q, w_k):
        self.w_q = np.asarray(w_q)
        self.w_k = np.asarray(w_k)

    def check(self, cfg):
        """Raises :class:`InvalidArgumentError` unless the params fit ``cfg``
        and are finite."""
        if self.w_q.shape != cfg.q_shape or self.w_k.shape != cfg.k_shape:
            raise InvalidArgumentError(
                "Gate params W_q%s, W_k%s do not match config shapes %s, %s"
                % (self.w_q.shape, self.w_k.shape, cfg.q_shape, cfg.k_shape)
            )
        if not (np.all(np.isfinite(self.w_q)) and np.all(np.isfinite(self.w_k))):
            raise InvalidArgumentError("Gate params contain non-finite entries")

    def astype(self, dtype):
        return GateParams(self.w_q.astype(dtype), self.w_k.astype(dtype))

    def copy(self):
        return GateParams(self.w_q.copy(), self.w_k.copy())

    def __iter__(self):
        return iter((self.w_q, self.w_k))


GateActivations = collections.namedtuple(
    'GateActivations', ['pooled_q', 'pooled_k', 'rot_q', 'rot_k', 'score']
)
"""Intermediate values of one forward pass, kept for the backward pass.

    Fields:

    * ``pooled_q``, ``pooled_k`` pooled and concatenated inputs
    * ``rot_q``, ``rot_k`` projected features after the block rotation
    * ``score`` the block-causal row-stochastic output
"""


def init_gate_params(cfg, seed, dtype=np.float64):
    """Draws i.i.d. ``N(0, 1/d)`` entries, deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(cfg.head_dim)
    w_q = rng.normal(0.0, std, size=cfg.q_shape)
    w_k = rng.normal(0.0, std, size=cfg.k_shape)
    return GateParams(w_q.astype(dtype), w_k.astype(dtype))


def block_positions(nb, cfg):
    if cfg.rope_mode == 'block':
        return np.arange(nb)
    return np.zeros(nb)


def _check_inputs(q_pre, k_pre, params, cfg):
    params.check(cfg)
    q_pre = np.asarray(q_pre)
    k_pre = np.asarray(k_pre)
    if q_pre.ndim != 2 or q_pre.shape != k_pre.shape:
        raise InvalidArgumentError(
            "Gate inputs must be matrices of equal shape, got %s and %s"
            % (q_pre.shape, k_pre.shape)
        )
    if q_pre.shape[1] != cfg.head_dim:
        raise InvalidArgumentError(
            "Gate configured for head dim %d, got inputs of width %d"
            % (cfg.head_dim, q_pre.shape[1])
        )
    if q_pre.shape[0] < 1:
        raise InvalidArgumentError("Empty sequence")
    return q_pre, k_pre


def gate_activations(q_pre, k_pre, params, cfg):
    """Runs the forward pass and returns every intermediate needed by the
    backward pass (see :class:`GateActivations`)."""
    q_pre, k_pre = _check_inputs(q_pre, k_pre, params, cfg)
    dtype = np.result_type(q_pre, params.w_q)
    pooled_q = pool_concat(q_pre.astype(dtype), cfg.block_size, cfg.q_pooling)
    pooled_k = pool_concat(k_pre.astype(dtype), cfg.block_size, cfg.k_pooling)
    nb = pooled_q.shape[0]
    positions = block_positions(nb, cfg)
    w_q, w_k = params.astype(dtype)
    rot_q = rope_rotate(np.matmul(pooled_q, w_q), positions, cfg.block_theta)
    rot_k = rope_rotate(np.matmul(pooled_k, w_k), positions, cfg.block_theta)
    logits = np.matmul(rot_q, rot_k.T) * dtype.type(1.0 / math.sqrt(cfg.head_dim))
    score = row_softmax_masked(logits, block_causal(nb))
    return GateActivations(pooled_q, pooled_k, rot_q, rot_k, score)


def gate_forward(q_pre, k_pre, params, cfg):
    """Returns the ``nb x nb`` block score matrix: zero above the block
    diagonal, rows summing to one over their causal support."""
    return gate_activations(q_pre, k_pre, params, cfg).score


def pooling_combinations():
    """Every pair of non-empty pooling compositions for Q and K.

    Methods inside a composition keep the order average, max, min.
    """
    methods = (PoolMethod.AVERAGE, PoolMethod.MAX, PoolMethod.MIN)
    subsets = [
        combo
        for size in range(1, len(methods) + 1)
        for combo in itertools.combinations(methods, size)
    ]
    return [(q, k) for q in subsets for k in subsets]
