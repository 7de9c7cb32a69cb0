"""Per-head tensors and the views the attention path and the gate take
of them."""

import collections

import numpy as np

from blockgate.kernels.numerics import rope_rotate


HeadTensors = collections.namedtuple(
    'HeadTensors', ['q', 'k', 'v', 'positions', 'rope_theta', 'planted']
)
"""One attention head of one sequence.

    Fields:

    * ``q``, ``k`` queries and keys *before* the model's rotary embedding
    * ``v`` values
    * ``positions`` token positions (``0 .. seq-1`` for a prompt)
    * ``rope_theta`` base of the model's rotary embedding
    * ``planted`` ``nb x nb`` boolean matrix of the key blocks each query
      block was built to attend to, or ``None`` for unstructured data
"""


def make_head(q, k, v, rope_theta, planted=None, positions=None):
    if positions is None:
        positions = np.arange(np.asarray(q).shape[0])
    return HeadTensors(q, k, v, positions, rope_theta, planted)


def attention_inputs(head):
    """Returns ``(q, k, v)`` as seen by attention: Q and K rotated by the
    model's rotary embedding."""
    return (
        rope_rotate(head.q, head.positions, head.rope_theta),
        rope_rotate(head.k, head.positions, head.rope_theta),
        head.v,
    )


def gate_inputs(head, cfg):
    """Returns the ``(q, k)`` pair fed to a gate configured by ``cfg``.

    Gates in ``post`` RoPE mode read model-encoded Q/K, the others read the
    pre-RoPE tensors.
    """
    if cfg.rope_mode == 'post':
        q, k, _ = attention_inputs(head)
        return q, k
    return head.q, head.k
