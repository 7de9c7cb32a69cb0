"""Attention settings shared by the kernels, the gate and the harness."""

import os

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.utils import check_positive


DEFAULT_BLOCK_SIZE = 64
DEFAULT_ROPE_THETA = 500000.0
DEFAULT_PRECISION = 'f32'

_DTYPES = {'f32': np.float32, 'f64': np.float64}


def dtype_for(precision):
    """Maps a precision name (``f32`` or ``f64``) to a numpy dtype."""
    try:
        return np.dtype(_DTYPES[precision])
    except KeyError:
        raise InvalidArgumentError(
            "Invalid precision: expected one of %s, not %r"
            % (', '.join(sorted(_DTYPES)), precision)
        )


def _from_env(name, parse, default):
    value = os.environ.get(name)
    if value is None:
        return default
    try:
        return parse(value)
    except ValueError:
        raise InvalidArgumentError("Invalid %s: %r" % (name, value))


def precision_of(dtype):
    dtype = np.dtype(dtype)
    for name, candidate in _DTYPES.items():
        if np.dtype(candidate) == dtype:
            return name
    raise InvalidArgumentError("Unsupported dtype: %s" % (dtype,))


class AttnConfig(object):
    """Settings of one attention head.

    Values not passed to the constructor are taken from the environment:

      ``BLOCKGATE_BLOCK_SIZE``
        block (and kernel tile) size ``B``; defaults to 64.

      ``BLOCKGATE_ROPE_THETA``
        base of the model's rotary embedding; defaults to 500000.

      ``BLOCKGATE_PRECISION``
        ``f32`` (default) or ``f64``.
    """

    def __init__(
        self, seq_len=None, head_dim=None, block_size=None, rope_theta=None,
        precision=None,
    ):
        if block_size is None:
            block_size = _from_env('BLOCKGATE_BLOCK_SIZE', int, DEFAULT_BLOCK_SIZE)
        if rope_theta is None:
            rope_theta = _from_env('BLOCKGATE_ROPE_THETA', float, DEFAULT_ROPE_THETA)
        if precision is None:
            precision = os.environ.get('BLOCKGATE_PRECISION', DEFAULT_PRECISION)

        check_positive('block size', block_size)
        if not rope_theta > 0:
            raise InvalidArgumentError("RoPE theta must be positive")
        if seq_len is not None:
            check_positive('sequence length', seq_len)
        if head_dim is not None and (head_dim < 2 or head_dim % 2):
            raise InvalidArgumentError(
                "Head dimension must be a positive even number, not %r" % (head_dim,)
            )
        dtype_for(precision)

        self.seq_len = seq_len
        self.head_dim = head_dim
        self.block_size = block_size
        self.rope_theta = rope_theta
        self.precision = precision

    @property
    def dtype(self):
        return dtype_for(self.precision)

    def __repr__(self):
        return (
            'AttnConfig(seq_len=%r, head_dim=%r, block_size=%r, '
            'rope_theta=%r, precision=%r)'
            % (
                self.seq_len,
                self.head_dim,
                self.block_size,
                self.rope_theta,
                self.precision,
            )
        )
