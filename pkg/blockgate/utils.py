"""Common routines shared by the harness and storage code."""

import errno
import math
import os
import os.path

from blockgate import InvalidArgumentError


def num_blocks(seq, block_size):
    """Returns the number of ``block_size`` blocks covering ``seq`` rows.

    The last block may be partial.
    """
    check_positive('block size', block_size)
    return -(-seq // block_size)


def check_positive(what, value):
    if value < 1:
        raise InvalidArgumentError(
            "Invalid %s: must be at least 1, not %r" % (what, value)
        )


def block_slice(index, block_size, seq):
    """Returns the row slice of block ``index``, clipped to ``seq``."""
    start = index * block_size
    return slice(start, min(start + block_size, seq))


def parse_mode(text):
    """Splits a mask-selection mode such as ``topk:4`` or ``threshold:0.01``.

    Returns a tuple ``(kind, value)`` where ``value`` is an ``int`` for
    ``topk`` and a ``float`` for ``threshold``.
    """
    kind, sep, value = text.partition(':')
    if not sep or kind not in ('topk', 'threshold'):
        raise InvalidArgumentError(
            "Invalid mode: expected topk:K or threshold:T, not %r" % (text,)
        )
    try:
        parsed = int(value) if kind == 'topk' else float(value)
    except ValueError:
        raise InvalidArgumentError("Invalid mode value: %r" % (value,))
    if kind == 'topk' and parsed < 1:
        raise InvalidArgumentError("Invalid mode: k must be at least 1")
    if kind == 'threshold' and not 0 <= parsed < math.inf:
        raise InvalidArgumentError(
            "Invalid mode: threshold must be finite and non-negative"
        )
    return kind, parsed


def mkdir(name):
    try:
        os.makedirs(name, 0o755)
    except OSError as e:
        if e.errno != errno.EEXIST:
            raise


def ensure_parent(path):
    """Creates the directory that will hold ``path``, if any."""
    dir_path = os.path.dirname(path)
    if dir_path:
        mkdir(dir_path)
