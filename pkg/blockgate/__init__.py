"""Blockgate learns which blocks of a causal attention map matter and skips
   the rest.

   A small learnable *gate* looks at pooled queries and keys of one attention
   head and predicts, for every pair of ``B``-sized query and key blocks, how
   much attention mass the block will carry. The gate is trained by
   self-distillation: the frozen attention itself produces the target, a
   2D max-pooled attention-probability map extracted by a streaming
   (FlashAttention-style) kernel without ever materializing the full map.
   At inference the gate scores are turned into a binary block mask (TopK or
   threshold) and a block-sparse streaming kernel skips the inactive blocks.

   --------------------
   Shapes and precision
   --------------------

   Every matrix is a two-dimensional :class:`numpy.ndarray`. A head of
   ``seq`` tokens with head dimension ``d`` is split into
   ``nb = ceil(seq / B)`` blocks; block matrices (gate scores, ground truth,
   masks) are ``nb x nb`` and block-causal (zero above the diagonal).

   Kernels compute in the precision of their inputs. ``f32`` is the default
   for data generation and execution, ``f64`` is used for gradient checks
   and oracle comparisons.

   -----------------------
   Configuration and usage
   -----------------------

   The shared attention settings live in :class:`blockgate.config.AttnConfig`,
   which falls back to environment variables (``BLOCKGATE_BLOCK_SIZE``,
   ``BLOCKGATE_ROPE_THETA``, ``BLOCKGATE_PRECISION``) for values that are not
   passed explicitly.

   The experiment surface is the ``blockgate`` command::

     $ blockgate gen --seq 1024 --dim 64 --heads 2 --pattern planted \\
           --seed 7 --out d.sqt
     $ blockgate train --data d.sqt --steps 300 --out gate.sqt
     $ blockgate eval --gate gate.sqt --data d.sqt --mode topk:2

   Each subcommand has its own ``--help``.

   -------------
   API Reference
   -------------

   .. automodule:: blockgate.kernels.numerics
       :members:

   .. automodule:: blockgate.kernels.attention
       :members:

   .. automodule:: blockgate.kernels.sparse
       :members:

   .. automodule:: blockgate.gate.gate
       :members:

   .. automodule:: blockgate.gate.distill
       :members:

   .. automodule:: blockgate.storage.tensor_file
       :members:

   .. automodule:: blockgate.harness.evaluate
       :members:
"""


class BlockgateError(Exception):
    pass


class InvalidArgumentError(BlockgateError, ValueError):
    pass


class DegenerateRowError(BlockgateError):
    """Raised when a masked softmax row has no allowed entry."""


class DegenerateTargetError(BlockgateError):
    """Raised when a ground-truth row carries no mass on its causal support."""


class ResourceLimitError(BlockgateError):
    pass


class TensorFormatError(BlockgateError):
    pass


class NonFiniteLossError(BlockgateError):
    """Raised when training produces a non-finite loss or gradient."""

    def __init__(self, step, lr, grad_norm):
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
        message = 'Non-finite loss at step {} (lr={!r}, grad-norm={!r})'.format(
            step, lr, grad_norm
        )
        super(NonFiniteLossError, self).__init__(message)
