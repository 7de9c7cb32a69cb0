"""Self-distillation of a gate against the frozen attention.

The target for one head is its max-pooled attention map with every row
renormalized over its causal support. The gate is trained to minimize the
row-averaged KL divergence ``KL(target || score)``. Only ``W_q`` and
``W_k`` receive gradients; pooling inputs and the attention itself are
frozen. Parameters are updated with Adam under a linear-warmup, cosine-decay
learning rate.
"""

import collections
import csv
import logging
import math

import numpy as np

from blockgate import DegenerateTargetError, InvalidArgumentError, NonFiniteLossError
from blockgate.config import dtype_for
from blockgate.gate.gate import block_positions, gate_activations, init_gate_params
from blockgate.heads import attention_inputs, gate_inputs
from blockgate.kernels.attention import attention_with_block_gt
from blockgate.kernels.numerics import as_matrix, block_causal, rope_unrotate
from blockgate.utils import check_positive


logger = logging.getLogger(__name__)

KL_EPSILON = 1e-12


TraceEntry = collections.namedtuple('TraceEntry', ['step', 'lr', 'loss'])


class TrainConfig(object):
    """Optimizer settings.

    :param float lr0: peak learning rate
    :param int steps: number of optimizer steps (0 leaves params untouched)
    :param int warmup: linear warmup steps before the cosine decay
    :param int batch: sequences per step
    :param str precision: ``f32`` or ``f64``
    """

    def __init__(
        self,
        lr0=1e-3,
        steps=500,
        warmup=0,
        batch=1,
        precision='f64',
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
    ):
        if not lr0 > 0:
            raise InvalidArgumentError("Learning rate must be positive, not %r" % (lr0,))
        if steps < 0 or warmup < 0:
            raise InvalidArgumentError("Step counts must not be negative")
        check_positive('batch size', batch)
        dtype_for(precision)
        self.lr0 = lr0
        self.steps = steps
        self.warmup = warmup
        self.batch = batch
        self.precision = precision
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


class TrainState(object):
    """Params plus Adam moments; ``step`` counts applied updates."""

    def __init__(self, params):
        self.step = 0
        self.params = params
        self.first_moments = [np.zeros_like(w) for w in params]
        self.second_moments = [np.zeros_like(w) for w in params]

    def apply(self, grads, lr, tcfg):
        self.step += 1
        bias1 = 1.0 - tcfg.beta1 ** self.step
        bias2 = 1.0 - tcfg.beta2 ** self.step
        for w, g, m, v in zip(
            self.params, grads, self.first_moments, self.second_moments
        ):
            m *= tcfg.beta1
            m += (1.0 - tcfg.beta1) * g
            v *= tcfg.beta2
            v += (1.0 - tcfg.beta2) * g * g
            w -= lr * (m / bias1) / (np.sqrt(v / bias2) + tcfg.eps)


def learning_rate(tcfg, step):
    """Learning rate of the zero-based ``step``."""
    if step < tcfg.warmup:
        return tcfg.lr0 * (step + 1) / tcfg.warmup
    decay_steps = max(tcfg.steps - tcfg.warmup, 1)
    progress = (step - tcfg.warmup) / decay_steps
    return tcfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * progress))


def _check_square(m, what):
    if m.shape[0] != m.shape[1]:
        raise InvalidArgumentError("%s must be square, got %s" % (what, m.shape))


def normalize_target(gt):
    """Divides every ground-truth row by its sum over the causal support."""
    gt = as_matrix(gt)
    _check_square(gt, 'Ground truth')
    masked = np.where(block_causal(gt.shape[0]), gt, 0)
    sums = masked.sum(axis=1)
    empty = np.flatnonzero(~(sums > 0))
    if empty.size:
        raise DegenerateTargetError(
            "Ground-truth row %d has no mass on its causal support" % (empty[0],)
        )
    return masked / sums[:, None]


def kl_loss(target, score):
    """Row-averaged ``KL(target || score)``; zero-target terms contribute
    nothing and scores are clamped below at ``1e-12``."""
    target = as_matrix(target)
    score = as_matrix(score)
    if target.shape != score.shape:
        raise InvalidArgumentError(
            "Target %s and score %s differ in shape" % (target.shape, score.shape)
        )
    _check_square(score, 'Score')
    if np.triu(target, 1).any() or np.triu(score, 1).any():
        raise InvalidArgumentError("Target and score must be block-causal")
    positive = target > 0
    safe_target = np.where(positive, target, 1.0)
    log_ratio = np.log(safe_target) - np.log(np.maximum(score, KL_EPSILON))
    terms = np.where(positive, target * log_ratio, 0.0)
    return max(float(terms.sum(axis=1).mean()), 0.0)


def gate_backward(q_pre, k_pre, params, cfg, target):
    """Analytic gradients of :func:`kl_loss` with respect to ``W_q`` and
    ``W_k``.

    Returns ``(grad_w_q, grad_w_k, loss)``. A diverged gate (non-finite
    scores) yields a NaN loss rather than an exception, so the trainer can
    report where it happened.
    """
    act = gate_activations(q_pre, k_pre, params, cfg)
    score = act.score
    nb = score.shape[0]
    target = as_matrix(target, score.dtype)
    if target.shape != score.shape:
        raise InvalidArgumentError(
            "Target %s does not match %d gate blocks" % (target.shape, nb)
        )
    if np.all(np.isfinite(score)):
        loss = kl_loss(target, score)
    else:
        loss = float('nan')

    row_mass = target.sum(axis=1, keepdims=True)
    d_logits = np.where(block_causal(nb), score * row_mass - target, 0) / nb
    scale = score.dtype.type(1.0 / math.sqrt(cfg.head_dim))
    d_rot_q = np.matmul(d_logits, act.rot_k) * scale
    d_rot_k = np.matmul(d_logits.T, act.rot_q) * scale

    # The block rotation is orthogonal: its gradient is the inverse rotation.
    positions = block_positions(nb, cfg)
    d_proj_q = rope_unrotate(d_rot_q, positions, cfg.block_theta)
    d_proj_k = rope_unrotate(d_rot_k, positions, cfg.block_theta)

    grad_w_q = np.matmul(act.pooled_q.T, d_proj_q)
    grad_w_k = np.matmul(act.pooled_k.T, d_proj_k)
    return grad_w_q, grad_w_k, loss


def distillation_target(head, block_size, dtype=None):
    """Runs the frozen attention of ``head`` and returns its normalized
    max-pooled map."""
    q, k, v = attention_inputs(head)
    _, gt = attention_with_block_gt(q, k, v, block_size)
    target = normalize_target(gt)
    if dtype is not None:
        target = target.astype(dtype)
    return target


def train_gate(dataset, cfg, tcfg, seed, params=None, bar=None):
    """Distills a gate on ``dataset`` (a list of :class:`HeadTensors`).

    Initial params are drawn from ``seed`` unless given; batches are sampled
    with a generator seeded by ``seed`` as well, and gradients are summed in
    sampling order, so equal seeds give identical runs.

    ``bar`` is an optional progress bar (anything with ``update(value)``).

    Returns ``(params, trace)`` where ``trace`` is a list of
    :class:`TraceEntry`, one per step, holding the loss before the update.
    """
    if not dataset:
        raise InvalidArgumentError("Cannot train on an empty dataset")
    dtype = dtype_for(tcfg.precision)
    if params is None:
        params = init_gate_params(cfg, seed, dtype)
    else:
        params = params.astype(dtype)
    params.check(cfg)
    state = TrainState(params)
    rng = np.random.default_rng(seed)
    targets = {}
    trace = []

    logger.info(
        'Training gate on %d heads: %d steps, batch %d, lr0=%g',
        len(dataset),
        tcfg.steps,
        tcfg.batch,
        tcfg.lr0,
    )
    for step in range(tcfg.steps):
        lr = learning_rate(tcfg, step)
        batch = rng.choice(
            len(dataset), size=tcfg.batch, replace=len(dataset) < tcfg.batch
        )
        grads = [np.zeros_like(w) for w in state.params]
        loss = 0.0
        for index in batch:
            head = dataset[index]
            if index not in targets:
                targets[index] = distillation_target(head, cfg.block_size, dtype)
            q_in, k_in = gate_inputs(head, cfg)
            grad_q, grad_k, head_loss = gate_backward(
                np.asarray(q_in, dtype),
                np.asarray(k_in, dtype),
                state.params,
                cfg,
                targets[index],
            )
            grads[0] += grad_q / tcfg.batch
            grads[1] += grad_k / tcfg.batch
            loss += head_loss / tcfg.batch

        grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if not (math.isfinite(loss) and math.isfinite(grad_norm)):
            raise NonFiniteLossError(step, lr, grad_norm)
        state.apply(grads, lr, tcfg)
        trace.append(TraceEntry(step, lr, loss))
        logger.debug(
            'step %d: lr=%.3g loss=%.6f grad-norm=%.4g', step, lr, loss, grad_norm
        )
        if bar is not None:
            bar.update(step + 1)

    if trace:
        logger.info(
            'Training done: loss %.6f -> %.6f', trace[0].loss, trace[-1].loss
        )
    return state.params, trace


def write_trace(trace, stream):
    """Writes a loss trace as CSV with header ``step,lr,loss``."""
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(['step', 'lr', 'loss'])
    for entry in trace:
        writer.writerow([entry.step, repr(entry.lr), repr(entry.loss)])
