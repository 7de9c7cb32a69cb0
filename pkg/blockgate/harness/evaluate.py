"""Evaluation of a gate against the masks its own ground truth induces.

For every head the frozen attention yields the ground truth, which is
normalized and turned into a *reference* mask with the same selection mode
(TopK or threshold) used on the gate's scores. The *predicted* mask then
drives the block-sparse kernel, whose output is compared with exact causal
attention.

Recall and precision count off-diagonal blocks only (the diagonal is
forced on both sides) and are pooled over all heads before dividing.
"""

import collections
import json
import logging
import os.path

import numpy as np

from blockgate import InvalidArgumentError
from blockgate.gate.distill import normalize_target
from blockgate.gate.gate import gate_forward
from blockgate.harness.heatmap import emit_heatmap
from blockgate.heads import attention_inputs, gate_inputs
from blockgate.kernels.attention import attention_with_block_gt
from blockgate.kernels.sparse import (
    block_sparse_attention,
    sparsity_ratio,
    threshold_mask,
    topk_mask,
)
from blockgate.utils import mkdir, parse_mode


logger = logging.getLogger(__name__)


SeqReport = collections.namedtuple(
    'SeqReport',
    [
        'index',
        'sparsity',
        'hits',
        'reference_blocks',
        'predicted_blocks',
        'max_abs_err',
        'rel_err',
    ],
)
"""Per-head evaluation result.

    ``hits``, ``reference_blocks`` and ``predicted_blocks`` count active
    off-diagonal blocks.
"""


def _ratio(num, den):
    return float(num) / den if den else 1.0


class EvalReport(object):
    """Aggregated evaluation of one gate over a dataset."""

    def __init__(self, seqs):
        self.seqs = list(seqs)
        hits = sum(s.hits for s in self.seqs)
        self.sparsity = float(np.mean([s.sparsity for s in self.seqs]))
        self.mask_recall = _ratio(hits, sum(s.reference_blocks for s in self.seqs))
        self.mask_precision = _ratio(
            hits, sum(s.predicted_blocks for s in self.seqs)
        )
        self.output_max_abs_err = max(s.max_abs_err for s in self.seqs)
        self.output_rel_err = float(np.mean([s.rel_err for s in self.seqs]))

    def to_dict(self):
        per_seq = [
            collections.OrderedDict(
                [
                    ('index', s.index),
                    ('sparsity', s.sparsity),
                    ('maskRecall', _ratio(s.hits, s.reference_blocks)),
                    ('maskPrecision', _ratio(s.hits, s.predicted_blocks)),
                    ('outputMaxAbsErr', s.max_abs_err),
                    ('outputRelErr', s.rel_err),
                ]
            )
            for s in self.seqs
        ]
        return collections.OrderedDict(
            [
                ('sparsity', self.sparsity),
                ('maskRecall', self.mask_recall),
                ('maskPrecision', self.mask_precision),
                ('outputMaxAbsErr', self.output_max_abs_err),
                ('outputRelErr', self.output_rel_err),
                ('perSeq', per_seq),
            ]
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def select_mask(score, mode):
    """Applies a mode, ``(kind, value)`` or its text form ``topk:K`` /
    ``threshold:T``, to a score matrix."""
    kind, value = parse_mode(mode) if isinstance(mode, str) else mode
    if kind == 'topk':
        return topk_mask(score, value)
    return threshold_mask(score, value)


def _off_diagonal(mask):
    return mask & ~np.eye(mask.shape[0], dtype=bool)


def _draw(heatmap_dir, index, images):
    for name, m in images:
        emit_heatmap(m, os.path.join(heatmap_dir, 'h%d_%s.pgm' % (index, name)))


def eval_head(index, params, cfg, head, mode, heatmap_dir=None):
    q, k, v = attention_inputs(head)
    # The streamed output is the exact causal attention.
    exact, gt = attention_with_block_gt(q, k, v, cfg.block_size)
    target = normalize_target(gt)
    reference = select_mask(target, mode)

    q_in, k_in = gate_inputs(head, cfg)
    score = gate_forward(q_in, k_in, params, cfg)
    predicted = select_mask(score, mode)

    out = block_sparse_attention(q, k, v, predicted, cfg.block_size)
    diff = (out - exact).astype(np.float64)
    norm = np.linalg.norm(exact.astype(np.float64))

    if heatmap_dir is not None:
        _draw(
            heatmap_dir,
            index,
            [
                ('gt', target),
                ('score', score),
                ('ref_mask', reference),
                ('pred_mask', predicted),
            ],
        )

    return SeqReport(
        index=index,
        sparsity=sparsity_ratio(predicted),
        hits=int((_off_diagonal(predicted) & reference).sum()),
        reference_blocks=int(_off_diagonal(reference).sum()),
        predicted_blocks=int(_off_diagonal(predicted).sum()),
        max_abs_err=float(np.abs(diff).max()),
        rel_err=float(np.linalg.norm(diff) / norm) if norm > 0 else 0.0,
    )


def eval_gate(params, cfg, dataset, mode, heatmap_dir=None):
    """Evaluates ``params`` on every head of ``dataset``.

    :param mode: ``topk:K`` / ``threshold:T`` or the parsed tuple
    :param heatmap_dir: when given, per-head PGMs of the normalized ground
        truth, the gate scores and both masks are written there
    :rtype: :class:`EvalReport`
    """
    params.check(cfg)
    if not dataset:
        raise InvalidArgumentError("Cannot evaluate on an empty dataset")
    if isinstance(mode, str):
        mode = parse_mode(mode)
    if heatmap_dir is not None:
        mkdir(heatmap_dir)
    seqs = [
        eval_head(i, params, cfg, head, mode, heatmap_dir)
        for i, head in enumerate(dataset)
    ]
    report = EvalReport(seqs)
    logger.info(
        'Evaluated %d heads with %s:%s: recall %.3f, precision %.3f, '
        'sparsity %.3f, rel err %.3g',
        len(seqs),
        mode[0],
        mode[1],
        report.mask_recall,
        report.mask_precision,
        report.sparsity,
        report.output_rel_err,
    )
    return report
