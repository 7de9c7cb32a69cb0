"""Timing and memory benchmarks, and the pooling-composition sweep.

All results are lists of namedtuples; :func:`write_rows` dumps them as CSV.
"""

import collections
import csv
import logging
import math
import time

import numpy as np

from blockgate import ResourceLimitError
from blockgate.gate.distill import train_gate
from blockgate.gate.gate import pooling_combinations
from blockgate.harness.evaluate import eval_gate
from blockgate.kernels.attention import (
    KernelStats,
    attention_with_block_gt,
    oracle_block_gt,
)
from blockgate.kernels.numerics import PoolMethod, block_causal
from blockgate.kernels.sparse import block_sparse_attention, random_block_mask
from blockgate.utils import check_positive, num_blocks


logger = logging.getLogger(__name__)

BenchRow = collections.namedtuple(
    'BenchRow', ['seq', 'sparsity', 'dense_ms', 'sparse_ms', 'speedup']
)
GtBenchRow = collections.namedtuple(
    'GtBenchRow', ['seq', 'fused_ms', 'naive_ms', 'fused_peak', 'naive_peak']
)
SweepRow = collections.namedtuple(
    'SweepRow', ['q_pooling', 'k_pooling', 'final_loss', 'mask_recall']
)


def median_ms(fn, repeats):
    """Runs ``fn`` ``repeats`` times and returns the median wall time in ms."""
    check_positive('repeats', repeats)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(times))


def _random_qkv(rng, seq, d, dtype=np.float32):
    scale = 1.0 / math.sqrt(d)
    return tuple(
        (rng.standard_normal((seq, d)) * scale).astype(dtype) for _ in range(3)
    )


def run_bench(seqs, sparsities, block_size, repeats, head_dim=64, seed=0, bar=None):
    """Times block-sparse attention against the same kernel with a full
    causal mask.

    Masks are drawn uniformly at random at each requested sparsity, always
    keeping the diagonal. Returns a list of :class:`BenchRow`.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for seq in seqs:
        q, k, v = _random_qkv(rng, seq, head_dim)
        nb = num_blocks(seq, block_size)
        full = block_causal(nb)
        dense_ms = median_ms(
            lambda: block_sparse_attention(q, k, v, full, block_size), repeats
        )
        for sparsity in sparsities:
            mask = random_block_mask(nb, sparsity, rng)
            sparse_ms = median_ms(
                lambda: block_sparse_attention(q, k, v, mask, block_size), repeats
            )
            rows.append(
                BenchRow(seq, sparsity, dense_ms, sparse_ms, dense_ms / sparse_ms)
            )
            logger.info(
                'seq=%d sparsity=%.2f: dense %.1f ms, sparse %.1f ms (%.2fx)',
                seq,
                sparsity,
                dense_ms,
                sparse_ms,
                dense_ms / sparse_ms,
            )
            if bar is not None:
                bar.update(len(rows))
    return rows


def run_gt_bench(seqs, head_dim, block_size, repeats, seed=0, bar=None):
    """Compares the fused ground-truth kernel with the materializing oracle.

    Peaks are element counts of the largest temporary buffer. The naive
    columns are ``None`` where the oracle refuses the length.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for seq in seqs:
        q, k, v = _random_qkv(rng, seq, head_dim)
        stats = KernelStats()
        attention_with_block_gt(q, k, v, block_size, stats=stats)
        fused_ms = median_ms(
            lambda: attention_with_block_gt(q, k, v, block_size), repeats
        )
        try:
            naive_ms = median_ms(lambda: oracle_block_gt(q, k, block_size), repeats)
            padded = num_blocks(seq, block_size) * block_size
            naive_peak = padded * padded
        except ResourceLimitError as e:
            logger.info('Skipping naive ground truth: %s', e)
            naive_ms = naive_peak = None
        rows.append(GtBenchRow(seq, fused_ms, naive_ms, stats.peak_elements, naive_peak))
        if bar is not None:
            bar.update(len(rows))
    return rows


def run_pooling_sweep(dataset, cfg, tcfg, mode, seed, combos=None, bar=None):
    """Trains and evaluates one gate per pooling composition.

    ``combos`` defaults to :func:`pooling_combinations`; the rest of ``cfg``
    is kept. Returns a list of :class:`SweepRow`.
    """
    if combos is None:
        combos = pooling_combinations()
    rows = []
    for q_pooling, k_pooling in combos:
        variant = cfg.replace(
            q_pooling=[m.value for m in q_pooling],
            k_pooling=[m.value for m in k_pooling],
        )
        params, trace = train_gate(dataset, variant, tcfg, seed)
        report = eval_gate(params, variant, dataset, mode)
        final_loss = trace[-1].loss if trace else float('nan')
        rows.append(
            SweepRow(
                PoolMethod.format_list(q_pooling),
                PoolMethod.format_list(k_pooling),
                final_loss,
                report.mask_recall,
            )
        )
        logger.info(
            'Pooling q=%s k=%s: loss %.5f, recall %.3f',
            rows[-1].q_pooling,
            rows[-1].k_pooling,
            final_loss,
            report.mask_recall,
        )
        if bar is not None:
            bar.update(len(rows))
    return rows


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value


def write_rows(rows, fields, stream):
    """Writes rows as CSV under a header of ``fields``."""
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
