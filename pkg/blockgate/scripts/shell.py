"""The ``blockgate`` command: data generation, gate training, evaluation,
benchmarks and images."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import argparse
import collections
import contextlib
import json
import logging
import logging.config
import sys

from blockgate import BlockgateError, InvalidArgumentError
from blockgate.config import AttnConfig, precision_of
from blockgate.gate.distill import TrainConfig, train_gate, write_trace
from blockgate.gate.gate import ROPE_MODES, GateConfig, pooling_combinations
from blockgate.harness.bench import (
    BenchRow,
    GtBenchRow,
    SweepRow,
    run_bench,
    run_gt_bench,
    run_pooling_sweep,
    write_rows,
)
from blockgate.harness.evaluate import eval_gate
from blockgate.harness.heatmap import emit_heatmap
from blockgate.harness.synthetic import DEFAULT_PLANTED_BLOCKS, PATTERNS, gen_synthetic
from blockgate.kernels.numerics import PoolMethod
from blockgate.scripts import progress_bar
from blockgate.storage.checkpoint import load_dataset, load_gate, save_dataset, save_gate
from blockgate.storage.tensor_file import read_tensors
from blockgate.utils import ensure_parent, parse_mode


logger = logging.getLogger(__name__)

_DESCRIPTION = """
Trains and evaluates block-sparse attention gates on synthetic data.

Block size, RoPE base and precision default to the BLOCKGATE_BLOCK_SIZE,
BLOCKGATE_ROPE_THETA and BLOCKGATE_PRECISION environment variables when
not given on the command line.

Each command has its own --help text.
"""

_DEFAULT_LOG_CONFIG_JSON = """
{
  "version": 1,
  "disable_existing_loggers": false,
  "handlers": {
    "default": {
      "class": "logging.StreamHandler",
      "formatter": "precise",
      "level": "INFO",
      "stream": "ext://sys.stderr"
    }
  },
  "formatters": {
    "precise": {
      "format": "%(asctime)s %(levelname)-8s %(name)-15s %(message)s",
      "datefmt": "%Y-%m-%d %H:%M:%S"
    }
  },
  "loggers": {
    "": {
      "handlers": ["default"],
      "level": "INFO"
    }
  }
}
"""


def _mode(text):
    try:
        return parse_mode(text)
    except InvalidArgumentError as e:
        raise argparse.ArgumentTypeError(str(e))


def _pooling(text):
    try:
        return PoolMethod.parse_list(text)
    except InvalidArgumentError as e:
        raise argparse.ArgumentTypeError(str(e))


@contextlib.contextmanager
def _output(path):
    """Yields a text stream writing to ``path``, or stdout for ``None``."""
    if path is None:
        yield sys.stdout
    else:
        ensure_parent(path)
        with open(path, 'w') as f:
            yield f


def _attn_config(options, seq_len=None, head_dim=None):
    return AttnConfig(
        seq_len=seq_len,
        head_dim=head_dim,
        block_size=getattr(options, 'block_size', None),
        rope_theta=getattr(options, 'theta', None),
        precision=getattr(options, 'precision', None),
    )


def _load_data(path):
    heads, meta = load_dataset(path)
    if not heads:
        raise InvalidArgumentError("Dataset %s holds no heads" % (path,))
    return heads, meta


def _gate_config(options, heads, meta):
    block_size = options.block_size
    if block_size is None:
        block_size = meta.get('block_size')
    if block_size is None:
        block_size = AttnConfig().block_size
    return GateConfig(
        head_dim=heads[0].q.shape[1],
        block_size=block_size,
        rope_theta=heads[0].rope_theta,
        q_pooling=options.q_pooling,
        k_pooling=options.k_pooling,
        rope_mode=options.rope_mode,
    )


def _train_config(options):
    return TrainConfig(
        lr0=options.lr,
        steps=options.steps,
        warmup=options.warmup,
        batch=options.batch,
        precision=options.precision,
    )


def cmd_gen(options):
    attn = _attn_config(options, options.seq, options.dim)
    heads = gen_synthetic(
        options.seq,
        options.dim,
        options.heads,
        options.pattern,
        options.seed,
        block_size=attn.block_size,
        rope_theta=attn.rope_theta,
        planted_blocks=options.planted_blocks,
        dtype=attn.dtype,
    )
    meta = collections.OrderedDict(
        [
            ('seq', options.seq),
            ('dim', options.dim),
            ('pattern', options.pattern),
            ('seed', options.seed),
            ('block_size', attn.block_size),
            ('rope_theta', attn.rope_theta),
            ('precision', precision_of(attn.dtype)),
            ('planted_blocks', options.planted_blocks),
        ]
    )
    save_dataset(options.out, heads, meta)


def cmd_train(options):
    heads, meta = _load_data(options.data)
    cfg = _gate_config(options, heads, meta)
    tcfg = _train_config(options)
    with progress_bar.conditional(
        show=not options.silent and tcfg.steps > 0,
        max_value=tcfg.steps,
        widgets=progress_bar.step_widgets('Training gate'),
    ) as bar:
        params, trace = train_gate(heads, cfg, tcfg, options.seed, bar=bar)
    save_gate(options.out, params, cfg)
    if options.trace:
        with _output(options.trace) as f:
            write_trace(trace, f)


def cmd_eval(options):
    params, cfg = load_gate(options.gate)
    heads, _ = _load_data(options.data)
    report = eval_gate(params, cfg, heads, options.mode, options.heatmap_dir)
    with _output(options.report) as f:
        f.write(report.to_json())
        f.write('\n')


def cmd_bench(options):
    attn = _attn_config(options)
    total = len(options.seq) * len(options.sparsity)
    with progress_bar.conditional(
        show=not options.silent,
        max_value=total,
        widgets=progress_bar.step_widgets('Benchmarking'),
    ) as bar:
        rows = run_bench(
            options.seq,
            options.sparsity,
            attn.block_size,
            options.repeats,
            head_dim=options.dim,
            seed=options.seed,
            bar=bar,
        )
    with _output(options.out) as f:
        write_rows(rows, BenchRow._fields, f)


def cmd_bench_gt(options):
    attn = _attn_config(options)
    with progress_bar.conditional(
        show=not options.silent,
        max_value=len(options.seq),
        widgets=progress_bar.step_widgets('Benchmarking'),
    ) as bar:
        rows = run_gt_bench(
            options.seq,
            options.dim,
            attn.block_size,
            options.repeats,
            seed=options.seed,
            bar=bar,
        )
    with _output(options.out) as f:
        write_rows(rows, GtBenchRow._fields, f)


def cmd_sweep(options):
    heads, meta = _load_data(options.data)
    cfg = _gate_config(options, heads, meta)
    tcfg = _train_config(options)
    with progress_bar.conditional(
        show=not options.silent,
        max_value=len(pooling_combinations()),
        widgets=progress_bar.step_widgets('Pooling sweep'),
    ) as bar:
        rows = run_pooling_sweep(heads, cfg, tcfg, options.mode, options.seed, bar=bar)
    with _output(options.out) as f:
        write_rows(rows, SweepRow._fields, f)


def cmd_viz(options):
    tensors = read_tensors(options.tensor)
    if options.name is not None:
        if options.name not in tensors:
            raise InvalidArgumentError(
                "%s has no tensor %r" % (options.tensor, options.name)
            )
        name = options.name
    else:
        matrices = [n for n, t in tensors.items() if t.ndim == 2]
        if not matrices:
            raise InvalidArgumentError("%s holds no matrix" % (options.tensor,))
        name = matrices[0]
    emit_heatmap(tensors[name], options.out)
    logger.info('Drew %s from %s to %s', name, options.tensor, options.out)


def _add_block_size(parser):
    parser.add_argument(
        '--block-size',
        type=int,
        default=None,
        help="block (and kernel tile) size (default: BLOCKGATE_BLOCK_SIZE or 64)",
    )


def _add_training(parser):
    parser.add_argument('--data', required=True, help="dataset written by gen")
    _add_block_size(parser)
    parser.add_argument('--steps', type=int, default=500, help="optimizer steps")
    parser.add_argument('--lr', type=float, default=1e-3, help="peak learning rate")
    parser.add_argument('--warmup', type=int, default=0, help="linear warmup steps")
    parser.add_argument('--batch', type=int, default=1, help="sequences per step")
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument(
        '--precision', choices=('f32', 'f64'), default='f64',
        help="training precision (default: f64)",
    )
    parser.add_argument(
        '--rope-mode', choices=ROPE_MODES, default='block',
        help="gate positional encoding (default: block)",
    )
    parser.add_argument(
        '--q-pooling', type=_pooling, default=(PoolMethod.AVERAGE,),
        help="comma-separated pooling methods for Q (default: avg)",
    )
    parser.add_argument(
        '--k-pooling', type=_pooling,
        default=(PoolMethod.MAX, PoolMethod.MIN, PoolMethod.AVERAGE),
        help="comma-separated pooling methods for K (default: max,min,avg)",
    )


def _make_parser():
    parser = argparse.ArgumentParser(prog='blockgate', description=_DESCRIPTION)
    parser.add_argument(
        '-v', '--verbose', action='store_true', help="log at DEBUG level"
    )
    parser.add_argument(
        '-L', '--log', default=None, help="log file location (default: stderr)"
    )
    parser.add_argument(
        '--log-level', default='INFO', help="log level (default: INFO)"
    )
    parser.add_argument(
        '--log-config',
        default=None,
        help="logging configuration (in JSON). "
        "Takes precedence over other logging flags",
    )
    parser.add_argument(
        '-s', '--silent', action='store_true',
        help="if set, progress bars are not printed",
    )
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    gen = commands.add_parser('gen', help="generate a synthetic dataset")
    gen.add_argument('--seq', type=int, required=True, help="tokens per head")
    gen.add_argument('--dim', type=int, required=True, help="head dimension")
    gen.add_argument('--heads', type=int, default=1)
    gen.add_argument('--pattern', choices=PATTERNS, default='planted')
    gen.add_argument('--seed', type=int, default=0)
    _add_block_size(gen)
    gen.add_argument('--theta', type=float, default=None, help="RoPE base")
    gen.add_argument('--precision', choices=('f32', 'f64'), default=None)
    gen.add_argument(
        '--planted-blocks', type=int, default=DEFAULT_PLANTED_BLOCKS,
        help="target key blocks per query block, diagonal included",
    )
    gen.add_argument('--out', required=True, help="dataset file")
    gen.set_defaults(handler=cmd_gen)

    train = commands.add_parser('train', help="distill a gate")
    _add_training(train)
    train.add_argument('--out', required=True, help="gate checkpoint file")
    train.add_argument('--trace', default=None, help="loss trace CSV")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser('eval', help="evaluate a gate")
    evaluate.add_argument('--gate', required=True, help="gate checkpoint")
    evaluate.add_argument('--data', required=True, help="dataset")
    evaluate.add_argument(
        '--mode', type=_mode, required=True, help="topk:K or threshold:T"
    )
    evaluate.add_argument(
        '--report', default=None, help="JSON report file (default: stdout)"
    )
    evaluate.add_argument(
        '--heatmap-dir', default=None, help="directory for per-head PGM images"
    )
    evaluate.set_defaults(handler=cmd_eval)

    bench = commands.add_parser('bench', help="time block-sparse attention")
    bench.add_argument('--seq', type=int, nargs='+', required=True)
    bench.add_argument(
        '--sparsity', type=float, nargs='+', default=[0.0, 0.25, 0.5, 0.75, 0.9]
    )
    _add_block_size(bench)
    bench.add_argument('--repeats', type=int, default=3)
    bench.add_argument('--dim', type=int, default=64)
    bench.add_argument('--seed', type=int, default=0)
    bench.add_argument('--out', default=None, help="CSV file (default: stdout)")
    bench.set_defaults(handler=cmd_bench)

    bench_gt = commands.add_parser(
        'bench-gt', help="compare fused and naive ground-truth extraction"
    )
    bench_gt.add_argument('--seq', type=int, nargs='+', required=True)
    _add_block_size(bench_gt)
    bench_gt.add_argument('--repeats', type=int, default=3)
    bench_gt.add_argument('--dim', type=int, default=64)
    bench_gt.add_argument('--seed', type=int, default=0)
    bench_gt.add_argument('--out', default=None, help="CSV file (default: stdout)")
    bench_gt.set_defaults(handler=cmd_bench_gt)

    sweep = commands.add_parser('sweep', help="train one gate per pooling choice")
    _add_training(sweep)
    sweep.add_argument('--mode', type=_mode, required=True, help="topk:K or threshold:T")
    sweep.add_argument('--out', default=None, help="CSV file (default: stdout)")
    sweep.set_defaults(handler=cmd_sweep)

    viz = commands.add_parser('viz', help="draw a tensor as a PGM image")
    viz.add_argument('--tensor', required=True, help="tensor file")
    viz.add_argument('--name', default=None, help="tensor name (default: first matrix)")
    viz.add_argument('--out', required=True, help="PGM file")
    viz.set_defaults(handler=cmd_viz)

    return parser


def _configure_logging(options):
    if options.log_config:
        with open(options.log_config) as f:
            log_config = json.load(f)
    else:
        log_config = json.loads(_DEFAULT_LOG_CONFIG_JSON)
        level = 'DEBUG' if options.verbose else options.log_level
        if options.log:
            log_config['handlers']['default'] = {
                'class': 'logging.FileHandler',
                'formatter': 'precise',
                'filename': options.log,
            }
        log_config['handlers']['default']['level'] = level
        log_config['loggers']['']['level'] = level

    logging.config.dictConfig(log_config)


def main(args=None):
    """Runs the command line; returns the process exit code.

    0 on success, 2 on argument errors, 1 on runtime errors.
    """
    parser = _make_parser()
    try:
        options = parser.parse_args(args)
    except SystemExit as e:
        return e.code

    try:
        _configure_logging(options)
    except (OSError, ValueError) as e:
        print('blockgate: cannot configure logging: %s' % (e,), file=sys.stderr)
        return 2

    try:
        options.handler(options)
    except InvalidArgumentError as e:
        logger.error('%s', e)
        return 2
    except (BlockgateError, OSError) as e:
        logger.error('%s', e)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
