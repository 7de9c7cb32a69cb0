"""Gate checkpoints and datasets on disk.

Both are tensor files with a JSON sidecar next to them (``<path>.json``):

* a gate checkpoint holds ``W_q`` and ``W_k``; its sidecar is the
  :class:`blockgate.gate.gate.GateConfig`;
* a dataset holds ``h{i}/q``, ``h{i}/k``, ``h{i}/v`` (and ``h{i}/planted``,
  a 0/1 block matrix, for planted data) for every head ``i``; its sidecar
  records how the data was generated.
"""

import collections
import json
import logging

import numpy as np

from blockgate import InvalidArgumentError, TensorFormatError
from blockgate.gate.gate import GateConfig, GateParams
from blockgate.heads import make_head
from blockgate.storage.tensor_file import read_tensors, write_tensors
from blockgate.utils import ensure_parent


logger = logging.getLogger(__name__)


def sidecar_path(path):
    return path + '.json'


def _write_sidecar(path, fields):
    with open(sidecar_path(path), 'w') as f:
        json.dump(fields, f, indent=2, sort_keys=True)
        f.write('\n')


def _read_sidecar(path):
    try:
        with open(sidecar_path(path)) as f:
            return json.load(f)
    except ValueError as e:
        raise TensorFormatError("Malformed sidecar %s: %s" % (sidecar_path(path), e))


def _require(tensors, name, path):
    try:
        return tensors[name]
    except KeyError:
        raise TensorFormatError("%s has no tensor %r" % (path, name))


def save_gate(path, params, cfg):
    params.check(cfg)
    ensure_parent(path)
    write_tensors(path, [('W_q', params.w_q), ('W_k', params.w_k)])
    _write_sidecar(path, cfg.to_dict())
    logger.info('Saved gate to %s', path)


def load_gate(path):
    """Returns ``(params, cfg)``; raises :class:`TensorFormatError` when the
    tensors do not fit the stored config."""
    cfg = GateConfig.from_dict(_read_sidecar(path))
    tensors = read_tensors(path)
    params = GateParams(_require(tensors, 'W_q', path), _require(tensors, 'W_k', path))
    try:
        params.check(cfg)
    except InvalidArgumentError as e:
        raise TensorFormatError("%s: %s" % (path, e))
    return params, cfg


def save_dataset(path, heads, meta):
    """Writes ``heads`` (a list of :class:`HeadTensors`) and ``meta``, a
    JSON-serializable dict describing them."""
    tensors = []
    for i, head in enumerate(heads):
        tensors.append(('h%d/q' % i, head.q))
        tensors.append(('h%d/k' % i, head.k))
        tensors.append(('h%d/v' % i, head.v))
        if head.planted is not None:
            tensors.append(('h%d/planted' % i, head.planted.astype(np.float32)))
    ensure_parent(path)
    write_tensors(path, tensors)
    meta = collections.OrderedDict(meta)
    meta['heads'] = len(heads)
    _write_sidecar(path, meta)
    logger.info('Saved %d heads to %s', len(heads), path)


def load_dataset(path):
    """Returns ``(heads, meta)``."""
    meta = _read_sidecar(path)
    tensors = read_tensors(path)
    try:
        count = int(meta['heads'])
        rope_theta = float(meta['rope_theta'])
    except (KeyError, TypeError, ValueError):
        raise TensorFormatError(
            "Sidecar %s lacks heads or rope_theta" % (sidecar_path(path),)
        )
    heads = []
    for i in range(count):
        planted = tensors.get('h%d/planted' % i)
        if planted is not None:
            planted = planted != 0
        heads.append(
            make_head(
                _require(tensors, 'h%d/q' % i, path),
                _require(tensors, 'h%d/k' % i, path),
                _require(tensors, 'h%d/v' % i, path),
                rope_theta,
                planted=planted,
            )
        )
    logger.info('Loaded %d heads from %s', count, path)
    return heads, meta
