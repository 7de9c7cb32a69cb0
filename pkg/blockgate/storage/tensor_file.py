"""Reader and writer of the tensor file format.

A tensor file is a concatenation of records, one per named tensor::

    magic    4 bytes   b'SQT1'
    version  u32       1
    name     u32 length followed by that many bytes of UTF-8
    ndim     u32
    dims     ndim x u64
    dtype    u8        0 = float32, 1 = float64
    payload  prod(dims) elements, row-major, little-endian

All integers are little-endian. See ``FORMAT.md`` for details.
"""

import collections
import logging
import os
import struct

import numpy as np

from blockgate import InvalidArgumentError, TensorFormatError


logger = logging.getLogger(__name__)

MAGIC = b'SQT1'
VERSION = 1

_DTYPE_CODES = {
    np.dtype('<f4'): 0,
    np.dtype('<f8'): 1,
}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}

_HEADER = struct.Struct('<4sI')
_U32 = struct.Struct('<I')
_U8 = struct.Struct('<B')

_MAX_SIZE = int(np.iinfo(np.intp).max)


def _is_path(target):
    return isinstance(target, (str, bytes, os.PathLike))


def _items(tensors):
    if hasattr(tensors, 'items'):
        return list(tensors.items())
    return list(tensors)


def _encode(name, array):
    array = np.asarray(array)
    try:
        code = _DTYPE_CODES[array.dtype.newbyteorder('<')]
    except KeyError:
        raise InvalidArgumentError(
            "Tensor %r has dtype %s; only float32 and float64 are stored"
            % (name, array.dtype)
        )
    raw_name = name.encode('utf-8')
    parts = [
        _HEADER.pack(MAGIC, VERSION),
        _U32.pack(len(raw_name)),
        raw_name,
        _U32.pack(array.ndim),
        struct.pack('<%dQ' % array.ndim, *array.shape),
        _U8.pack(code),
        np.ascontiguousarray(array, dtype=_CODE_DTYPES[code]).tobytes(),
    ]
    return b''.join(parts)


def write_tensors(dest, tensors):
    """Writes named tensors in order.

    Args:
        dest: either a binary file-like object or a path to file
        tensors: a mapping or a sequence of ``(name, array)`` pairs
    """
    should_close = False

    if _is_path(dest):
        should_close = True
        dest = open(dest, 'wb')

    try:
        for name, array in _items(tensors):
            dest.write(_encode(name, array))
    finally:
        if should_close:
            dest.close()


def _payload_size(name, shape, dtype):
    size = bound = dtype.itemsize
    for dim in shape:
        size *= dim
        bound *= max(dim, 1)
    if bound > _MAX_SIZE:
        raise TensorFormatError(
            "Tensor %r has an impossible shape %s" % (name, tuple(shape))
        )
    return size


def _remaining(source):
    try:
        if not source.seekable():
            return None
        position = source.tell()
        end = source.seek(0, os.SEEK_END)
        source.seek(position)
    except (AttributeError, OSError):
        return None
    return end - position


def _read_exactly(source, size, what):
    data = source.read(size)
    if len(data) != size:
        raise TensorFormatError(
            "Truncated tensor file: expected %d bytes of %s, got %d"
            % (size, what, len(data))
        )
    return data


def _read_record(source, header):
    magic, version = _HEADER.unpack(header)
    if magic != MAGIC:
        raise TensorFormatError("Bad magic %r" % (magic,))
    if version != VERSION:
        raise TensorFormatError("Unsupported tensor file version %d" % (version,))

    (name_len,) = _U32.unpack(_read_exactly(source, _U32.size, 'name length'))
    try:
        name = _read_exactly(source, name_len, 'name').decode('utf-8')
    except UnicodeDecodeError:
        raise TensorFormatError("Tensor name is not valid UTF-8")
    (ndim,) = _U32.unpack(_read_exactly(source, _U32.size, 'rank'))
    shape = struct.unpack(
        '<%dQ' % ndim, _read_exactly(source, 8 * ndim, 'dimensions')
    )
    (code,) = _U8.unpack(_read_exactly(source, _U8.size, 'dtype'))
    if code not in _CODE_DTYPES:
        raise TensorFormatError("Unknown dtype code %d for %r" % (code, name))
    dtype = _CODE_DTYPES[code]

    size = _payload_size(name, shape, dtype)
    left = _remaining(source)
    if left is not None and size > left:
        raise TensorFormatError(
            "Truncated tensor file: %r needs %d payload bytes, %d left"
            % (name, size, left)
        )
    payload = _read_exactly(source, size, 'payload of ' + name)
    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return name, array.astype(dtype.newbyteorder('='))


def read_tensors(source):
    """Reads every tensor of a file.

    Args:
        source: either a binary file-like object or a path to file

    Returns:
        an ``OrderedDict`` of name to array, in file order
    """
    should_close = False

    if _is_path(source):
        should_close = True
        source = open(source, 'rb')

    tensors = collections.OrderedDict()
    try:
        while True:
            header = source.read(_HEADER.size)
            if not header:
                break
            if len(header) != _HEADER.size:
                raise TensorFormatError("Truncated tensor header")
            name, array = _read_record(source, header)
            if name in tensors:
                raise TensorFormatError("Duplicate tensor %r" % (name,))
            tensors[name] = array
    finally:
        if should_close:
            source.close()

    logger.debug('Read %d tensors', len(tensors))
    return tensors
