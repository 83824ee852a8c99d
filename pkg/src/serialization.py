"""
Versioned flat binary format for named float64 tensors.

Layout: the magic bytes ``DPNSE01`` followed by one record per tensor:
name length (u64), UTF-8 name, rank (u64), dims (u64 each), data (f64).
Every integer and float is little-endian.
"""
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .exceptions import InputError

MAGIC = b"DPNSE01"
_U64 = struct.Struct("<Q")


def dumps(named: Mapping[str, np.ndarray]) -> bytes:
    """
    Encode named tensors as a DPNSE01 payload.

    Args:
        named: Tensor name to array, written in iteration order

    Returns:
        The magic bytes followed by one record per tensor
    """
    chunks = [MAGIC]
    for name, array in named.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8")
        chunks.append(_U64.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U64.pack(array.ndim))
        chunks.extend(_U64.pack(dim) for dim in array.shape)
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def loads(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    """
    Decode a DPNSE01 payload.

    Args:
        payload: Bytes produced by dumps

    Returns:
        Tensors in file order, as float64 arrays

    Raises:
        InputError: Bad magic, a truncated record or a name that is not UTF-8
    """
    if payload[:len(MAGIC)] != MAGIC:
        raise InputError("not a DPNSE01 model file (bad magic)")
    offset = len(MAGIC)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def read_u64() -> int:
        nonlocal offset
        if offset + 8 > len(payload):
            raise InputError("truncated DPNSE01 model file")
        (value,) = _U64.unpack_from(payload, offset)
        offset += 8
        return value

    while offset < len(payload):
        name_len = read_u64()
        if offset + name_len > len(payload):
            raise InputError("truncated DPNSE01 model file")
        try:
            name = payload[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise InputError("corrupt tensor name in DPNSE01 model file")
        offset += name_len
        rank = read_u64()
        shape = tuple(read_u64() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(payload):
            raise InputError(f"truncated DPNSE01 model file while reading {name!r}")
        if count == 0:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset = end
    return tensors


def save_tensors(path: Union[str, Path], named: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(named))


def load_tensors(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())
