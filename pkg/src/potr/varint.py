"""Unsigned LEB128 varints and zigzag signed mapping over numpy arrays."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _uleb_encode(values):
    buf = np.empty(values.shape[0] * 10, dtype=np.uint8)
    pos = 0
    for i in range(values.shape[0]):
        v = values[i]
        while v > np.uint64(0x7F):
            buf[pos] = np.uint8((v & np.uint64(0x7F)) | np.uint64(0x80))
            pos += 1
            v = v >> np.uint64(7)
        buf[pos] = np.uint8(v)
        pos += 1
    return buf, pos


@njit(cache=True, nogil=True)
def _uleb_decode(buf, count):
    out = np.zeros(count, dtype=np.uint64)
    pos = 0
    for i in range(count):
        result = np.uint64(0)
        shift = np.uint64(0)
        while True:
            if pos >= buf.shape[0]:
                return out, -1  # truncated
            byte = buf[pos]
            pos += 1
            result |= np.uint64(byte & 0x7F) << shift
            if byte < 0x80:
                break
            shift += np.uint64(7)
            if shift > np.uint64(63):
                return out, -2  # overlong
        out[i] = result
    return out, pos


def uleb_encode(values) -> bytes:
    arr = np.ascontiguousarray(values, dtype=np.uint64)
    buf, n = _uleb_encode(arr)
    return buf[:n].tobytes()


def uleb_decode(data, count):
    """Decode `count` varints; returns (uint64 array, bytes consumed)."""
    buf = np.frombuffer(data, dtype=np.uint8)
    out, pos = _uleb_decode(buf, count)
    if pos == -1:
        raise ValueError("truncated varint stream")
    if pos == -2:
        raise ValueError("overlong varint")
    return out, pos


def zigzag_encode(values):
    """int64 -> uint64 with small magnitudes mapped to small codes."""
    x = np.ascontiguousarray(values, dtype=np.int64)
    return ((x << 1) ^ (x >> 63)).view(np.uint64)


def zigzag_decode(values):
    z = np.ascontiguousarray(values, dtype=np.uint64)
    return ((z >> np.uint64(1)) ^ (np.uint64(0) - (z & np.uint64(1)))).view(np.int64)
