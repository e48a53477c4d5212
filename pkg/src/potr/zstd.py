"""Minimal zstd bindings over the system libzstd (one-shot simple API).

Only the single-frame compress/decompress entry points are exposed; both are
deterministic for a given (payload, level) pair, which the container format
relies on.
"""

import ctypes
import ctypes.util


class ZstdError(RuntimeError):
    pass


def _load():
    name = ctypes.util.find_library("zstd") or "libzstd.so.1"
    lib = ctypes.CDLL(name)
    lib.ZSTD_compressBound.restype = ctypes.c_size_t
    lib.ZSTD_compressBound.argtypes = [ctypes.c_size_t]
    lib.ZSTD_compress.restype = ctypes.c_size_t
    lib.ZSTD_compress.argtypes = [
        ctypes.c_void_p, ctypes.c_size_t,
        ctypes.c_char_p, ctypes.c_size_t,
        ctypes.c_int,
    ]
    lib.ZSTD_decompress.restype = ctypes.c_size_t
    lib.ZSTD_decompress.argtypes = [
        ctypes.c_void_p, ctypes.c_size_t,
        ctypes.c_char_p, ctypes.c_size_t,
    ]
    lib.ZSTD_isError.restype = ctypes.c_uint
    lib.ZSTD_isError.argtypes = [ctypes.c_size_t]
    lib.ZSTD_maxCLevel.restype = ctypes.c_int
    return lib


_lib = _load()

MAX_LEVEL = int(_lib.ZSTD_maxCLevel())


def compress(data: bytes, level: int = 19) -> bytes:
    if not 1 <= level <= MAX_LEVEL:
        raise ValueError(f"zstd level must be in 1..{MAX_LEVEL}, got {level}")
    bound = _lib.ZSTD_compressBound(len(data))
    buf = ctypes.create_string_buffer(bound)
    n = _lib.ZSTD_compress(buf, bound, data, len(data), level)
    if _lib.ZSTD_isError(n):
        raise ZstdError("zstd compression failed")
    return buf.raw[:n]


def decompress(data: bytes, expected_size: int) -> bytes:
    """Decompress a single frame whose uncompressed size is known exactly."""
    buf = ctypes.create_string_buffer(expected_size) if expected_size else None
    n = _lib.ZSTD_decompress(buf, expected_size, data, len(data))
    if _lib.ZSTD_isError(n):
        raise ZstdError("corrupt zstd frame")
    if n != expected_size:
        raise ZstdError(f"zstd frame decoded {n} bytes, expected {expected_size}")
    return buf.raw[:n] if buf is not None else b""
