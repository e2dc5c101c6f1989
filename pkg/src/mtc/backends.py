"""Pluggable block compressor backends.

The default backend is zstd (repetition removal plus entropy coding),
reached through the system libzstd via ctypes; lz4 (repetition removal
only) rides the system liblz4 the same way. Payloads use each library's
standard framing: zstd frames, raw LZ4 blocks with lengths carried by the
caller. Both simple APIs allocate per-call contexts, so every function here
is safe to call from multiple threads at once.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import enum
from functools import lru_cache
from typing import Callable

from .errors import BackendFailure, CorruptPayload, LengthMismatch

# liblz4 refuses inputs larger than LZ4_MAX_INPUT_SIZE
_LZ4_MAX_INPUT = 0x7E000000


class CodecId(enum.Enum):
    """Registered block codecs."""

    ZSTD = "zstd"
    LZ4 = "lz4"
    STORE = "store"


DEFAULT_LEVEL = 3


@lru_cache(maxsize=None)
def _libzstd() -> ctypes.CDLL:
    name = ctypes.util.find_library("zstd") or "libzstd.so.1"
    try:
        lib = ctypes.CDLL(name)
    except OSError as e:
        raise BackendFailure(f"libzstd is not available ({e})") from e
    lib.ZSTD_compressBound.restype = ctypes.c_size_t
    lib.ZSTD_compressBound.argtypes = [ctypes.c_size_t]
    lib.ZSTD_compress.restype = ctypes.c_size_t
    lib.ZSTD_compress.argtypes = [
        ctypes.c_char_p,
        ctypes.c_size_t,
        ctypes.c_char_p,
        ctypes.c_size_t,
        ctypes.c_int,
    ]
    lib.ZSTD_decompress.restype = ctypes.c_size_t
    lib.ZSTD_decompress.argtypes = [
        ctypes.c_char_p,
        ctypes.c_size_t,
        ctypes.c_char_p,
        ctypes.c_size_t,
    ]
    lib.ZSTD_isError.restype = ctypes.c_uint
    lib.ZSTD_isError.argtypes = [ctypes.c_size_t]
    lib.ZSTD_getErrorName.restype = ctypes.c_char_p
    lib.ZSTD_getErrorName.argtypes = [ctypes.c_size_t]
    return lib


@lru_cache(maxsize=None)
def _liblz4() -> ctypes.CDLL:
    name = ctypes.util.find_library("lz4") or "liblz4.so.1"
    try:
        lib = ctypes.CDLL(name)
    except OSError as e:
        raise BackendFailure(f"liblz4 is not available ({e})") from e
    lib.LZ4_compressBound.restype = ctypes.c_int
    lib.LZ4_compressBound.argtypes = [ctypes.c_int]
    lib.LZ4_compress_default.restype = ctypes.c_int
    lib.LZ4_compress_default.argtypes = [
        ctypes.c_char_p,
        ctypes.c_char_p,
        ctypes.c_int,
        ctypes.c_int,
    ]
    lib.LZ4_decompress_safe.restype = ctypes.c_int
    lib.LZ4_decompress_safe.argtypes = [
        ctypes.c_char_p,
        ctypes.c_char_p,
        ctypes.c_int,
        ctypes.c_int,
    ]
    return lib


def _zstd_compress(data: bytes, level: int) -> bytes:
    lib = _libzstd()
    bound = lib.ZSTD_compressBound(len(data))
    dst = ctypes.create_string_buffer(bound)
    ret = lib.ZSTD_compress(dst, bound, data, len(data), level)
    if lib.ZSTD_isError(ret):
        raise BackendFailure(
            f"zstd compression failed: {lib.ZSTD_getErrorName(ret).decode()}"
        )
    return dst.raw[:ret]


def _zstd_decompress(data: bytes, expected_len: int) -> bytes:
    lib = _libzstd()
    dst = ctypes.create_string_buffer(expected_len) if expected_len else ctypes.create_string_buffer(1)
    ret = lib.ZSTD_decompress(dst, expected_len, data, len(data))
    if lib.ZSTD_isError(ret):
        raise CorruptPayload(
            f"zstd decompression failed: {lib.ZSTD_getErrorName(ret).decode()}"
        )
    if ret != expected_len:
        raise LengthMismatch(f"zstd produced {ret} bytes, expected {expected_len}")
    return dst.raw[:ret]


def _lz4_compress(data: bytes, level: int) -> bytes:
    # The block API has no levels; the parameter is accepted for uniformity.
    if len(data) > _LZ4_MAX_INPUT:
        raise BackendFailure(f"lz4 blocks are limited to {_LZ4_MAX_INPUT} bytes")
    lib = _liblz4()
    bound = lib.LZ4_compressBound(len(data))
    dst = ctypes.create_string_buffer(bound)
    ret = lib.LZ4_compress_default(data, dst, len(data), bound)
    if ret <= 0:
        raise BackendFailure("lz4 compression failed")
    return dst.raw[:ret]


def _lz4_decompress(data: bytes, expected_len: int) -> bytes:
    lib = _liblz4()
    dst = ctypes.create_string_buffer(expected_len) if expected_len else ctypes.create_string_buffer(1)
    ret = lib.LZ4_decompress_safe(data, dst, len(data), expected_len)
    if ret < 0:
        raise CorruptPayload("lz4 block failed to decode")
    if ret != expected_len:
        raise LengthMismatch(f"lz4 produced {ret} bytes, expected {expected_len}")
    return dst.raw[:ret]


def _store_compress(data: bytes, level: int) -> bytes:
    return bytes(data)


def _store_decompress(data: bytes, expected_len: int) -> bytes:
    if len(data) != expected_len:
        raise LengthMismatch(
            f"stored block holds {len(data)} bytes, expected {expected_len}"
        )
    return bytes(data)


_REGISTRY: dict[CodecId, tuple[Callable[[bytes, int], bytes], Callable[[bytes, int], bytes]]] = {
    CodecId.ZSTD: (_zstd_compress, _zstd_decompress),
    CodecId.LZ4: (_lz4_compress, _lz4_decompress),
    CodecId.STORE: (_store_compress, _store_decompress),
}


def register_codec(codec: CodecId, compress_fn, decompress_fn) -> None:
    """Swap in a replacement compress/decompress pair for a codec id."""
    _REGISTRY[codec] = (compress_fn, decompress_fn)


def compress_block(data: bytes, codec: CodecId, level: int = DEFAULT_LEVEL) -> bytes:
    """Compress one block. Empty input always yields an empty payload."""
    if codec not in _REGISTRY:
        raise BackendFailure(f"no backend registered for {codec}")
    if len(data) == 0:
        return b""
    return _REGISTRY[codec][0](bytes(data), level)


def decompress_block(data: bytes, codec: CodecId, expected_len: int) -> bytes:
    """Invert :func:`compress_block`; output length must equal expected_len."""
    if codec not in _REGISTRY:
        raise BackendFailure(f"no backend registered for {codec}")
    if expected_len == 0:
        if len(data) != 0:
            raise LengthMismatch(f"expected an empty block, got {len(data)} bytes")
        return b""
    if len(data) == 0:
        raise CorruptPayload(f"empty payload cannot expand to {expected_len} bytes")
    return _REGISTRY[codec][1](bytes(data), expected_len)
