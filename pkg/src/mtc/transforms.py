"""Reversible byte/bit transforms applied before entropy coding.

Three transforms live here:

* byte grouping: permute a stream of k-byte little-endian words into k
  streams, one per byte position (most-significant byte first), so bytes
  with similar statistics are compressed together;
* sign separation: clear each float word's sign bit into a packed
  bitstream and keep the magnitudes as an unsigned word stream;
* a tunable lossy cast: scale each FP32 value by 2**bits and truncate the
  magnitude to an integer, discarding everything below 2**-bits.

All transforms operate on raw bits; NaN payloads, infinities and negative
zeros survive the lossless pair unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import CountMismatch, FallbackLayer, MisalignedLength, RaggedGroups, UnsupportedDtype
from .model import DType, DTypeLayout, describe_dtype

_WORD_DTYPES = {2: np.dtype("<u2"), 4: np.dtype("<u4")}

_INT32_MAG_LIMIT = 1 << 31  # quantized magnitudes must fit a signed 32-bit word


@dataclass(frozen=True)
class ByteGroups:
    """Byte streams of one word stream, most-significant byte first."""

    width: int
    groups: tuple[bytes, ...]

    def __post_init__(self):
        if self.width not in _WORD_DTYPES:
            raise UnsupportedDtype(f"byte grouping needs width 2 or 4, got {self.width}")
        if len(self.groups) != self.width:
            raise RaggedGroups(
                f"expected {self.width} groups, got {len(self.groups)}"
            )
        lengths = {len(g) for g in self.groups}
        if len(lengths) > 1:
            raise RaggedGroups(f"groups have unequal lengths {sorted(lengths)}")


@dataclass(frozen=True)
class SignSplit:
    """Packed sign bits plus the sign-cleared magnitude word stream.

    Signs are packed eight per byte in element order, first element in the
    most significant bit; the final byte is zero-padded.
    """

    signs: bytes
    magnitudes: bytes


@dataclass(frozen=True)
class LossyParams:
    """Precision of the lossy cast: quantities below 2**-precision_bits drop."""

    precision_bits: int

    def __post_init__(self):
        if not 1 <= self.precision_bits <= 30:
            raise ValueError(
                f"precision_bits must be in [1, 30], got {self.precision_bits}"
            )

    @property
    def factor(self) -> int:
        return 1 << self.precision_bits


@dataclass(frozen=True)
class QuantizedLayer:
    """Sign-split quantized integers, or a fallback marker.

    ``magnitudes`` is a little-endian uint32 stream of truncated
    ``|value| * 2**precision_bits``; ``signs`` is the packed sign bitstream
    of the original values. When ``fallback`` is set the layer could not be
    quantized (NaN/Inf present, or a magnitude would overflow 31 bits) and
    must be stored through the lossless path instead.
    """

    magnitudes: bytes
    signs: bytes
    precision_bits: int
    count: int
    fallback: bool = False


def group_bytes(data: bytes, width: int) -> ByteGroups:
    """Split a word stream into per-byte-position streams (MSB first)."""
    if width not in _WORD_DTYPES:
        raise UnsupportedDtype(f"byte grouping needs width 2 or 4, got {width}")
    if len(data) % width != 0:
        raise MisalignedLength(
            f"{len(data)} bytes is not a multiple of width {width}"
        )
    arr = np.frombuffer(data, dtype=np.uint8).reshape(-1, width)
    groups = tuple(arr[:, width - 1 - g].tobytes() for g in range(width))
    return ByteGroups(width, groups)


def ungroup_bytes(groups: Union[ByteGroups, Sequence[bytes]]) -> bytes:
    """Interleave byte groups back into the original word stream."""
    if not isinstance(groups, ByteGroups):
        groups = ByteGroups(len(groups), tuple(groups))
    width = groups.width
    n = len(groups.groups[0])
    out = np.empty((n, width), dtype=np.uint8)
    for g, stream in enumerate(groups.groups):
        out[:, width - 1 - g] = np.frombuffer(stream, dtype=np.uint8)
    return out.tobytes()


def _word_view(data: bytes, layout: DTypeLayout) -> np.ndarray:
    if len(data) % layout.element_width != 0:
        raise MisalignedLength(
            f"{len(data)} bytes is not a multiple of element width "
            f"{layout.element_width}"
        )
    return np.frombuffer(data, dtype=_WORD_DTYPES[layout.element_width])


def pack_sign_bits(signs: np.ndarray) -> bytes:
    """Pack a boolean sign array, eight per byte, MSB first, zero padded."""
    return np.packbits(signs.astype(np.uint8)).tobytes()


def unpack_sign_bits(packed: bytes, count: int) -> np.ndarray:
    if len(packed) != (count + 7) // 8:
        raise CountMismatch(
            f"sign stream holds {len(packed)} bytes, need "
            f"{(count + 7) // 8} for {count} elements"
        )
    if count == 0:
        return np.zeros(0, dtype=bool)
    return np.unpackbits(np.frombuffer(packed, dtype=np.uint8), count=count).astype(bool)


def split_sign(data: bytes, dtype: DType | DTypeLayout) -> SignSplit:
    """Extract and clear the sign bit of every float word."""
    layout = dtype if isinstance(dtype, DTypeLayout) else describe_dtype(dtype)
    if not layout.is_float:
        raise UnsupportedDtype(f"{layout.code.name} has no sign bit to split")
    words = _word_view(data, layout)
    top = layout.element_width * 8 - 1
    signs = (words >> top).astype(bool)
    magnitudes = words & ((1 << top) - 1)
    return SignSplit(pack_sign_bits(signs), magnitudes.astype(words.dtype).tobytes())


def merge_sign(split: SignSplit, dtype: DType | DTypeLayout) -> bytes:
    """Re-attach split-off sign bits; exact inverse of :func:`split_sign`."""
    layout = dtype if isinstance(dtype, DTypeLayout) else describe_dtype(dtype)
    if not layout.is_float:
        raise UnsupportedDtype(f"{layout.code.name} has no sign bit to merge")
    magnitudes = _word_view(split.magnitudes, layout)
    signs = unpack_sign_bits(split.signs, len(magnitudes))
    top = layout.element_width * 8 - 1
    words = magnitudes | (signs.astype(magnitudes.dtype) << top)
    return words.astype(magnitudes.dtype).tobytes()


def lossy_encode(
    data: Union[bytes, np.ndarray], params: LossyParams
) -> QuantizedLayer:
    """Cast FP32 values to truncated fixed-point integers.

    Each value becomes ``floor(|value| * 2**precision_bits)`` with its sign
    kept in a separate bitstream, so reconstruction never overshoots and the
    error stays below ``2**-precision_bits`` in magnitude. If any value is
    non-finite, or any magnitude would overflow a signed 32-bit integer, no
    element is touched: the layer is flagged ``fallback`` and should be
    stored losslessly.
    """
    if isinstance(data, np.ndarray):
        if data.dtype != np.float32:
            raise UnsupportedDtype("lossy cast applies to FP32 streams only")
        values = np.ascontiguousarray(data).reshape(-1)
    else:
        if len(data) % 4 != 0:
            raise MisalignedLength(f"{len(data)} bytes is not a whole FP32 stream")
        values = np.frombuffer(data, dtype="<f4")

    count = len(values)
    scaled = np.abs(values.astype(np.float64)) * float(params.factor)
    magnitudes = np.floor(scaled)
    if not bool(np.isfinite(values).all()) or bool(
        (magnitudes >= _INT32_MAG_LIMIT).any()
    ):
        return QuantizedLayer(b"", b"", params.precision_bits, count, fallback=True)

    signs = np.signbit(values)
    return QuantizedLayer(
        magnitudes.astype("<u4").tobytes(),
        pack_sign_bits(signs),
        params.precision_bits,
        count,
    )


def lossy_decode(layer: QuantizedLayer) -> bytes:
    """Render quantized integers back to an FP32 stream.

    Each output is the nearest float32 to ``magnitude / 2**precision_bits``
    with the stored sign applied; a zero magnitude with a set sign bit comes
    back as -0.0.
    """
    if layer.fallback:
        raise FallbackLayer("layer was stored raw; there is nothing to decode")
    magnitudes = np.frombuffer(layer.magnitudes, dtype="<u4")
    if len(magnitudes) != layer.count:
        raise CountMismatch(
            f"magnitude stream holds {len(magnitudes)} words, expected {layer.count}"
        )
    signs = unpack_sign_bits(layer.signs, layer.count)
    values = (
        magnitudes.astype(np.float64) / float(1 << layer.precision_bits)
    ).astype("<f4")
    values = np.where(signs, -values, values)
    return values.astype("<f4").tobytes()


def quantized_to_int32(layer: QuantizedLayer) -> np.ndarray:
    """Signed two's-complement view of a quantized layer (sign folded in)."""
    if layer.fallback:
        raise FallbackLayer("fallback layer has no integer stream")
    magnitudes = np.frombuffer(layer.magnitudes, dtype="<u4").astype(np.int64)
    signs = unpack_sign_bits(layer.signs, layer.count)
    return np.where(signs, -magnitudes, magnitudes).astype("<i4")


def int32_to_quantized(
    q: np.ndarray, precision_bits: int, signs: Optional[np.ndarray] = None
) -> QuantizedLayer:
    """Rebuild the sign-split form from signed integers.

    ``signs`` overrides the sign bits (two's complement cannot express the
    sign of a zero); by default negative integers set the bit.
    """
    q64 = q.astype(np.int64)
    if signs is None:
        signs = q64 < 0
    magnitudes = np.abs(q64)
    if bool((magnitudes >= _INT32_MAG_LIMIT).any()):
        raise OverflowError("quantized magnitude exceeds 31 bits")
    return QuantizedLayer(
        magnitudes.astype("<u4").tobytes(),
        pack_sign_bits(signs),
        precision_bits,
        len(q64),
    )
