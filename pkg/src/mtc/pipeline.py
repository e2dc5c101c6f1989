"""Composition of transforms and codec into per-layer compression.

The transform order is fixed: lossy cast (optional) -> sign split
(optional) -> byte group (optional) -> codec. Each applied step is recorded
on the compressed layer so the chain doubles as the inversion recipe; each
byte group is compressed as its own block, which keeps per-group ratios
exact and lets groups decompress independently.
"""

from __future__ import annotations

import enum
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import transforms
from .backends import DEFAULT_LEVEL, CodecId, compress_block, decompress_block
from .errors import (
    ChecksumMismatch,
    CorruptPayload,
    MixedDtypeWholeModel,
    ValidationFailed,
)
from .model import (
    DType,
    LayerRecord,
    ModelManifest,
    describe_dtype,
    validate_manifest,
)
from .transforms import LossyParams, QuantizedLayer, SignSplit

WHOLE_MODEL_NAME = "__whole__"
MANIFEST_NAME = "__manifest__"
RESERVED_NAMES = frozenset({WHOLE_MODEL_NAME, MANIFEST_NAME})


class Mode(enum.Enum):
    LOSSLESS = "lossless"
    LOSSY = "lossy"


class Granularity(enum.Enum):
    PER_LAYER = "layer"
    WHOLE_MODEL = "model"


class TransformKind(enum.Enum):
    BYTE_GROUP = "byte_group"
    SIGN_SPLIT = "sign_split"
    LOSSY_CAST = "lossy_cast"


@dataclass(frozen=True)
class TransformStep:
    kind: TransformKind
    param: int = 0  # group width, or precision bits


@dataclass(frozen=True)
class BlockPayload:
    uncompressed_len: int
    data: bytes

    @property
    def compressed_len(self) -> int:
        return len(self.data)


@dataclass
class PipelineConfig:
    """Knobs of the compression pipeline.

    ``sign_split=None`` resolves by mode: off for lossless (its benefit is
    marginal there), on for lossy (where it pays). Lossy mode quantizes FP32
    layers only; any other dtype in the model is stored losslessly.
    """

    mode: Mode = Mode.LOSSLESS
    byte_group: bool = True
    sign_split: Optional[bool] = None
    precision_bits: Optional[int] = None
    codec: CodecId = CodecId.ZSTD
    level: int = DEFAULT_LEVEL
    granularity: Granularity = Granularity.PER_LAYER

    def __post_init__(self):
        if self.mode is Mode.LOSSY:
            if self.precision_bits is None:
                raise ValueError("lossy mode requires precision_bits")
            LossyParams(self.precision_bits)  # range check
        elif self.precision_bits is not None:
            raise ValueError("precision_bits only applies to lossy mode")
        if not 0 <= self.level <= 255:
            raise ValueError(f"codec level {self.level} out of range [0, 255]")

    @property
    def effective_sign_split(self) -> bool:
        if self.sign_split is not None:
            return self.sign_split
        return self.mode is Mode.LOSSY


@dataclass
class CompressedLayer:
    """One compressed layer plus everything needed to invert it exactly."""

    name: str
    dtype: DType
    shape: tuple[int, ...]
    transform_chain: tuple[TransformStep, ...]
    payloads: tuple[BlockPayload, ...]
    sign_payload: Optional[BlockPayload]
    crc32: int
    fallback_raw: bool = False

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def original_nbytes(self) -> int:
        return self.element_count * describe_dtype(self.dtype).element_width

    @property
    def stored_payload_bytes(self) -> int:
        total = sum(p.compressed_len for p in self.payloads)
        if self.sign_payload is not None:
            total += self.sign_payload.compressed_len
        return total

    def has(self, kind: TransformKind) -> bool:
        return any(step.kind is kind for step in self.transform_chain)

    def step_param(self, kind: TransformKind) -> int:
        for step in self.transform_chain:
            if step.kind is kind:
                return step.param
        raise KeyError(kind)


def _pack_quantized(ql: QuantizedLayer, sign_split: bool) -> tuple[bytes, Optional[bytes]]:
    """Word stream + optional sign bitstream for a quantized layer."""
    if sign_split:
        return ql.magnitudes, ql.signs
    return transforms.quantized_to_int32(ql).tobytes(), None


def _unpack_quantized(
    stream: bytes, signs: Optional[bytes], precision_bits: int, count: int
) -> QuantizedLayer:
    if signs is not None:
        return QuantizedLayer(stream, signs, precision_bits, count)
    q = np.frombuffer(stream, dtype="<i4")
    try:
        return transforms.int32_to_quantized(q, precision_bits)
    except OverflowError as e:
        raise CorruptPayload(f"quantized stream out of range: {e}") from e


def _compress_stream(
    stream: bytes,
    width: int,
    byte_group: bool,
    codec: CodecId,
    level: int,
) -> tuple[tuple[BlockPayload, ...], bool]:
    """Compress a word stream, optionally byte-grouped. Returns (payloads, grouped)."""
    if byte_group and width >= 2:
        grouped = transforms.group_bytes(stream, width)
        payloads = tuple(
            BlockPayload(len(g), compress_block(g, codec, level))
            for g in grouped.groups
        )
        return payloads, True
    return (BlockPayload(len(stream), compress_block(stream, codec, level)),), False


def compress_layer(layer: LayerRecord, config: PipelineConfig) -> CompressedLayer:
    """Run one layer through the configured transform + codec pipeline."""
    layout = layer.layout
    chain: list[TransformStep] = []
    signs: Optional[bytes] = None
    fallback = False
    crc = zlib.crc32(layer.data)
    stream = layer.data

    if config.mode is Mode.LOSSY and layer.dtype is DType.FP32:
        ql = transforms.lossy_encode(layer.data, LossyParams(config.precision_bits))
        if ql.fallback:
            fallback = True
        else:
            chain.append(
                TransformStep(TransformKind.LOSSY_CAST, config.precision_bits)
            )
            stream, signs = _pack_quantized(ql, config.effective_sign_split)
            if signs is not None:
                chain.append(TransformStep(TransformKind.SIGN_SPLIT))
            # CRC covers the reconstruction this entry decodes to; stored
            # without the sign stream, quantized zeros lose a negative sign.
            crc = zlib.crc32(
                transforms.lossy_decode(
                    _unpack_quantized(stream, signs, config.precision_bits, ql.count)
                )
            )

    if not chain and config.effective_sign_split and layout.is_float:
        split = transforms.split_sign(stream, layout)
        stream, signs = split.magnitudes, split.signs
        chain.append(TransformStep(TransformKind.SIGN_SPLIT))

    width = layout.element_width
    payloads, grouped = _compress_stream(
        stream, width, config.byte_group, config.codec, config.level
    )
    if grouped:
        chain.append(TransformStep(TransformKind.BYTE_GROUP, width))

    sign_payload = None
    if signs is not None:
        sign_payload = BlockPayload(
            len(signs), compress_block(signs, config.codec, config.level)
        )

    return CompressedLayer(
        name=layer.name,
        dtype=layer.dtype,
        shape=layer.shape,
        transform_chain=tuple(chain),
        payloads=payloads,
        sign_payload=sign_payload,
        crc32=crc,
        fallback_raw=fallback,
    )


def decode_layer_stream(cl: CompressedLayer, codec: CodecId) -> tuple[bytes, Optional[bytes]]:
    """Decompress payloads and undo byte grouping; signs stay separate."""
    try:
        blocks = [
            decompress_block(p.data, codec, p.uncompressed_len) for p in cl.payloads
        ]
    except CorruptPayload as e:
        raise type(e)(f"layer {cl.name!r}: {e}") from e
    if cl.has(TransformKind.BYTE_GROUP):
        width = cl.step_param(TransformKind.BYTE_GROUP)
        stream = transforms.ungroup_bytes(
            transforms.ByteGroups(width, tuple(blocks))
        )
    else:
        if len(blocks) != 1:
            raise CorruptPayload(
                f"layer {cl.name!r}: {len(blocks)} payload blocks without grouping"
            )
        stream = blocks[0]
    signs = None
    if cl.sign_payload is not None:
        signs = decompress_block(
            cl.sign_payload.data, codec, cl.sign_payload.uncompressed_len
        )
    return stream, signs


def decompress_layer(cl: CompressedLayer, codec: CodecId = CodecId.ZSTD) -> LayerRecord:
    """Invert :func:`compress_layer`, verifying the layer checksum."""
    stream, signs = decode_layer_stream(cl, codec)

    if cl.has(TransformKind.SIGN_SPLIT) and signs is None:
        raise CorruptPayload(f"layer {cl.name!r} is missing its sign payload")

    if cl.has(TransformKind.LOSSY_CAST):
        bits = cl.step_param(TransformKind.LOSSY_CAST)
        ql = _unpack_quantized(stream, signs, bits, cl.element_count)
        data = transforms.lossy_decode(ql)
    elif cl.has(TransformKind.SIGN_SPLIT):
        data = transforms.merge_sign(SignSplit(signs, stream), cl.dtype)
    else:
        data = stream

    if len(data) != cl.original_nbytes:
        raise CorruptPayload(
            f"layer {cl.name!r} decoded to {len(data)} bytes, "
            f"expected {cl.original_nbytes}"
        )
    if zlib.crc32(data) != cl.crc32:
        raise ChecksumMismatch(f"layer {cl.name!r} failed its CRC check")
    return LayerRecord(cl.name, cl.dtype, cl.shape, data)


def compress_model(
    layers: Sequence[LayerRecord],
    config: PipelineConfig,
    threads: int = 1,
) -> list[CompressedLayer]:
    """Compress a whole model, per layer or as one concatenated stream."""
    manifest = ModelManifest.from_layers(layers)
    report = validate_manifest(manifest, layers)
    report += [
        f"layer name {l.name!r} is reserved" for l in layers if l.name in RESERVED_NAMES
    ]
    if report:
        raise ValidationFailed(report)

    if config.granularity is Granularity.WHOLE_MODEL:
        dtypes = {l.dtype for l in layers}
        if len(dtypes) > 1:
            raise MixedDtypeWholeModel(
                f"whole-model compression over mixed dtypes "
                f"{sorted(d.name for d in dtypes)}"
            )
        dtype = dtypes.pop() if dtypes else DType.RAW8
        blob = b"".join(l.data for l in layers)
        count = len(blob) // describe_dtype(dtype).element_width
        whole = LayerRecord(WHOLE_MODEL_NAME, dtype, (count,), blob)
        return [compress_layer(whole, config)]

    if threads > 1 and len(layers) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda l: compress_layer(l, config), layers))
    return [compress_layer(l, config) for l in layers]


def decompress_model(
    compressed: Sequence[CompressedLayer],
    codec: CodecId = CodecId.ZSTD,
    manifest: Optional[ModelManifest] = None,
    threads: int = 1,
) -> list[LayerRecord]:
    """Invert :func:`compress_model`.

    Whole-model archives need the original manifest to slice the stream
    back into named layers.
    """
    if len(compressed) == 1 and compressed[0].name == WHOLE_MODEL_NAME:
        if manifest is None:
            raise CorruptPayload(
                "whole-model stream cannot be split without its manifest"
            )
        whole = decompress_layer(compressed[0], codec)
        layers = []
        offset = 0
        for entry in manifest.layers:
            width = describe_dtype(entry.dtype).element_width
            n = 1
            for d in entry.shape:
                n *= d
            end = offset + n * width
            if end > len(whole.data):
                raise CorruptPayload(
                    f"manifest needs {end} bytes, stream has {len(whole.data)}"
                )
            layers.append(
                LayerRecord(entry.name, entry.dtype, entry.shape, whole.data[offset:end])
            )
            offset = end
        if offset != len(whole.data):
            raise CorruptPayload(
                f"{len(whole.data) - offset} trailing bytes after slicing "
                "the whole-model stream"
            )
        return layers

    if threads > 1 and len(compressed) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: decompress_layer(c, codec), compressed))
    return [decompress_layer(c, codec) for c in compressed]
