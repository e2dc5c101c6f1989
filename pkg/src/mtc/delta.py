"""Delta compression between two structurally identical model versions.

Two modes. XOR stores the bytewise difference of the raw streams and is
exactly invertible for any content. The lossy-residual mode quantizes both
versions with the tunable fixed-point cast and stores the integer
difference of the quantized values; reconstruction happens entirely in the
integer domain, so the only error against the true target is the usual
quantization bound. Float subtraction is never used: it does not invert
exactly under rounding.

A delta records the SHA-256 of the base model's layer data, and application
refuses a base whose hash differs. Layers that cannot be expressed as
residuals (non-FP32 dtype, non-finite values, integer overflow) fall back
to XOR individually.
"""

from __future__ import annotations

import enum
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from . import transforms
from .backends import DEFAULT_LEVEL, CodecId, compress_block
from .container import (
    KIND_DELTA,
    MANIFEST_NAME,
    ArchiveHeader,
    _manifest_from_json,
    _sidecar_entry,
    read_archive,
    write_archive,
)
from .errors import (
    BaseHashMismatch,
    ChecksumMismatch,
    CorruptPayload,
    FallbackRequired,
    LengthMismatch,
    ManifestMismatch,
    UnsupportedDtype,
)
from .model import DType, LayerRecord, ModelManifest, hash_layer_data
from .pipeline import (
    BlockPayload,
    CompressedLayer,
    Granularity,
    Mode,
    PipelineConfig,
    TransformKind,
    TransformStep,
    _compress_stream,
    compress_layer,
    decode_layer_stream,
    decompress_layer,
)
from .transforms import LossyParams

_INT32_LIMIT = 1 << 31


class DeltaMode(enum.Enum):
    XOR = "xor"
    LOSSY_RESIDUAL = "lossy"


@dataclass
class DeltaDescriptor:
    """A compressed model expressed as differences from a base model."""

    base_hash: bytes
    target_name: str
    mode: DeltaMode
    precision_bits: Optional[int]
    manifest: ModelManifest
    entries: list[CompressedLayer]
    codec: CodecId = CodecId.ZSTD
    level: int = DEFAULT_LEVEL


def _require_same_structure(base: LayerRecord, target: LayerRecord) -> None:
    if (
        base.name != target.name
        or base.dtype != target.dtype
        or base.shape != target.shape
    ):
        raise ManifestMismatch(
            f"layers differ structurally: {base.name!r} {base.dtype.name} "
            f"{base.shape} vs {target.name!r} {target.dtype.name} {target.shape}"
        )


def diff_xor(base: LayerRecord, target: LayerRecord) -> bytes:
    """Bytewise XOR of two matching layers."""
    _require_same_structure(base, target)
    a = np.frombuffer(base.data, dtype=np.uint8)
    b = np.frombuffer(target.data, dtype=np.uint8)
    return (a ^ b).tobytes()


def apply_xor(base: LayerRecord, delta: bytes) -> LayerRecord:
    """Inverse of :func:`diff_xor`."""
    if len(delta) != base.nbytes:
        raise LengthMismatch(
            f"delta holds {len(delta)} bytes, base layer {base.name!r} "
            f"has {base.nbytes}"
        )
    a = np.frombuffer(base.data, dtype=np.uint8)
    d = np.frombuffer(delta, dtype=np.uint8)
    return LayerRecord(base.name, base.dtype, base.shape, (a ^ d).tobytes())


def diff_lossy(
    base: LayerRecord, target: LayerRecord, precision_bits: int
) -> Optional[np.ndarray]:
    """Quantized-integer residuals target-minus-base, or None.

    None means the layer cannot ride the residual path (quantization
    fallback on either side, or residual overflow) and should be stored as
    XOR instead.
    """
    _require_same_structure(base, target)
    if base.dtype is not DType.FP32:
        raise UnsupportedDtype("residual deltas apply to FP32 layers only")
    params = LossyParams(precision_bits)
    qb = transforms.lossy_encode(base.data, params)
    qt = transforms.lossy_encode(target.data, params)
    if qb.fallback or qt.fallback:
        return None
    r = transforms.quantized_to_int32(qt).astype(np.int64) - transforms.quantized_to_int32(
        qb
    ).astype(np.int64)
    if bool((np.abs(r) >= _INT32_LIMIT).any()):
        return None
    return r.astype("<i4")


def apply_lossy(
    base: LayerRecord, residual: Union[np.ndarray, bytes], precision_bits: int
) -> LayerRecord:
    """Rebuild the target's quantized form from base + residuals."""
    if base.dtype is not DType.FP32:
        raise UnsupportedDtype("residual deltas apply to FP32 layers only")
    if isinstance(residual, bytes):
        residual = np.frombuffer(residual, dtype="<i4")
    if len(residual) != base.element_count:
        raise ManifestMismatch(
            f"residual stream holds {len(residual)} values, layer "
            f"{base.name!r} has {base.element_count}"
        )
    params = LossyParams(precision_bits)
    qb = transforms.lossy_encode(base.data, params)
    if qb.fallback:
        raise FallbackRequired(
            f"layer {base.name!r} cannot be quantized; it was stored as XOR"
        )
    q = transforms.quantized_to_int32(qb).astype(np.int64) + residual.astype(np.int64)
    if bool((np.abs(q) >= _INT32_LIMIT).any()):
        raise CorruptPayload(
            f"layer {base.name!r}: residual application overflows 31 bits"
        )
    ql = transforms.int32_to_quantized(q.astype("<i4"), precision_bits)
    data = transforms.lossy_decode(ql)
    return LayerRecord(base.name, base.dtype, base.shape, data)


def _residual_entry(
    layer_name: str,
    dtype: DType,
    shape: tuple[int, ...],
    residual: np.ndarray,
    precision_bits: int,
    sign_split: bool,
    byte_group: bool,
    codec: CodecId,
    level: int,
) -> CompressedLayer:
    canonical = residual.astype("<i4").tobytes()
    chain = [TransformStep(TransformKind.LOSSY_CAST, precision_bits)]
    signs = None
    if sign_split:
        ql = transforms.int32_to_quantized(residual, precision_bits)
        stream, signs = ql.magnitudes, ql.signs
        chain.append(TransformStep(TransformKind.SIGN_SPLIT))
    else:
        stream = canonical
    payloads, grouped = _compress_stream(stream, 4, byte_group, codec, level)
    if grouped:
        chain.append(TransformStep(TransformKind.BYTE_GROUP, 4))
    sign_payload = None
    if signs is not None:
        sign_payload = BlockPayload(len(signs), compress_block(signs, codec, level))
    return CompressedLayer(
        name=layer_name,
        dtype=dtype,
        shape=shape,
        transform_chain=tuple(chain),
        payloads=payloads,
        sign_payload=sign_payload,
        crc32=zlib.crc32(canonical),
        fallback_raw=False,
    )


def _decode_residual(cl: CompressedLayer, codec: CodecId) -> np.ndarray:
    stream, signs = decode_layer_stream(cl, codec)
    if signs is not None:
        ql = transforms.QuantizedLayer(
            stream, signs, cl.step_param(TransformKind.LOSSY_CAST), cl.element_count
        )
        r = transforms.quantized_to_int32(ql)
    else:
        r = np.frombuffer(stream, dtype="<i4")
    if len(r) != cl.element_count:
        raise CorruptPayload(
            f"layer {cl.name!r}: residual stream holds {len(r)} values, "
            f"expected {cl.element_count}"
        )
    if zlib.crc32(r.astype('<i4').tobytes()) != cl.crc32:
        raise ChecksumMismatch(f"layer {cl.name!r} failed its CRC check")
    return r


def _check_structure(base: Sequence[LayerRecord], target: Sequence[LayerRecord]):
    if len(base) != len(target):
        raise ManifestMismatch(
            f"models have {len(base)} vs {len(target)} layers"
        )
    for b, t in zip(base, target):
        _require_same_structure(b, t)


def build_delta(
    base: Sequence[LayerRecord],
    target: Sequence[LayerRecord],
    *,
    mode: DeltaMode = DeltaMode.XOR,
    precision_bits: Optional[int] = None,
    byte_group: bool = True,
    sign_split: Optional[bool] = None,
    codec: CodecId = CodecId.ZSTD,
    level: int = DEFAULT_LEVEL,
    target_name: str = "",
    manifest: Optional[ModelManifest] = None,
    threads: int = 1,
) -> DeltaDescriptor:
    """Diff two models layer by layer and compress the differences."""
    _check_structure(base, target)
    if mode is DeltaMode.LOSSY_RESIDUAL:
        if precision_bits is None:
            raise ValueError("lossy residual deltas require precision_bits")
        LossyParams(precision_bits)
    if sign_split is None:
        sign_split = mode is DeltaMode.LOSSY_RESIDUAL
    if manifest is None:
        manifest = ModelManifest.from_layers(target)

    xor_config = PipelineConfig(
        mode=Mode.LOSSLESS,
        byte_group=byte_group,
        sign_split=False,
        codec=codec,
        level=level,
    )

    def one(pair: tuple[LayerRecord, LayerRecord]) -> CompressedLayer:
        b, t = pair
        if mode is DeltaMode.LOSSY_RESIDUAL and b.dtype is DType.FP32:
            r = diff_lossy(b, t, precision_bits)
            if r is not None:
                return _residual_entry(
                    t.name, t.dtype, t.shape, r, precision_bits,
                    sign_split, byte_group, codec, level,
                )
        entry = compress_layer(LayerRecord(t.name, t.dtype, t.shape, diff_xor(b, t)), xor_config)
        if mode is DeltaMode.LOSSY_RESIDUAL:
            entry.fallback_raw = True
        return entry

    pairs = list(zip(base, target))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(one, pairs))
    else:
        entries = [one(p) for p in pairs]

    return DeltaDescriptor(
        base_hash=hash_layer_data(base),
        target_name=target_name,
        mode=mode,
        precision_bits=precision_bits,
        manifest=manifest,
        entries=entries,
        codec=codec,
        level=level,
    )


def apply_delta(
    base: Sequence[LayerRecord],
    desc: DeltaDescriptor,
    threads: int = 1,
) -> list[LayerRecord]:
    """Reconstruct the target model from its base plus a delta."""
    if hash_layer_data(base) != desc.base_hash:
        raise BaseHashMismatch(
            "base model content hash does not match the delta's base"
        )
    if len(base) != len(desc.entries):
        raise ManifestMismatch(
            f"delta has {len(desc.entries)} layers, base has {len(base)}"
        )
    for b, e in zip(base, desc.entries):
        if b.name != e.name or b.dtype != e.dtype or tuple(b.shape) != tuple(e.shape):
            raise ManifestMismatch(
                f"delta entry {e.name!r} does not match base layer {b.name!r}"
            )

    def one(pair: tuple[LayerRecord, CompressedLayer]) -> LayerRecord:
        b, entry = pair
        if entry.has(TransformKind.LOSSY_CAST):
            r = _decode_residual(entry, desc.codec)
            return apply_lossy(b, r, entry.step_param(TransformKind.LOSSY_CAST))
        xor_layer = decompress_layer(entry, desc.codec)
        return apply_xor(b, xor_layer.data)

    pairs = list(zip(base, desc.entries))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def write_delta_archive(
    sink: Union[str, Path, BinaryIO], desc: DeltaDescriptor
) -> None:
    """Serialize a delta as an archive of kind DELTA."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_delta_archive(f, desc)
        return
    config = PipelineConfig(codec=desc.codec, level=desc.level)
    sidecar = _sidecar_entry(
        desc.manifest,
        config,
        extra={
            "target_name": desc.target_name,
            "delta_mode": desc.mode.value,
            "precision_bits": desc.precision_bits,
        },
    )
    header = ArchiveHeader(
        KIND_DELTA,
        desc.codec,
        desc.level,
        Granularity.PER_LAYER,
        base_hash=desc.base_hash,
    )
    write_archive(header, [sidecar] + desc.entries, sink)


def read_delta_archive(source: Union[str, Path, BinaryIO]) -> DeltaDescriptor:
    """Parse an archive of kind DELTA back into a descriptor."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_delta_archive(f)
    header, it = read_archive(source)
    if header.kind != KIND_DELTA:
        raise CorruptPayload("not a delta archive")
    entries = list(it)
    if not entries or entries[0].name != MANIFEST_NAME:
        raise CorruptPayload("delta archive is missing its manifest sidecar")
    sidecar = decompress_layer(entries[0], header.codec)
    manifest, doc = _manifest_from_json(sidecar.data)
    try:
        mode = DeltaMode(doc["delta_mode"])
    except (KeyError, ValueError) as e:
        raise CorruptPayload(f"delta archive sidecar is unreadable: {e}") from e
    return DeltaDescriptor(
        base_hash=header.base_hash,
        target_name=doc.get("target_name", ""),
        mode=mode,
        precision_bits=doc.get("precision_bits"),
        manifest=manifest,
        entries=entries[1:],
        codec=header.codec,
        level=header.level,
    )
