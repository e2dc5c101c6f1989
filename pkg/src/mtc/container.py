"""The on-disk archive format (`.mtc`).

Byte-exact layout, all integers little-endian. File header, 51 bytes:

    magic "MTC1" | version u8 | kind u8 (0 model, 1 delta) | codec u8 |
    level u8 | granularity u8 | reserved u16 (zero) | base_hash 32 bytes
    (zero unless delta) | layer_count u64

Then ``layer_count`` entries, back to back:

    name_len u16 | name UTF-8 | dtype u8 | transform_flags u8 | b u8 |
    ndim u8 | dims ndim*u64 | element_count u64 | crc32 u32 |
    group_count u8 | per group: uncompressed u64 + compressed u64 |
    sign uncompressed u64 + compressed u64 (0/0 when absent) |
    payload bytes group-major | sign payload

The file ends exactly at the last payload byte. Entries are read lazily so
an archive never needs to be memory-resident beyond its largest layer.

Two entry names are reserved. ``__whole__`` holds the single stream of a
whole-model archive. ``__manifest__`` holds a JSON sidecar (layer directory,
file metadata, delta parameters) and is written only when the entries alone
cannot restore the model: whole-model granularity, preserved file metadata,
passthrough dtypes, or delta archives.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional, Sequence, Union

from .backends import CodecId
from .errors import (
    BadMagic,
    CorruptPayload,
    SinkFailure,
    TruncatedEntry,
    UnsupportedVersion,
    ValidationFailed,
)
from .model import (
    DType,
    LayerRecord,
    ManifestEntry,
    ModelManifest,
    describe_dtype,
    format_percent,
    validate_manifest,
)
from .pipeline import (
    MANIFEST_NAME,
    BlockPayload,
    CompressedLayer,
    Granularity,
    Mode,
    PipelineConfig,
    TransformKind,
    TransformStep,
    compress_layer,
    compress_model,
    decompress_layer,
    decompress_model,
)

MAGIC = b"MTC1"
VERSION = 1
FILE_EXTENSION = ".mtc"

KIND_MODEL = 0
KIND_DELTA = 1

_HEADER_FMT = "<4sBBBBB2s32sQ"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)  # 51

_DTYPE_CODES = {DType.FP32: 0, DType.FP16: 1, DType.BF16: 2, DType.RAW8: 3}
_DTYPE_FROM_CODE = {v: k for k, v in _DTYPE_CODES.items()}
_CODEC_CODES = {CodecId.ZSTD: 0, CodecId.LZ4: 1, CodecId.STORE: 2}
_CODEC_FROM_CODE = {v: k for k, v in _CODEC_CODES.items()}
_GRANULARITY_CODES = {Granularity.PER_LAYER: 0, Granularity.WHOLE_MODEL: 1}
_GRANULARITY_FROM_CODE = {v: k for k, v in _GRANULARITY_CODES.items()}

_FLAG_BYTE_GROUP = 1
_FLAG_SIGN_SPLIT = 2
_FLAG_LOSSY = 4
_FLAG_FALLBACK = 8

_ZERO_HASH = bytes(32)


@dataclass(frozen=True)
class ArchiveHeader:
    kind: int
    codec: CodecId
    level: int
    granularity: Granularity
    base_hash: bytes = _ZERO_HASH
    layer_count: int = 0

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT,
            MAGIC,
            VERSION,
            self.kind,
            _CODEC_CODES[self.codec],
            self.level,
            _GRANULARITY_CODES[self.granularity],
            b"\x00\x00",
            self.base_hash,
            self.layer_count,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "ArchiveHeader":
        magic, version, kind, codec, level, gran, reserved, base_hash, count = (
            struct.unpack(_HEADER_FMT, raw)
        )
        if magic != MAGIC:
            raise BadMagic(f"not an archive (magic {magic!r})")
        if version != VERSION:
            raise UnsupportedVersion(f"archive version {version} is not supported")
        if kind not in (KIND_MODEL, KIND_DELTA):
            raise CorruptPayload(f"unknown archive kind {kind}")
        if codec not in _CODEC_FROM_CODE:
            raise CorruptPayload(f"unknown codec code {codec}")
        if gran not in _GRANULARITY_FROM_CODE:
            raise CorruptPayload(f"unknown granularity code {gran}")
        if reserved != b"\x00\x00":
            raise CorruptPayload("reserved header bytes are not zero")
        return cls(
            kind,
            _CODEC_FROM_CODE[codec],
            level,
            _GRANULARITY_FROM_CODE[gran],
            base_hash,
            count,
        )


def _flags_of(cl: CompressedLayer) -> int:
    flags = 0
    if cl.has(TransformKind.BYTE_GROUP):
        flags |= _FLAG_BYTE_GROUP
    if cl.has(TransformKind.SIGN_SPLIT):
        flags |= _FLAG_SIGN_SPLIT
    if cl.has(TransformKind.LOSSY_CAST):
        flags |= _FLAG_LOSSY
    if cl.fallback_raw:
        flags |= _FLAG_FALLBACK
    return flags


def _chain_of(flags: int, bits: int, dtype: DType) -> tuple[TransformStep, ...]:
    # Application order is fixed, so flags are enough to rebuild the chain.
    chain = []
    if flags & _FLAG_LOSSY:
        chain.append(TransformStep(TransformKind.LOSSY_CAST, bits))
    if flags & _FLAG_SIGN_SPLIT:
        chain.append(TransformStep(TransformKind.SIGN_SPLIT))
    if flags & _FLAG_BYTE_GROUP:
        chain.append(
            TransformStep(TransformKind.BYTE_GROUP, describe_dtype(dtype).element_width)
        )
    return tuple(chain)


def entry_wire_size(cl: CompressedLayer) -> int:
    """Exact byte footprint of one entry, metadata plus payloads."""
    name_len = len(cl.name.encode("utf-8"))
    fixed = 2 + name_len + 4 + 8 * len(cl.shape) + 8 + 4 + 1
    tables = 16 * len(cl.payloads) + 16
    return fixed + tables + cl.stored_payload_bytes


def _pack_entry(cl: CompressedLayer) -> bytes:
    name = cl.name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError(f"layer name too long ({len(name)} bytes)")
    if len(cl.shape) > 0xFF:
        raise ValueError(f"too many dimensions ({len(cl.shape)})")
    if len(cl.payloads) > 0xFF:
        raise ValueError(f"too many payload groups ({len(cl.payloads)})")
    bits = (
        cl.step_param(TransformKind.LOSSY_CAST)
        if cl.has(TransformKind.LOSSY_CAST)
        else 0
    )
    out = bytearray()
    out += struct.pack("<H", len(name))
    out += name
    out += struct.pack(
        "<BBBB", _DTYPE_CODES[cl.dtype], _flags_of(cl), bits, len(cl.shape)
    )
    out += struct.pack(f"<{len(cl.shape)}Q", *cl.shape)
    out += struct.pack("<QIB", cl.element_count, cl.crc32, len(cl.payloads))
    for p in cl.payloads:
        out += struct.pack("<QQ", p.uncompressed_len, p.compressed_len)
    if cl.sign_payload is not None:
        out += struct.pack(
            "<QQ", cl.sign_payload.uncompressed_len, cl.sign_payload.compressed_len
        )
    else:
        out += struct.pack("<QQ", 0, 0)
    for p in cl.payloads:
        out += p.data
    if cl.sign_payload is not None:
        out += cl.sign_payload.data
    return bytes(out)


def write_archive(
    header: ArchiveHeader,
    entries: Iterable[CompressedLayer],
    sink: BinaryIO,
) -> int:
    """Serialize an archive; deterministic for identical inputs."""
    entries = list(entries)
    header = ArchiveHeader(
        header.kind,
        header.codec,
        header.level,
        header.granularity,
        header.base_hash,
        len(entries),
    )
    try:
        written = sink.write(header.pack())
        for cl in entries:
            written += sink.write(_pack_entry(cl))
    except OSError as e:
        raise SinkFailure(f"archive write failed: {e}") from e
    return written


class _EntryReader:
    def __init__(self, source: BinaryIO):
        self._source = source

    def _read_exact(self, n: int, what: str) -> bytes:
        try:
            buf = self._source.read(n)
        except (OverflowError, MemoryError, ValueError) as e:
            # a corrupted u64 length field can exceed what read() accepts
            raise TruncatedEntry(f"archive ends inside {what} ({e})") from e
        if len(buf) != n:
            raise TruncatedEntry(f"archive ends inside {what}")
        return buf

    def read_entry(self) -> CompressedLayer:
        (name_len,) = struct.unpack("<H", self._read_exact(2, "an entry header"))
        try:
            name = self._read_exact(name_len, "an entry name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptPayload(f"entry name is not UTF-8: {e}") from e
        where = f"layer {name!r}"
        dtype_code, flags, bits, ndim = struct.unpack(
            "<BBBB", self._read_exact(4, where)
        )
        if dtype_code not in _DTYPE_FROM_CODE:
            raise CorruptPayload(f"{where}: unknown dtype code {dtype_code}")
        dtype = _DTYPE_FROM_CODE[dtype_code]
        shape = struct.unpack(f"<{ndim}Q", self._read_exact(8 * ndim, where))
        element_count, crc, group_count = struct.unpack(
            "<QIB", self._read_exact(13, where)
        )
        expected = 1
        for d in shape:
            expected *= d
        if element_count != expected:
            raise CorruptPayload(
                f"{where}: element count {element_count} does not match shape {shape}"
            )
        width = describe_dtype(dtype).element_width
        if flags & _FLAG_BYTE_GROUP:
            if width < 2:
                raise CorruptPayload(f"{where}: byte grouping on a 1-byte dtype")
            if group_count != width:
                raise CorruptPayload(
                    f"{where}: {group_count} groups for a {width}-byte dtype"
                )
        elif group_count != 1:
            raise CorruptPayload(f"{where}: ungrouped entry with {group_count} payloads")
        if flags & _FLAG_LOSSY:
            if dtype is not DType.FP32:
                raise CorruptPayload(f"{where}: lossy cast on a {dtype.name} layer")
            if not 1 <= bits <= 30:
                raise CorruptPayload(f"{where}: precision bits {bits} out of range")
        elif bits != 0:
            raise CorruptPayload(f"{where}: precision bits set without a lossy cast")
        if (
            flags & _FLAG_SIGN_SPLIT
            and not flags & _FLAG_LOSSY
            and not describe_dtype(dtype).is_float
        ):
            raise CorruptPayload(f"{where}: sign split on a {dtype.name} layer")

        lens = [
            struct.unpack("<QQ", self._read_exact(16, where))
            for _ in range(group_count)
        ]
        sign_unc, sign_comp = struct.unpack("<QQ", self._read_exact(16, where))

        # every uncompressed length is derivable from the element count, so
        # a corrupted length table can be rejected before any allocation
        per_group = (
            element_count if flags & _FLAG_BYTE_GROUP else element_count * width
        )
        for unc, _ in lens:
            if unc != per_group:
                raise CorruptPayload(
                    f"{where}: group claims {unc} uncompressed bytes, "
                    f"expected {per_group}"
                )
        if flags & _FLAG_SIGN_SPLIT and sign_unc != (element_count + 7) // 8:
            raise CorruptPayload(
                f"{where}: sign stream claims {sign_unc} bytes, expected "
                f"{(element_count + 7) // 8}"
            )

        payloads = tuple(
            BlockPayload(unc, self._read_exact(comp, f"{where} payload"))
            for unc, comp in lens
        )
        sign_payload = None
        if flags & _FLAG_SIGN_SPLIT:
            sign_payload = BlockPayload(
                sign_unc, self._read_exact(sign_comp, f"{where} sign payload")
            )
        elif sign_unc or sign_comp:
            raise CorruptPayload(f"{where}: unexpected sign payload")

        return CompressedLayer(
            name=name,
            dtype=dtype,
            shape=tuple(shape),
            transform_chain=_chain_of(flags, bits, dtype),
            payloads=payloads,
            sign_payload=sign_payload,
            crc32=crc,
            fallback_raw=bool(flags & _FLAG_FALLBACK),
        )


def read_archive(source: BinaryIO) -> tuple[ArchiveHeader, Iterator[CompressedLayer]]:
    """Validate the header and return a lazy entry iterator."""
    head = source.read(HEADER_SIZE)
    if len(head) < len(MAGIC) or head[: len(MAGIC)] != MAGIC:
        raise BadMagic("not an archive")
    if len(head) < HEADER_SIZE:
        raise TruncatedEntry("archive ends inside the file header")
    header = ArchiveHeader.unpack(head)
    reader = _EntryReader(source)

    def entries() -> Iterator[CompressedLayer]:
        for _ in range(header.layer_count):
            yield reader.read_entry()

    return header, entries()


# ---------------------------------------------------------------------------
# Model-level save/load
# ---------------------------------------------------------------------------


def _manifest_sidecar_needed(
    manifest: ModelManifest, granularity: Granularity
) -> bool:
    if granularity is Granularity.WHOLE_MODEL:
        return True
    if manifest.metadata is not None:
        return True
    return any(e.source_dtype is not None for e in manifest.layers)


def _manifest_to_json(manifest: ModelManifest, extra: Optional[dict] = None) -> bytes:
    doc = {
        "layers": [
            {
                "name": e.name,
                "dtype": e.dtype.value,
                "shape": list(e.shape),
                **(
                    {"source_dtype": e.source_dtype, "source_shape": list(e.source_shape)}
                    if e.source_dtype is not None
                    else {}
                ),
            }
            for e in manifest.layers
        ],
    }
    if manifest.metadata is not None:
        doc["metadata"] = manifest.metadata
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")


def _manifest_from_json(raw: bytes) -> tuple[ModelManifest, dict]:
    try:
        doc = json.loads(raw.decode("utf-8"))
        entries = tuple(
            ManifestEntry(
                e["name"],
                DType(e["dtype"]),
                tuple(e["shape"]),
                e.get("source_dtype"),
                tuple(e["source_shape"]) if e.get("source_shape") else None,
            )
            for e in doc["layers"]
        )
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptPayload(f"manifest sidecar is unreadable: {e}") from e
    total = sum(
        _entry_nbytes(entry) for entry in entries
    )
    return ModelManifest(entries, total, doc.get("metadata")), doc


def _entry_nbytes(entry: ManifestEntry) -> int:
    n = 1
    for d in entry.shape:
        n *= d
    return n * describe_dtype(entry.dtype).element_width


def _sidecar_entry(manifest: ModelManifest, config: PipelineConfig, extra=None) -> CompressedLayer:
    raw = _manifest_to_json(manifest, extra)
    layer = LayerRecord(MANIFEST_NAME, DType.RAW8, (len(raw),), raw)
    plain = PipelineConfig(
        mode=Mode.LOSSLESS, byte_group=False, codec=config.codec, level=config.level
    )
    return compress_layer(layer, plain)


def write_model_archive(
    sink: Union[str, Path, BinaryIO],
    layers: Sequence[LayerRecord],
    config: PipelineConfig,
    manifest: Optional[ModelManifest] = None,
    threads: int = 1,
) -> list[CompressedLayer]:
    """Compress a model and write it as an archive; returns the entries."""
    if manifest is None:
        manifest = ModelManifest.from_layers(layers)
    else:
        report = validate_manifest(manifest, layers)
        if report:
            raise ValidationFailed(report)
    entries = compress_model(layers, config, threads=threads)
    if _manifest_sidecar_needed(manifest, config.granularity):
        entries = [_sidecar_entry(manifest, config)] + entries
    header = ArchiveHeader(
        KIND_MODEL, config.codec, config.level, config.granularity
    )
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_archive(header, entries, f)
    else:
        write_archive(header, entries, sink)
    return entries


def read_model_archive(
    source: Union[str, Path, BinaryIO],
    threads: int = 1,
) -> tuple[ArchiveHeader, ModelManifest, list[LayerRecord]]:
    """Read and fully decompress a model archive."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_model_archive(f, threads=threads)

    header, it = read_archive(source)
    if header.kind != KIND_MODEL:
        raise CorruptPayload("not a model archive (did you mean `apply`?)")
    entries = list(it)

    manifest = None
    if entries and entries[0].name == MANIFEST_NAME:
        sidecar = decompress_layer(entries[0], header.codec)
        manifest, _ = _manifest_from_json(sidecar.data)
        entries = entries[1:]

    layers = decompress_model(entries, header.codec, manifest, threads=threads)
    if manifest is None:
        manifest = ModelManifest.from_layers(layers)
    return header, manifest, layers


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerStats:
    name: str
    dtype: DType
    original_bytes: int
    entry_bytes: int
    payload_bytes: int
    groups: tuple[tuple[int, int], ...]  # (compressed, uncompressed) per group
    sign: Optional[tuple[int, int]]
    lossy_bits: int
    fallback: bool

    def ratio_percent(self, payload_only: bool = False) -> str:
        stored = self.payload_bytes if payload_only else self.entry_bytes
        return format_percent(stored, self.original_bytes)

    def group_percents(self) -> tuple[str, ...]:
        return tuple(format_percent(c, u) for c, u in self.groups)


@dataclass(frozen=True)
class ArchiveStats:
    kind: int
    codec: CodecId
    level: int
    granularity: Granularity
    file_bytes: int
    original_bytes: int
    payload_bytes: int
    layers: tuple[LayerStats, ...]

    def ratio_percent(self, payload_only: bool = False) -> str:
        stored = self.payload_bytes if payload_only else self.file_bytes
        return format_percent(stored, self.original_bytes)

    def aggregate_groups(self) -> tuple[tuple[int, int], ...]:
        """Per-group (compressed, uncompressed) totals over grouped layers."""
        counts = {len(s.groups) for s in self.layers if len(s.groups) > 1}
        if not counts:
            return ()
        k = max(counts)
        totals = [[0, 0] for _ in range(k)]
        for s in self.layers:
            if len(s.groups) != k:
                continue
            for g, (c, u) in enumerate(s.groups):
                totals[g][0] += c
                totals[g][1] += u
        return tuple((c, u) for c, u in totals)

    def aggregate_group_percents(self) -> tuple[str, ...]:
        return tuple(format_percent(c, u) for c, u in self.aggregate_groups())

    def to_dict(self, payload_only: bool = False) -> dict:
        return {
            "kind": "delta" if self.kind == KIND_DELTA else "model",
            "codec": self.codec.value,
            "level": self.level,
            "granularity": self.granularity.value,
            "payload_only": payload_only,
            "original_bytes": self.original_bytes,
            "file_bytes": self.file_bytes,
            "payload_bytes": self.payload_bytes,
            "ratio_percent": self.ratio_percent(payload_only),
            "per_group_percent": list(self.aggregate_group_percents()),
            "layers": [
                {
                    "name": s.name,
                    "dtype": s.dtype.value,
                    "original_bytes": s.original_bytes,
                    "stored_bytes": s.payload_bytes if payload_only else s.entry_bytes,
                    "ratio_percent": s.ratio_percent(payload_only),
                    "per_group_percent": list(s.group_percents()),
                    "sign_percent": (
                        format_percent(*s.sign) if s.sign is not None else None
                    ),
                    "precision_bits": s.lossy_bits or None,
                    "fallback": s.fallback,
                }
                for s in self.layers
            ],
        }


def stats_from_entries(
    header: ArchiveHeader, entries: Sequence[CompressedLayer]
) -> ArchiveStats:
    per_layer = []
    file_bytes = HEADER_SIZE
    for cl in entries:
        file_bytes += entry_wire_size(cl)
        if cl.name == MANIFEST_NAME:
            continue
        groups = tuple((p.compressed_len, p.uncompressed_len) for p in cl.payloads)
        sign = None
        if cl.sign_payload is not None:
            sign = (cl.sign_payload.compressed_len, cl.sign_payload.uncompressed_len)
        per_layer.append(
            LayerStats(
                name=cl.name,
                dtype=cl.dtype,
                original_bytes=cl.original_nbytes,
                entry_bytes=entry_wire_size(cl),
                payload_bytes=cl.stored_payload_bytes,
                groups=groups,
                sign=sign,
                lossy_bits=(
                    cl.step_param(TransformKind.LOSSY_CAST)
                    if cl.has(TransformKind.LOSSY_CAST)
                    else 0
                ),
                fallback=cl.fallback_raw,
            )
        )
    return ArchiveStats(
        kind=header.kind,
        codec=header.codec,
        level=header.level,
        granularity=header.granularity,
        file_bytes=file_bytes,
        original_bytes=sum(s.original_bytes for s in per_layer),
        payload_bytes=sum(s.payload_bytes for s in per_layer),
        layers=tuple(per_layer),
    )


def archive_stats(source: Union[str, Path, BinaryIO]) -> ArchiveStats:
    """Per-layer and aggregate compression statistics of an archive."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return archive_stats(f)
    header, it = read_archive(source)
    return stats_from_entries(header, list(it))
