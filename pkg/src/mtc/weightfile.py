"""Reading and writing model weight files.

The container is the common hub format: an 8-byte little-endian header
length, a UTF-8 JSON header mapping tensor names to dtype/shape/offsets,
then a flat data region. Unknown dtype strings are carried through as RAW8
byte blobs (compression only needs bytes); their declared dtype and shape
are kept on the manifest so the file can be rewritten unchanged in meaning.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Sequence

from .errors import (
    MalformedHeader,
    MisalignedLength,
    OverlappingSpans,
    TruncatedData,
    ValidationFailed,
)
from .model import (
    DType,
    LayerRecord,
    ManifestEntry,
    ModelManifest,
    describe_dtype,
    validate_manifest,
)

_HEADER_LEN_FMT = "<Q"
_METADATA_KEY = "__metadata__"


def _reject_duplicate_keys(pairs):
    d = {}
    for key, value in pairs:
        if key in d:
            raise MalformedHeader(f"duplicate header entry {key!r}")
        d[key] = value
    return d


def parse_model_file(data: bytes) -> tuple[ModelManifest, list[LayerRecord]]:
    """Parse a weight file into a manifest plus one LayerRecord per tensor.

    Layers come back in header order. Raises MalformedHeader for a broken
    or inconsistent header, OverlappingSpans when tensor byte ranges
    collide, and TruncatedData when a range points past the end of file.
    """
    if len(data) < 8:
        raise MalformedHeader("file shorter than the 8-byte header length")
    (header_len,) = struct.unpack_from(_HEADER_LEN_FMT, data, 0)
    if 8 + header_len > len(data):
        raise MalformedHeader(
            f"header length {header_len} exceeds file size {len(data)}"
        )
    try:
        header = json.loads(
            data[8 : 8 + header_len].decode("utf-8"),
            object_pairs_hook=_reject_duplicate_keys,
        )
    except MalformedHeader:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeader(f"header is not valid JSON: {e}") from e
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")

    region = memoryview(data)[8 + header_len :]

    metadata = None
    entries: list[ManifestEntry] = []
    layers: list[LayerRecord] = []
    spans: list[tuple[int, int, str]] = []

    for name, info in header.items():
        if name == _METADATA_KEY:
            if not isinstance(info, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in info.items()
            ):
                raise MalformedHeader("__metadata__ must map strings to strings")
            metadata = dict(info)
            continue
        if not isinstance(info, dict):
            raise MalformedHeader(f"entry {name!r} is not an object")
        try:
            dtype_str = info["dtype"]
            shape = tuple(int(d) for d in info["shape"])
            begin, end = (int(x) for x in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedHeader(f"entry {name!r} is malformed: {e}") from e
        if begin < 0 or end < begin:
            raise MalformedHeader(
                f"entry {name!r} has inverted offsets [{begin}, {end})"
            )
        if end > len(region):
            raise TruncatedData(
                f"entry {name!r} spans [{begin}, {end}) but the data region "
                f"has only {len(region)} bytes"
            )
        spans.append((begin, end, name))

        raw = bytes(region[begin:end])
        try:
            dtype = DType(dtype_str)
            source_dtype = None
            source_shape = None
        except ValueError:
            # Unknown dtype: keep the bytes, remember the declaration.
            dtype = DType.RAW8
            source_dtype = dtype_str
            source_shape = shape
            shape = (len(raw),)
        if source_dtype is None:
            width = describe_dtype(dtype).element_width
            if math.prod(shape) * width != len(raw):
                raise MalformedHeader(
                    f"entry {name!r}: shape {shape} does not match "
                    f"{len(raw)} data bytes"
                )
        entries.append(ManifestEntry(name, dtype, shape, source_dtype, source_shape))
        layers.append(LayerRecord(name, dtype, shape, raw))

    spans.sort()
    for (b1, e1, n1), (b2, e2, n2) in zip(spans, spans[1:]):
        if b2 < e1:
            raise OverlappingSpans(f"entries {n1!r} and {n2!r} overlap")

    manifest = ModelManifest(
        tuple(entries), sum(l.nbytes for l in layers), metadata
    )
    return manifest, layers


def write_model_file(
    manifest: ModelManifest, layers: Sequence[LayerRecord]
) -> bytes:
    """Serialize (manifest, layers) back into weight-file bytes.

    The header JSON is re-serialized deterministically in manifest order
    (compact separators, ASCII escapes); the data region is laid out
    contiguously in the same order, byte-identical to the layer data.
    """
    report = validate_manifest(manifest, layers)
    if report:
        raise ValidationFailed(report)

    header: dict[str, object] = {}
    if manifest.metadata is not None:
        header[_METADATA_KEY] = manifest.metadata
    offset = 0
    for entry, layer in zip(manifest.layers, layers):
        end = offset + layer.nbytes
        header[entry.name] = {
            "dtype": entry.source_dtype or entry.dtype.value,
            "shape": list(entry.source_shape or entry.shape),
            "data_offsets": [offset, end],
        }
        offset = end

    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += struct.pack(_HEADER_LEN_FMT, len(header_bytes))
    out += header_bytes
    for layer in layers:
        out += layer.data
    return bytes(out)


def parse_raw_blob(data: bytes, dtype: DType | str, name: str = "blob") -> LayerRecord:
    """Wrap a headerless binary blob as a single flat layer."""
    layout = describe_dtype(dtype)
    if len(data) % layout.element_width != 0:
        raise MisalignedLength(
            f"{len(data)} bytes is not a multiple of element width "
            f"{layout.element_width}"
        )
    return LayerRecord(name, layout.code, (len(data) // layout.element_width,), bytes(data))
