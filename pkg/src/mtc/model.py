"""Core value types: parameter dtypes, layers, manifests, and the ratio metric.

Every multi-byte element in this package is a little-endian word. Byte-group
indices, by contrast, are counted most-significant-byte first, so group 0 of a
float layer is always the sign+high-exponent byte regardless of storage order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import UnsupportedDtype, ZeroOriginal


class DType(enum.Enum):
    """Supported parameter types. Values match weight-file dtype strings."""

    FP32 = "F32"
    FP16 = "F16"
    BF16 = "BF16"
    RAW8 = "RAW8"


@dataclass(frozen=True)
class DTypeLayout:
    """Bit widths of the sign/exponent/mantissa fields of one element."""

    code: DType
    element_width: int
    sign_bits: int
    exponent_bits: int
    mantissa_bits: int

    @property
    def is_float(self) -> bool:
        return self.sign_bits == 1


_LAYOUTS = {
    DType.FP32: DTypeLayout(DType.FP32, 4, 1, 8, 23),
    DType.FP16: DTypeLayout(DType.FP16, 2, 1, 5, 10),
    DType.BF16: DTypeLayout(DType.BF16, 2, 1, 8, 7),
    DType.RAW8: DTypeLayout(DType.RAW8, 1, 0, 0, 0),
}


def describe_dtype(code: DType | str) -> DTypeLayout:
    """Return the fixed bit layout for a dtype code (or its string form)."""
    if isinstance(code, str):
        try:
            code = DType(code)
        except ValueError:
            raise UnsupportedDtype(f"unknown dtype {code!r}") from None
    layout = _LAYOUTS.get(code)
    if layout is None:
        raise UnsupportedDtype(f"unknown dtype {code!r}")
    return layout


@dataclass(frozen=True)
class LayerRecord:
    """One named tensor: the unit of compression.

    ``data`` holds the raw little-endian element bytes. Byte-length
    consistency against ``shape`` is checked by :func:`validate_manifest`,
    not at construction, so that inconsistent inputs can be reported rather
    than rejected one field at a time.
    """

    name: str
    dtype: DType
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if not self.name:
            raise ValueError("layer name must be non-empty")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative extent in shape {self.shape}")

    @property
    def element_count(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @property
    def layout(self) -> DTypeLayout:
        return describe_dtype(self.dtype)


@dataclass(frozen=True)
class ManifestEntry:
    """Name/dtype/shape of one layer.

    ``source_dtype``/``source_shape`` remember the original weight-file
    declaration for tensors that were folded into RAW8 passthrough, so the
    file can be rewritten with its original semantics.
    """

    name: str
    dtype: DType
    shape: tuple[int, ...]
    source_dtype: Optional[str] = None
    source_shape: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class ModelManifest:
    """Ordered layer directory of a model; order is stable end-to-end."""

    layers: tuple[ManifestEntry, ...]
    total_bytes: int
    metadata: Optional[dict[str, str]] = field(default=None)

    @classmethod
    def from_layers(
        cls,
        layers: Sequence[LayerRecord],
        metadata: Optional[dict[str, str]] = None,
    ) -> "ModelManifest":
        entries = tuple(
            ManifestEntry(l.name, l.dtype, l.shape) for l in layers
        )
        return cls(entries, sum(l.nbytes for l in layers), metadata)


def validate_manifest(
    manifest: ModelManifest, layers: Sequence[LayerRecord]
) -> list[str]:
    """Check manifest/layer consistency; an empty report means valid.

    Reports duplicate names, manifest/layer disagreements, unknown dtypes,
    and shape/byte-length mismatches.
    """
    report: list[str] = []
    seen: set[str] = set()
    for entry in manifest.layers:
        if entry.name in seen:
            report.append(f"duplicate layer name {entry.name!r}")
        seen.add(entry.name)

    if len(manifest.layers) != len(layers):
        report.append(
            f"manifest lists {len(manifest.layers)} layers, got {len(layers)}"
        )
    for entry, layer in zip(manifest.layers, layers):
        if entry.name != layer.name:
            report.append(
                f"layer order mismatch: manifest {entry.name!r} vs data {layer.name!r}"
            )
            continue
        if entry.dtype != layer.dtype or entry.shape != layer.shape:
            report.append(f"manifest entry for {layer.name!r} disagrees with layer")
        try:
            layout = describe_dtype(layer.dtype)
        except UnsupportedDtype:
            report.append(f"layer {layer.name!r} has unknown dtype")
            continue
        expected = layer.element_count * layout.element_width
        if layer.nbytes != expected:
            report.append(
                f"layer {layer.name!r}: shape {layer.shape} implies "
                f"{expected} bytes, data has {layer.nbytes}"
            )

    total = sum(l.nbytes for l in layers)
    if manifest.total_bytes != total:
        report.append(
            f"manifest total_bytes {manifest.total_bytes} != layer total {total}"
        )
    return report


@dataclass(frozen=True)
class CompressionRatio:
    """Compressed size over original size; lower is better."""

    compressed_bytes: int
    original_bytes: int

    def __post_init__(self):
        if self.original_bytes <= 0:
            raise ZeroOriginal("original byte count must be positive")
        if self.compressed_bytes < 0:
            raise ValueError("compressed byte count must be non-negative")

    @property
    def ratio(self) -> float:
        return self.compressed_bytes / self.original_bytes

    def as_fraction(self) -> Fraction:
        """Exact ratio, untouched by float rounding."""
        return Fraction(self.compressed_bytes, self.original_bytes)

    def percent(self) -> str:
        return format_percent(self.compressed_bytes, self.original_bytes)


def compute_ratio(compressed: int, original: int) -> CompressionRatio:
    """Build the ratio metric for ``compressed`` bytes out of ``original``."""
    return CompressionRatio(int(compressed), int(original))


def format_percent(compressed: int, original: int) -> str:
    """Render a ratio as a percentage string.

    One decimal normally; ratios under 0.1% keep three decimals so that
    near-empty payloads stay distinguishable from zero. A zero-byte original
    has no defined ratio and renders as "n/a".
    """
    if original == 0:
        return "n/a"
    pct = 100.0 * compressed / original
    if 0.0 < pct < 0.1:
        return f"{pct:.3f}%"
    return f"{pct:.1f}%"


def hash_layer_data(layers: Iterable[LayerRecord]) -> bytes:
    """SHA-256 over the concatenated layer data, in manifest order."""
    import hashlib

    h = hashlib.sha256()
    for layer in layers:
        h.update(layer.data)
    return h.digest()
