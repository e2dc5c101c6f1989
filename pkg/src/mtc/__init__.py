"""Compression toolkit for model weight tensors.

Lossless byte-grouped entropy coding, optional sign-bit separation, a
tunable near-lossless fixed-point cast, and delta compression between
model versions, with a bit-exact archive format and a CLI.
"""

from .backends import CodecId, compress_block, decompress_block, register_codec
from .container import (
    ArchiveHeader,
    ArchiveStats,
    archive_stats,
    read_archive,
    read_model_archive,
    write_archive,
    write_model_archive,
)
from .delta import (
    DeltaDescriptor,
    DeltaMode,
    apply_delta,
    apply_lossy,
    apply_xor,
    build_delta,
    diff_lossy,
    diff_xor,
    read_delta_archive,
    write_delta_archive,
)
from .errors import MtcError
from .model import (
    CompressionRatio,
    DType,
    DTypeLayout,
    LayerRecord,
    ManifestEntry,
    ModelManifest,
    compute_ratio,
    describe_dtype,
    format_percent,
    hash_layer_data,
    validate_manifest,
)
from .pipeline import (
    CompressedLayer,
    Granularity,
    Mode,
    PipelineConfig,
    compress_layer,
    compress_model,
    decompress_layer,
    decompress_model,
)
from .transforms import (
    ByteGroups,
    LossyParams,
    QuantizedLayer,
    SignSplit,
    group_bytes,
    lossy_decode,
    lossy_encode,
    merge_sign,
    split_sign,
    ungroup_bytes,
)
from .weightfile import parse_model_file, parse_raw_blob, write_model_file

__version__ = "0.1.0"

__all__ = [
    "ArchiveHeader",
    "ArchiveStats",
    "ByteGroups",
    "CodecId",
    "CompressedLayer",
    "CompressionRatio",
    "DType",
    "DTypeLayout",
    "DeltaDescriptor",
    "DeltaMode",
    "Granularity",
    "LayerRecord",
    "LossyParams",
    "ManifestEntry",
    "Mode",
    "ModelManifest",
    "MtcError",
    "PipelineConfig",
    "QuantizedLayer",
    "SignSplit",
    "apply_delta",
    "apply_lossy",
    "apply_xor",
    "archive_stats",
    "build_delta",
    "compress_block",
    "compress_layer",
    "compress_model",
    "compute_ratio",
    "decompress_block",
    "decompress_layer",
    "decompress_model",
    "describe_dtype",
    "diff_lossy",
    "diff_xor",
    "format_percent",
    "group_bytes",
    "hash_layer_data",
    "lossy_decode",
    "lossy_encode",
    "merge_sign",
    "parse_model_file",
    "parse_raw_blob",
    "read_archive",
    "read_delta_archive",
    "read_model_archive",
    "register_codec",
    "split_sign",
    "ungroup_bytes",
    "validate_manifest",
    "write_archive",
    "write_delta_archive",
    "write_model_archive",
    "write_model_file",
]
