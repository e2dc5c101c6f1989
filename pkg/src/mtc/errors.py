"""Exception types raised across the toolkit."""


class MtcError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedDtype(MtcError):
    """Dtype is unknown, or an operation does not apply to it."""


class ZeroOriginal(MtcError):
    """Compression ratio requested against a zero-byte original."""


class ValidationFailed(MtcError):
    """A manifest/layer consistency check failed.

    Carries the full violation report in ``violations``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MalformedHeader(MtcError):
    """Weight-file header is unreadable or internally inconsistent."""


class OverlappingSpans(MalformedHeader):
    """Two tensors in a weight file claim overlapping byte ranges."""


class TruncatedData(MalformedHeader):
    """A weight-file tensor span points past the end of the file."""


class MisalignedLength(MtcError):
    """Byte length is not a multiple of the element width."""


class RaggedGroups(MtcError):
    """Byte groups have unequal lengths and cannot be interleaved."""


class CountMismatch(MtcError):
    """Sign bitstream length does not match the magnitude count."""


class FallbackLayer(MtcError):
    """Attempted to decode a layer that was stored raw (lossy fallback)."""


class FallbackRequired(MtcError):
    """A residual delta was requested for a layer stored in XOR mode."""


class BackendFailure(MtcError):
    """A codec backend rejected the call or is unavailable."""


class CorruptPayload(MtcError):
    """A compressed payload failed to decode."""


class LengthMismatch(CorruptPayload):
    """Decoded payload length differs from the recorded length."""


class ChecksumMismatch(MtcError):
    """Reconstructed bytes do not match the recorded CRC32."""


class MixedDtypeWholeModel(MtcError):
    """Whole-model compression needs a single dtype across all layers."""


class ManifestMismatch(MtcError):
    """Two models differ structurally (names, dtypes, or shapes)."""


class BaseHashMismatch(MtcError):
    """Delta applied against a base with the wrong content hash."""


class BadMagic(MtcError):
    """Input is not an archive (magic bytes differ)."""


class UnsupportedVersion(MtcError):
    """Archive was written by an incompatible format version."""


class TruncatedEntry(MtcError):
    """Archive ends in the middle of a layer entry."""


class SinkFailure(MtcError):
    """Writing the archive to its sink failed."""
