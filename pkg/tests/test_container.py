import io

import pytest

from mtc import (
    ArchiveHeader,
    CodecId,
    DType,
    Granularity,
    LayerRecord,
    Mode,
    PipelineConfig,
    archive_stats,
    compress_layer,
    read_archive,
    read_model_archive,
    write_archive,
    write_model_archive,
)
from mtc.container import HEADER_SIZE, KIND_MODEL, entry_wire_size, stats_from_entries
from mtc.errors import BadMagic, CorruptPayload, TruncatedEntry, UnsupportedVersion
from mtc.pipeline import BlockPayload, CompressedLayer

from conftest import make_model_file, random_model


def model_header(codec=CodecId.ZSTD, level=3, gran=Granularity.PER_LAYER):
    return ArchiveHeader(KIND_MODEL, codec, level, gran)


class TestWireLayout:
    def test_empty_archive_is_exactly_the_header(self):
        sink = io.BytesIO()
        written = write_archive(model_header(), [], sink)
        # 4+1+1+1+1+1+2+32+8 from the layout table
        assert written == 51 == HEADER_SIZE
        assert len(sink.getvalue()) == 51

    def test_store_layer_size_arithmetic(self, rng):
        data = rng.bytes(64)
        layer = LayerRecord("w", DType.RAW8, (64,), data)
        cl = compress_layer(layer, PipelineConfig(codec=CodecId.STORE, byte_group=False))
        sink = io.BytesIO()
        write_archive(model_header(CodecId.STORE), [cl], sink)
        fixed = 2 + len(b"w") + 4 + 8 * 1 + 8 + 4 + 1
        tables = 16 * 1 + 16
        assert len(sink.getvalue()) == 51 + fixed + tables + 64
        assert entry_wire_size(cl) == fixed + tables + 64

    def test_roundtrip_bit_identical(self, rng):
        layers = random_model(rng, 4, DType.FP32, specials=True)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        first = buf.getvalue()
        header, entries = read_archive(io.BytesIO(first))
        buf2 = io.BytesIO()
        write_archive(header, list(entries), buf2)
        assert buf2.getvalue() == first

    def test_file_ends_at_last_payload(self, rng):
        layers = random_model(rng, 2, DType.BF16)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        data = buf.getvalue()
        header, entries = read_archive(io.BytesIO(data))
        consumed = HEADER_SIZE + sum(entry_wire_size(e) for e in entries)
        assert consumed == len(data)


class TestReadErrors:
    def make_archive(self, rng) -> bytes:
        buf = io.BytesIO()
        write_model_archive(buf, random_model(rng, 2, DType.FP32), PipelineConfig())
        return buf.getvalue()

    def test_bad_magic(self, rng):
        data = bytearray(self.make_archive(rng))
        data[0] ^= 0xFF
        with pytest.raises(BadMagic):
            read_archive(io.BytesIO(bytes(data)))

    def test_unsupported_version(self, rng):
        data = bytearray(self.make_archive(rng))
        data[4] = 2
        with pytest.raises(UnsupportedVersion):
            read_archive(io.BytesIO(bytes(data)))

    def test_truncated_payload_names_layer(self, rng):
        data = self.make_archive(rng)
        header, entries = read_archive(io.BytesIO(data[:-3]))
        with pytest.raises(TruncatedEntry) as exc:
            list(entries)
        assert "layer1" in str(exc.value)

    def test_reserved_bytes_must_be_zero(self, rng):
        data = bytearray(self.make_archive(rng))
        data[9] = 1
        with pytest.raises(CorruptPayload):
            read_archive(io.BytesIO(bytes(data)))

    def test_empty_file(self):
        with pytest.raises(BadMagic):
            read_archive(io.BytesIO(b""))


class TestModelArchive:
    def test_metadata_rides_along(self, rng):
        from mtc import parse_model_file

        blob = make_model_file(
            [("w", "F32", [4], rng.bytes(16)), ("ids", "I64", [2], rng.bytes(16))],
            metadata={"origin": "unit-test"},
        )
        manifest, layers = parse_model_file(blob)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig(), manifest=manifest)
        buf.seek(0)
        _, manifest2, layers2 = read_model_archive(buf)
        assert manifest2.metadata == {"origin": "unit-test"}
        assert manifest2.layers[1].source_dtype == "I64"
        assert layers2 == layers

    def test_whole_model_restores_layers(self, rng):
        layers = random_model(rng, 3, DType.FP16)
        buf = io.BytesIO()
        write_model_archive(
            buf, layers, PipelineConfig(granularity=Granularity.WHOLE_MODEL)
        )
        buf.seek(0)
        _, manifest, layers2 = read_model_archive(buf)
        assert layers2 == layers
        assert [e.name for e in manifest.layers] == [l.name for l in layers]

    def test_per_layer_archive_has_no_sidecar(self, rng):
        layers = random_model(rng, 2, DType.FP32)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        header, entries = read_archive(io.BytesIO(buf.getvalue()))
        names = [e.name for e in entries]
        assert names == [l.name for l in layers]

    def test_utf8_layer_names(self, rng):
        layers = [LayerRecord("重み.w", DType.FP32, (4,), rng.bytes(16))]
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        buf.seek(0)
        _, _, layers2 = read_model_archive(buf)
        assert layers2 == layers

    def test_whole_model_lossy_roundtrip_within_bound(self, rng):
        import numpy as np

        layers = [
            LayerRecord(
                f"l{i}", DType.FP32, (64,),
                rng.uniform(-1, 1, 64).astype(np.float32).tobytes(),
            )
            for i in range(3)
        ]
        buf = io.BytesIO()
        write_model_archive(
            buf,
            layers,
            PipelineConfig(
                mode=Mode.LOSSY, precision_bits=23,
                granularity=Granularity.WHOLE_MODEL,
            ),
        )
        buf.seek(0)
        _, _, layers2 = read_model_archive(buf)
        for src, out in zip(layers, layers2):
            a = np.frombuffer(src.data, "<f4").astype(np.float64)
            b = np.frombuffer(out.data, "<f4").astype(np.float64)
            assert (np.abs(a - b) < 2.0**-23).all()

    def test_lossy_empty_layer_roundtrip(self):
        layer = LayerRecord("e", DType.FP32, (0,), b"")
        buf = io.BytesIO()
        write_model_archive(
            buf, [layer], PipelineConfig(mode=Mode.LOSSY, precision_bits=23)
        )
        buf.seek(0)
        _, _, layers2 = read_model_archive(buf)
        assert layers2 == [layer]

    def test_mismatched_manifest_rejected(self, rng):
        from mtc.errors import ValidationFailed
        from mtc.model import ManifestEntry, ModelManifest

        layers = random_model(rng, 2, DType.FP32)
        wrong = ModelManifest(
            (ManifestEntry("other", DType.FP32, (1,)),), 4, None
        )
        with pytest.raises(ValidationFailed):
            write_model_archive(io.BytesIO(), layers, PipelineConfig(), manifest=wrong)


class TestStats:
    def test_group_percent_formatting(self):
        from mtc.pipeline import TransformKind, TransformStep

        cl = CompressedLayer(
            name="w",
            dtype=DType.FP16,
            shape=(1000,),
            transform_chain=(TransformStep(TransformKind.BYTE_GROUP, 2),),
            payloads=(BlockPayload(1000, b"\x00" * 429), BlockPayload(1000, b"\x00" * 999)),
            sign_payload=None,
            crc32=0,
        )
        stats = stats_from_entries(model_header(), [cl])
        assert stats.layers[0].group_percents() == ("42.9%", "99.9%")

    def test_aggregate_is_byte_weighted(self):
        # equal-size layers at 40% and 60% payload ratio average to 50%
        entries = [
            CompressedLayer("a", DType.RAW8, (1000,), (), (BlockPayload(1000, b"\x00" * 400),), None, 0),
            CompressedLayer("b", DType.RAW8, (1000,), (), (BlockPayload(1000, b"\x00" * 600),), None, 0),
        ]
        stats = stats_from_entries(model_header(), entries)
        assert stats.ratio_percent(payload_only=True) == "50.0%"

    def test_fallback_layer_is_single_group(self, rng):
        layer = LayerRecord("blob", DType.RAW8, (256,), rng.bytes(256))
        buf = io.BytesIO()
        write_model_archive(buf, [layer], PipelineConfig())
        stats = archive_stats(io.BytesIO(buf.getvalue()))
        assert len(stats.layers[0].groups) == 1

    def test_empty_layer_reports_na(self):
        layer = LayerRecord("e", DType.FP32, (0,), b"")
        buf = io.BytesIO()
        write_model_archive(buf, [layer], PipelineConfig())
        stats = archive_stats(io.BytesIO(buf.getvalue()))
        assert stats.layers[0].ratio_percent() == "n/a"

    def test_aggregate_consistency(self, rng):
        layers = random_model(rng, 3, DType.FP32)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        stats = archive_stats(io.BytesIO(buf.getvalue()))
        assert stats.file_bytes == len(buf.getvalue())
        assert stats.original_bytes == sum(l.nbytes for l in layers)
        # file bytes == header + per-entry overhead + payloads
        overhead = sum(s.entry_bytes - s.payload_bytes for s in stats.layers)
        assert stats.file_bytes == HEADER_SIZE + overhead + stats.payload_bytes

    def test_json_schema_fields(self, rng):
        layers = random_model(rng, 2, DType.FP32)
        buf = io.BytesIO()
        write_model_archive(buf, layers, PipelineConfig())
        doc = archive_stats(io.BytesIO(buf.getvalue())).to_dict()
        assert doc["kind"] == "model"
        assert set(doc["layers"][0]) >= {
            "name",
            "dtype",
            "original_bytes",
            "stored_bytes",
            "ratio_percent",
            "per_group_percent",
        }
