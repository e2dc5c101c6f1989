import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtc import DType, parse_model_file, parse_raw_blob, write_model_file
from mtc.errors import (
    MalformedHeader,
    MisalignedLength,
    OverlappingSpans,
    TruncatedData,
)

from conftest import make_model_file


class TestParse:
    def test_single_f32_tensor(self):
        data = bytes.fromhex("0000803f") + bytes.fromhex("000080bf")
        blob = make_model_file([("w", "F32", [2], data)])
        manifest, layers = parse_model_file(blob)
        assert [e.name for e in manifest.layers] == ["w"]
        values = np.frombuffer(layers[0].data, "<f4")
        assert list(values) == [1.0, -1.0]

    def test_empty_tensor(self):
        blob = make_model_file([("e", "F32", [0], b"")])
        _, layers = parse_model_file(blob)
        assert layers[0].nbytes == 0
        assert layers[0].shape == (0,)

    def test_offsets_beyond_file(self):
        blob = make_model_file([("w", "F32", [2], b"\x00" * 8)])
        with pytest.raises(TruncatedData):
            parse_model_file(blob[:-4])

    def test_overlapping_spans(self):
        header = {
            "a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},
            "b": {"dtype": "F32", "shape": [1], "data_offsets": [2, 6]},
        }
        raw = json.dumps(header).encode()
        blob = struct.pack("<Q", len(raw)) + raw + b"\x00" * 6
        with pytest.raises(OverlappingSpans):
            parse_model_file(blob)

    def test_bad_json(self):
        raw = b"{not json"
        with pytest.raises(MalformedHeader):
            parse_model_file(struct.pack("<Q", len(raw)) + raw)

    def test_duplicate_names(self):
        raw = (
            b'{"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},'
            b'"w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}'
        )
        blob = struct.pack("<Q", len(raw)) + raw + b"\x00" * 8
        with pytest.raises(MalformedHeader):
            parse_model_file(blob)

    def test_shape_data_disagreement(self):
        blob = make_model_file([("w", "F32", [3], b"\x00" * 8)])
        with pytest.raises(MalformedHeader):
            parse_model_file(blob)

    def test_unknown_dtype_passthrough(self):
        payload = bytes(range(16))
        blob = make_model_file([("ids", "I64", [2], payload)])
        manifest, layers = parse_model_file(blob)
        assert layers[0].dtype is DType.RAW8
        assert layers[0].data == payload
        assert manifest.layers[0].source_dtype == "I64"
        assert manifest.layers[0].source_shape == (2,)

    def test_metadata_is_preserved(self):
        blob = make_model_file(
            [("w", "F32", [1], b"\x00" * 4)], metadata={"format": "pt"}
        )
        manifest, layers = parse_model_file(blob)
        out = write_model_file(manifest, layers)
        manifest2, _ = parse_model_file(out)
        assert manifest2.metadata == {"format": "pt"}

    def test_ignores_bytes_outside_spans(self):
        # trailing garbage beyond the last declared span must not leak in
        blob = make_model_file([("w", "F32", [1], b"\xaa" * 4)]) + b"\xff" * 32
        _, layers = parse_model_file(blob)
        assert layers[0].data == b"\xaa" * 4


class TestWrite:
    def test_roundtrip_identity(self, rng):
        entries = [
            ("z.weight", "F32", [2, 2], rng.bytes(16)),
            ("a.bias", "F16", [3], rng.bytes(6)),
            ("blob", "CUSTOM", [5], rng.bytes(5)),
            ("empty", "BF16", [0], b""),
        ]
        blob = make_model_file(entries, metadata={"k": "v"})
        manifest, layers = parse_model_file(blob)
        out = write_model_file(manifest, layers)
        manifest2, layers2 = parse_model_file(out)
        assert manifest2 == manifest
        assert layers2 == layers
        # a second rewrite is byte-identical (canonical form is a fixpoint)
        assert write_model_file(manifest2, layers2) == out

    def test_raw8_output_length(self):
        payload = bytes(range(7))
        manifest, layers = parse_model_file(
            make_model_file([("b", "RAW8", [7], payload)])
        )
        out = write_model_file(manifest, layers)
        (header_len,) = struct.unpack_from("<Q", out, 0)
        assert len(out) == 8 + header_len + 7

    def test_two_layers_contiguous_in_order(self, rng):
        blob = make_model_file(
            [("b", "F32", [2], rng.bytes(8)), ("a", "F32", [1], rng.bytes(4))]
        )
        manifest, layers = parse_model_file(blob)
        out = write_model_file(manifest, layers)
        header = json.loads(out[8 : 8 + struct.unpack_from("<Q", out, 0)[0]])
        assert header["b"]["data_offsets"] == [0, 8]
        assert header["a"]["data_offsets"] == [8, 12]

    def test_data_region_byte_identical(self, rng):
        data = rng.bytes(64)
        blob = make_model_file([("w", "F32", [16], data)])
        manifest, layers = parse_model_file(blob)
        out = write_model_file(manifest, layers)
        (header_len,) = struct.unpack_from("<Q", out, 0)
        assert out[8 + header_len :] == data

    @settings(max_examples=50)
    @given(st.data())
    def test_parse_write_property(self, data):
        dtypes = {"F32": 4, "F16": 2, "BF16": 2, "RAW8": 1}
        n_layers = data.draw(st.integers(0, 4))
        entries = []
        for i in range(n_layers):
            dtype = data.draw(st.sampled_from(sorted(dtypes)))
            count = data.draw(st.integers(0, 16))
            payload = data.draw(st.binary(min_size=count * dtypes[dtype],
                                          max_size=count * dtypes[dtype]))
            entries.append((f"l{i}", dtype, [count], payload))
        blob = make_model_file(entries)
        manifest, layers = parse_model_file(blob)
        out = write_model_file(manifest, layers)
        manifest2, layers2 = parse_model_file(out)
        assert (manifest2, layers2) == (manifest, layers)


class TestRawBlob:
    def test_fp32_shape(self):
        layer = parse_raw_blob(b"\x00" * 8, DType.FP32, "w")
        assert layer.shape == (2,)

    def test_misaligned(self):
        with pytest.raises(MisalignedLength):
            parse_raw_blob(b"\x00" * 7, DType.FP32)

    def test_bf16(self):
        assert parse_raw_blob(b"\x00\x3f", DType.BF16).shape == (1,)
