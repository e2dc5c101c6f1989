import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtc import (
    CompressionRatio,
    DType,
    LayerRecord,
    ModelManifest,
    compute_ratio,
    describe_dtype,
    format_percent,
    validate_manifest,
)
from mtc.errors import UnsupportedDtype, ZeroOriginal


class TestDescribeDtype:
    @pytest.mark.parametrize(
        "code,width,sign,exp,mant",
        [
            (DType.FP32, 4, 1, 8, 23),
            (DType.BF16, 2, 1, 8, 7),
            (DType.FP16, 2, 1, 5, 10),
            (DType.RAW8, 1, 0, 0, 0),
        ],
    )
    def test_layouts(self, code, width, sign, exp, mant):
        layout = describe_dtype(code)
        assert (layout.element_width, layout.sign_bits) == (width, sign)
        assert (layout.exponent_bits, layout.mantissa_bits) == (exp, mant)

    def test_float_bit_budget(self):
        # sign + exponent + mantissa must fill the word exactly
        for code in (DType.FP32, DType.FP16, DType.BF16):
            layout = describe_dtype(code)
            assert (
                layout.sign_bits + layout.exponent_bits + layout.mantissa_bits
                == layout.element_width * 8
            )

    def test_string_codes(self):
        assert describe_dtype("F32").code is DType.FP32
        assert describe_dtype("BF16").code is DType.BF16

    def test_unknown(self):
        with pytest.raises(UnsupportedDtype):
            describe_dtype("F64")


class TestComputeRatio:
    def test_quarter_gig(self):
        r = compute_ratio(250_000_000, 1_000_000_000)
        assert r.percent() == "25.0%"

    def test_identity_and_empty(self):
        assert compute_ratio(123, 123).percent() == "100.0%"
        assert compute_ratio(0, 123).percent() == "0.0%"

    def test_zero_original(self):
        with pytest.raises(ZeroOriginal):
            compute_ratio(1, 0)

    @given(st.integers(0, 10**15), st.integers(1, 10**15))
    def test_exact_before_formatting(self, a, b):
        assert compute_ratio(a, b).as_fraction() * b == a

    def test_frozen_value_type(self):
        r = CompressionRatio(1, 2)
        with pytest.raises(AttributeError):
            r.compressed_bytes = 5


class TestFormatPercent:
    def test_table_style(self):
        assert format_percent(429, 1000) == "42.9%"
        assert format_percent(999, 1000) == "99.9%"
        assert format_percent(447, 1000) == "44.7%"

    def test_small_ratios_keep_three_decimals(self):
        assert format_percent(5, 100_000) == "0.005%"
        assert format_percent(2, 100_000) == "0.002%"

    def test_degenerate(self):
        assert format_percent(0, 0) == "n/a"
        assert format_percent(0, 10) == "0.0%"


class TestValidateManifest:
    def test_duplicate_names(self):
        layers = [
            LayerRecord("w", DType.FP32, (1,), b"\x00" * 4),
            LayerRecord("w", DType.FP32, (1,), b"\x00" * 4),
        ]
        report = validate_manifest(ModelManifest.from_layers(layers), layers)
        assert any("duplicate" in line for line in report)

    def test_valid_shape(self):
        layers = [LayerRecord("w", DType.FP32, (2, 3), b"\x00" * 24)]
        assert validate_manifest(ModelManifest.from_layers(layers), layers) == []

    def test_length_violation(self):
        layers = [LayerRecord("w", DType.FP32, (2, 3), b"\x00" * 23)]
        report = validate_manifest(ModelManifest.from_layers(layers), layers)
        assert any("23" in line for line in report)

    def test_zero_element_layer_is_legal(self):
        layers = [LayerRecord("empty", DType.FP32, (0,), b"")]
        assert validate_manifest(ModelManifest.from_layers(layers), layers) == []


class TestLayerRecord:
    def test_rejects_empty_name(self):
        with pytest.raises(ValueError):
            LayerRecord("", DType.FP32, (1,), b"\x00" * 4)

    def test_rejects_negative_extent(self):
        with pytest.raises(ValueError):
            LayerRecord("w", DType.FP32, (-1,), b"")

    @given(st.lists(st.integers(0, 8), max_size=3))
    def test_aligned_data_length(self, shape):
        # every valid record's byte length is a multiple of the element width
        import math

        n = math.prod(shape)
        layer = LayerRecord("w", DType.FP16, tuple(shape), b"\x00" * (2 * n))
        assert layer.nbytes % layer.layout.element_width == 0
