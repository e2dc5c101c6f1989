"""Shared fixtures and model builders for the test suite."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from mtc import DType, LayerRecord

WIDTHS = {DType.FP32: 4, DType.FP16: 2, DType.BF16: 2, DType.RAW8: 1}


def make_model_file(entries, metadata=None) -> bytes:
    """Assemble weight-file bytes from (name, dtype_str, shape, data) tuples."""
    header = {}
    if metadata is not None:
        header["__metadata__"] = metadata
    blob = b""
    for name, dtype_str, shape, data in entries:
        header[name] = {
            "dtype": dtype_str,
            "shape": list(shape),
            "data_offsets": [len(blob), len(blob) + len(data)],
        }
        blob += data
    raw = json.dumps(header, separators=(",", ":")).encode()
    return struct.pack("<Q", len(raw)) + raw + blob


def random_layer(rng: np.random.Generator, name: str, dtype: DType, count: int,
                 specials: bool = False) -> LayerRecord:
    """Random layer data; optionally salt float layers with special patterns."""
    width = WIDTHS[dtype]
    raw = rng.integers(0, 256, size=count * width, dtype=np.uint8)
    if specials and dtype is not DType.RAW8 and count >= 4:
        words = raw.view(np.uint16 if width == 2 else np.uint32)
        if dtype is DType.FP32:
            patterns = [0x7FC00001, 0xFF800000, 0x7F800000, 0x80000000]
        elif dtype is DType.FP16:
            patterns = [0x7E01, 0xFC00, 0x7C00, 0x8000]
        else:  # BF16
            patterns = [0x7FC1, 0xFF80, 0x7F80, 0x8000]
        idx = rng.choice(count, size=min(count, 8), replace=False)
        words[idx] = rng.choice(patterns, size=len(idx))
        raw = words.view(np.uint8)
    return LayerRecord(name, dtype, (count,), raw.tobytes())


def random_model(rng: np.random.Generator, n_layers: int, dtype: DType,
                 max_count: int = 512, specials: bool = False) -> list[LayerRecord]:
    return [
        random_layer(rng, f"layer{i}", dtype, int(rng.integers(0, max_count)), specials)
        for i in range(n_layers)
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
