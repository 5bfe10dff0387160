import numpy as np
import pytest

from fedcompress import codec
from fedcompress.clustering import codebook_for_model, snap
from fedcompress.codec import (
    ClusteredModel,
    bits_per_index,
    compression_ratio_from_counts,
    decode,
    decode_raw,
    encode,
    encode_raw,
    encoded_nbytes,
    model_compression_ratio,
    pack_indices,
    raw_nbytes,
    unpack_indices,
)
from fedcompress.errors import DecodeError
from fedcompress.nn import init_model


def random_clustered(rng, cluster_count):
    n_layers = int(rng.integers(1, 4))
    dims = tuple(int(d) for d in rng.integers(1, 9, size=n_layers + 1))
    codebooks, indices, biases = [], [], []
    for i in range(n_layers):
        codebooks.append(rng.normal(size=cluster_count).astype(np.float32))
        indices.append(rng.integers(0, cluster_count, size=dims[i] * dims[i + 1]).astype(np.uint32))
        biases.append(rng.normal(size=dims[i + 1]).astype(np.float32))
    return ClusteredModel(codebooks, indices, biases, dims)


def clustered_equal(a: ClusteredModel, b: ClusteredModel) -> bool:
    if a.dims != b.dims or a.activation != b.activation:
        return False
    return (
        all(np.array_equal(x, y) for x, y in zip(a.codebooks, b.codebooks))
        and all(np.array_equal(x, y) for x, y in zip(a.indices, b.indices))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


class TestBitPacking:
    def test_bits_per_index_values(self):
        assert [bits_per_index(c) for c in (1, 2, 3, 4, 15, 16, 17, 32)] == [0, 1, 2, 2, 4, 4, 5, 5]

    @pytest.mark.parametrize("bits", [1, 2, 3, 4, 5, 7, 8, 11])
    def test_roundtrip(self, bits):
        rng = np.random.default_rng(bits)
        values = rng.integers(0, 2**bits, size=137).astype(np.uint32)
        packed = pack_indices(values, bits)
        assert len(packed) == (137 * bits + 7) // 8
        assert np.array_equal(unpack_indices(packed, bits, 137), values)

    def test_zero_bits(self):
        assert pack_indices(np.zeros(10, dtype=np.uint32), 0) == b""
        assert np.array_equal(unpack_indices(b"", 0, 10), np.zeros(10, dtype=np.uint32))

    def test_little_endian_within_bytes(self):
        # 4-bit values 0x1, 0x2 pack to one byte with the first value in the low nibble
        packed = pack_indices(np.array([1, 2], dtype=np.uint32), 4)
        assert packed == bytes([0x21])


class TestEncodeDecode:
    def test_size_arithmetic_thousand_weights(self):
        # one layer of 1000 weights at 16 clusters: 500 index bytes + 64 codebook bytes
        cm = ClusteredModel(
            [np.zeros(16, dtype=np.float32)],
            [np.zeros(1000, dtype=np.uint32)],
            [np.zeros(25, dtype=np.float32)],
            (40, 25),
        )
        blob = encode(cm)
        header = 4 + 3 + 4 * 2 + 4  # magic, version/activation/layers, dims, cluster count
        assert len(blob) == header + 12 + 64 + 500 + 100
        assert len(blob) == encoded_nbytes((40, 25), 16)

    def test_single_cluster_has_no_index_payload(self):
        cm = ClusteredModel(
            [np.array([0.5], dtype=np.float32)],
            [np.zeros(12, dtype=np.uint32)],
            [np.zeros(3, dtype=np.float32)],
            (4, 3),
        )
        blob = encode(cm)
        assert len(blob) == encoded_nbytes((4, 3), 1)
        restored = decode(blob)
        assert clustered_equal(cm, restored)

    @pytest.mark.parametrize("cluster_count", [2, 4, 15, 16, 32])
    def test_random_roundtrips(self, cluster_count):
        rng = np.random.default_rng(cluster_count)
        for _ in range(50):
            cm = random_clustered(rng, cluster_count)
            blob = encode(cm)
            assert len(blob) == encoded_nbytes(cm.dims, cluster_count)
            assert clustered_equal(cm, decode(blob))

    def test_snapped_model_roundtrip_reproduces_weights_exactly(self):
        model = init_model((16, 32, 8), seed=1)
        cm = snap(model, codebook_for_model(model, 16, np.random.default_rng(1)))
        restored = decode(encode(cm))
        for a, b in zip(cm.to_model().weights, restored.to_model().weights):
            assert np.array_equal(a, b)

    def test_truncated_stream_reports_offset(self):
        cm = random_clustered(np.random.default_rng(0), 4)
        blob = encode(cm)
        with pytest.raises(DecodeError) as excinfo:
            decode(blob[: len(blob) - 3])
        assert excinfo.value.offset <= len(blob)

    def test_bad_magic_rejected(self):
        cm = random_clustered(np.random.default_rng(0), 4)
        blob = b"XXXX" + encode(cm)[4:]
        with pytest.raises(DecodeError) as excinfo:
            decode(blob)
        assert excinfo.value.offset == 0

    def test_trailing_garbage_rejected(self):
        blob = encode(random_clustered(np.random.default_rng(0), 4)) + b"\x00"
        with pytest.raises(DecodeError):
            decode(blob)

    def test_corrupt_section_length_rejected(self):
        blob = bytearray(encode(random_clustered(np.random.default_rng(0), 4)))
        offset = 4 + 3 + 4 * len(decode(bytes(blob)).dims) + 4  # first section prefix
        blob[offset:offset + 4] = (999999).to_bytes(4, "little")
        with pytest.raises(DecodeError):
            decode(bytes(blob))


class TestRawFormat:
    def test_roundtrip_preserves_float32_values(self):
        model = init_model((5, 9, 4), seed=2)
        restored = decode_raw(encode_raw(model))
        for a, b in zip(model.weights, restored.weights):
            assert np.array_equal(a.astype(np.float32), b.astype(np.float32))

    def test_raw_size_formula(self):
        model = init_model((16, 32, 8), seed=0)
        blob = encode_raw(model)
        assert len(blob) == raw_nbytes(model.dims)
        # payload is four bytes per parameter plus fixed headers and prefixes
        header = 4 + 3 + 4 * 3
        prefixes = 8 * 2
        assert len(blob) == header + prefixes + 4 * model.n_params


class TestCompressionRatio:
    def test_thousand_weight_case(self):
        ratio = compression_ratio_from_counts([1000], 0, 16)
        assert ratio == pytest.approx(32000 / 4512, abs=1e-9)

    def test_huge_codebook_can_lose(self):
        # 32-bit indices plus codebook overhead: compression goes below 1
        ratio = compression_ratio_from_counts([64], 0, 2**31 + 1)
        assert ratio <= 1.0

    def test_model_ratio_uses_all_layers_and_biases(self):
        model = init_model((16, 32, 8), seed=0)
        ratio = model_compression_ratio(model, 16)
        weights = 16 * 32 + 32 * 8
        biases = 40
        raw = 4 * (weights + biases)
        compressed = 2 * 4 * 16 + (16 * 32 * 4 + 7) // 8 + (32 * 8 * 4 + 7) // 8 + 4 * biases
        assert ratio == pytest.approx(raw / compressed, abs=1e-12)

    def test_paper_scale_reference_is_plausible_range(self):
        # large-model reference lands near the mid single digits at 16..32 clusters
        ratio = compression_ratio_from_counts([270_000], 1000, 32)
        assert 5.0 < ratio < 7.0
