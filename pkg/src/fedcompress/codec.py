"""Binary model containers and communication-size arithmetic.

Two container formats share one layout: magic, format version byte,
activation tag byte, layer count byte, then layer dims as little-endian
uint32, then per layer a run of sections, each with a 4-byte length prefix.

``FCMP`` (codebook-quantized model), per layer:
    codebook section   cluster_count float32 centroid values
    index section      one index per weight element, bit-packed at
                       ceil(log2 cluster_count) bits each, little-endian
                       within bytes, zero-padded to a byte boundary
    bias section       float32 biases, uncompressed

``FRAW`` (uncompressed model), per layer:
    weight section     float32 weights in row-major order
    bias section       float32 biases

The encoded length of either format is a closed-form function of the layer
dims (and cluster count), exposed below for byte accounting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DecodeError, ShapeError
from .nn import ModelWeights

MAGIC_CLUSTERED = b"FCMP"
MAGIC_RAW = b"FRAW"
FORMAT_VERSION = 1

_ACTIVATION_TAGS = {"relu": 0}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_TAGS.items()}


@dataclass
class ClusteredModel:
    """Codebook-quantized model: the compressed wire and storage form.

    Codebooks and biases are float32 (wire precision), indices uint32.
    Decoding reproduces exactly the weights this object describes.
    """

    codebooks: List[np.ndarray]
    indices: List[np.ndarray]
    biases: List[np.ndarray]
    dims: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        n_layers = len(self.dims) - 1
        if not (len(self.codebooks) == len(self.indices) == len(self.biases) == n_layers):
            raise ShapeError("clustered model layer lists do not match dims")
        counts = {len(cb) for cb in self.codebooks}
        if len(counts) != 1:
            raise ShapeError(f"codebooks must share one cluster count, got {sorted(counts)}")
        for i in range(n_layers):
            expected = self.dims[i] * self.dims[i + 1]
            if self.indices[i].size != expected:
                raise ShapeError(f"layer {i}: {self.indices[i].size} indices for {expected} weights")
            if self.indices[i].size and self.indices[i].max() >= len(self.codebooks[i]):
                raise ShapeError(f"layer {i}: index out of codebook range")
            if self.biases[i].size != self.dims[i + 1]:
                raise ShapeError(f"layer {i}: bias length {self.biases[i].size} != {self.dims[i + 1]}")

    @property
    def cluster_count(self) -> int:
        return len(self.codebooks[0])

    def to_model(self) -> ModelWeights:
        """Decode into float64 training weights (values exactly preserved)."""
        weights, biases = [], []
        for i, (cb, idx, b) in enumerate(zip(self.codebooks, self.indices, self.biases)):
            out_dim, in_dim = self.dims[i + 1], self.dims[i]
            weights.append(cb.astype(np.float64)[idx].reshape(out_dim, in_dim))
            biases.append(b.astype(np.float64))
        return ModelWeights(weights, biases, self.activation)


def bits_per_index(cluster_count: int) -> int:
    """Index width in bits: ceil(log2 C), and 0 for the single-centroid case."""
    if cluster_count < 1:
        raise ShapeError(f"cluster count must be >= 1, got {cluster_count}")
    return int(cluster_count - 1).bit_length()


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    """Bit-pack indices little-endian within bytes, padded to a byte boundary."""
    if bits == 0 or indices.size == 0:
        return b""
    cols = (indices[:, None].astype(np.uint64) >> np.arange(bits, dtype=np.uint64)) & 1
    return np.packbits(cols.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_indices(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_indices`."""
    if bits == 0 or count == 0:
        return np.zeros(count, dtype=np.uint32)
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    cols = raw[: count * bits].reshape(count, bits).astype(np.uint32)
    return cols @ (np.uint32(1) << np.arange(bits, dtype=np.uint32))


def _header(magic: bytes, activation: str, dims: Sequence[int]) -> bytes:
    n_layers = len(dims) - 1
    if n_layers < 1 or n_layers > 255:
        raise ShapeError(f"layer count {n_layers} outside supported range 1..255")
    parts = [magic, struct.pack("<BBB", FORMAT_VERSION, _ACTIVATION_TAGS[activation], n_layers)]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    return b"".join(parts)


def _section(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def encode(clustered: ClusteredModel) -> bytes:
    """Serialize a clustered model to the FCMP container."""
    parts = [_header(MAGIC_CLUSTERED, clustered.activation, clustered.dims)]
    parts.append(struct.pack("<I", clustered.cluster_count))
    bits = bits_per_index(clustered.cluster_count)
    for cb, idx, b in zip(clustered.codebooks, clustered.indices, clustered.biases):
        parts.append(_section(cb.astype("<f4").tobytes()))
        parts.append(_section(pack_indices(idx, bits)))
        parts.append(_section(b.astype("<f4").tobytes()))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated stream while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def section(self, expected: int, what: str) -> bytes:
        at = self.pos
        (length,) = struct.unpack("<I", self.take(4, f"{what} length prefix"))
        if length != expected:
            raise DecodeError(f"{what} has length {length}, expected {expected}", at)
        return self.take(length, what)


def _decode_header(reader: _Reader, magic: bytes) -> Tuple[str, Tuple[int, ...]]:
    at = reader.pos
    if reader.take(4, "magic") != magic:
        raise DecodeError(f"bad magic, expected {magic!r}", at)
    version, act_tag, n_layers = struct.unpack("<BBB", reader.take(3, "header"))
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported format version {version}", at + 4)
    if act_tag not in _ACTIVATION_NAMES:
        raise DecodeError(f"unknown activation tag {act_tag}", at + 5)
    dims = struct.unpack(f"<{n_layers + 1}I", reader.take(4 * (n_layers + 1), "layer dims"))
    return _ACTIVATION_NAMES[act_tag], dims


def decode(data: bytes) -> ClusteredModel:
    """Parse an FCMP container; raises :class:`DecodeError` with the offset."""
    reader = _Reader(data)
    activation, dims = _decode_header(reader, MAGIC_CLUSTERED)
    (cluster_count,) = struct.unpack("<I", reader.take(4, "cluster count"))
    if cluster_count < 1:
        raise DecodeError(f"invalid cluster count {cluster_count}", reader.pos - 4)
    bits = bits_per_index(cluster_count)
    codebooks, indices, biases = [], [], []
    for layer in range(len(dims) - 1):
        count = dims[layer] * dims[layer + 1]
        cb_raw = reader.section(4 * cluster_count, f"layer {layer} codebook")
        idx_raw = reader.section((count * bits + 7) // 8, f"layer {layer} indices")
        b_raw = reader.section(4 * dims[layer + 1], f"layer {layer} biases")
        codebooks.append(np.frombuffer(cb_raw, dtype="<f4").copy())
        idx = unpack_indices(idx_raw, bits, count)
        if idx.size and idx.max() >= cluster_count:
            raise DecodeError(f"layer {layer} index exceeds cluster count", reader.pos)
        indices.append(idx)
        biases.append(np.frombuffer(b_raw, dtype="<f4").copy())
    if reader.pos != len(data):
        raise DecodeError(f"{len(data) - reader.pos} trailing bytes after model", reader.pos)
    return ClusteredModel(codebooks, indices, biases, dims, activation)


def encode_raw(model: ModelWeights) -> bytes:
    """Serialize an uncompressed model to the FRAW container (float32)."""
    parts = [_header(MAGIC_RAW, model.activation, model.dims)]
    for w, b in zip(model.weights, model.biases):
        parts.append(_section(w.astype("<f4").tobytes()))
        parts.append(_section(b.astype("<f4").tobytes()))
    return b"".join(parts)


def decode_raw(data: bytes) -> ModelWeights:
    """Parse an FRAW container into float64 training weights."""
    reader = _Reader(data)
    activation, dims = _decode_header(reader, MAGIC_RAW)
    weights, biases = [], []
    for layer in range(len(dims) - 1):
        out_dim, in_dim = dims[layer + 1], dims[layer]
        w_raw = reader.section(4 * out_dim * in_dim, f"layer {layer} weights")
        b_raw = reader.section(4 * out_dim, f"layer {layer} biases")
        weights.append(np.frombuffer(w_raw, dtype="<f4").astype(np.float64).reshape(out_dim, in_dim))
        biases.append(np.frombuffer(b_raw, dtype="<f4").astype(np.float64))
    if reader.pos != len(data):
        raise DecodeError(f"{len(data) - reader.pos} trailing bytes after model", reader.pos)
    return ModelWeights(weights, biases, activation)


def header_nbytes(dims: Sequence[int]) -> int:
    return 4 + 3 + 4 * len(dims)


def encoded_nbytes(dims: Sequence[int], cluster_count: int) -> int:
    """Exact FCMP container length for the given architecture."""
    bits = bits_per_index(cluster_count)
    total = header_nbytes(dims) + 4
    for i in range(len(dims) - 1):
        count = dims[i] * dims[i + 1]
        total += 12  # three section prefixes
        total += 4 * cluster_count + (count * bits + 7) // 8 + 4 * dims[i + 1]
    return total


def raw_nbytes(dims: Sequence[int]) -> int:
    """Exact FRAW container length for the given architecture."""
    total = header_nbytes(dims)
    for i in range(len(dims) - 1):
        total += 8 + 4 * (dims[i] * dims[i + 1] + dims[i + 1])
    return total


def compression_ratio_from_counts(
    weight_counts: Sequence[int], bias_count: int, cluster_count: int
) -> float:
    """Raw float32 payload size over codebook-encoded payload size.

    Pure payload arithmetic (per-layer codebook + packed indices + biases);
    container headers and section prefixes are excluded, so the ratio
    reflects the parameters themselves.
    """
    bits = bits_per_index(cluster_count)
    raw = 4 * (sum(weight_counts) + bias_count)
    compressed = 4 * bias_count
    for count in weight_counts:
        compressed += 4 * cluster_count + (count * bits + 7) // 8
    return raw / compressed


def model_compression_ratio(model: ModelWeights, cluster_count: int) -> float:
    """Compression ratio achievable for ``model`` at the given cluster count."""
    return compression_ratio_from_counts(
        [w.size for w in model.weights], sum(b.size for b in model.biases), cluster_count
    )
