"""Codes, codebooks, bit-packing and the shared binary file formats.

Layouts (all integers little-endian, all reals float32 on disk):

* DPQV  vectors:   magic, u32 N, u32 L, u8 has_labels, 3 zero bytes,
                   N*L reals row-major, then N u32 labels when flagged.
* DPQC  codebook:  magic, u32 M, u32 K, u32 D, M*K*D reals.
* DPQZ  codes:     magic, u32 N, u32 M, u32 K, N packed code records,
                   each record ceil(M*log2(K)/8) bytes.

Within a packed record, index z_1 occupies the lowest log2(K) bits of the
little-endian bit stream, z_2 the next log2(K) bits, and so on; trailing
pad bits are zero.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]

VECTOR_MAGIC = b"DPQV"
CODEBOOK_MAGIC = b"DPQC"
CODES_MAGIC = b"DPQZ"


class FormatError(ValueError):
    """Raised when a binary file does not match its declared layout."""


def is_power_of_two(k: int) -> bool:
    return k > 0 and (k & (k - 1)) == 0


def bits_per_index(K: int) -> int:
    if not is_power_of_two(K):
        raise ValueError(f"K must be a power of two, got {K}")
    return K.bit_length() - 1


def code_nbytes(M: int, K: int) -> int:
    """Bytes in one packed code record."""
    return (M * bits_per_index(K) + 7) // 8


@dataclass(frozen=True)
class LossWeights:
    softmax: float = 1.0
    central: float = 0.5
    gini_batch: float = 0.1
    gini_sample: float = 0.1
    weight_decay: float = 5e-4

    def __post_init__(self):
        for name in ("softmax", "central", "gini_batch", "gini_sample", "weight_decay"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"loss weight {name} must be a finite value >= 0, got {value}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.softmax, self.central, self.gini_batch, self.gini_sample, self.weight_decay)


@dataclass(frozen=True)
class QuantizerConfig:
    """Hyperparameters shared by PQ and DPQ.

    ``D`` defaults to the slice width ``U // M`` where ``U`` is ``front_dim``
    when a front layer is used and ``input_dim`` otherwise.
    """

    M: int
    K: int
    input_dim: int
    num_classes: int = 1
    D: Optional[int] = None
    hidden_dim: int = 128
    front_dim: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    hard_path: bool = True

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("M must be positive")
        if not is_power_of_two(self.K):
            raise ValueError(f"K must be a power of two, got {self.K}")
        if self.input_dim <= 0 or self.num_classes <= 0 or self.hidden_dim <= 0:
            raise ValueError("input_dim, num_classes and hidden_dim must be positive")
        if self.front_dim < 0:
            raise ValueError("front_dim must be >= 0")
        if self.slice_dim <= 0:
            raise ValueError(f"M={self.M} does not fit in {self.encoder_width} units")
        if self.D is not None and self.D <= 0:
            raise ValueError("D must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")

    @property
    def encoder_width(self) -> int:
        return self.front_dim or self.input_dim

    @property
    def slice_dim(self) -> int:
        return self.encoder_width // self.M

    @property
    def centroid_dim(self) -> int:
        return self.D if self.D is not None else self.slice_dim

    @property
    def code_bits(self) -> int:
        return self.M * bits_per_index(self.K)


@dataclass(frozen=True, eq=False)
class Codebook:
    """M centroid matrices stacked as an (M, K, D) array."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.float64)
        if mats.ndim != 3 or 0 in mats.shape:
            raise ValueError(f"codebook must have shape (M, K, D), got {mats.shape}")
        if not np.all(np.isfinite(mats)):
            raise ValueError("codebook contains non-finite entries")
        mats = mats.copy()
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def M(self) -> int:
        return self.matrices.shape[0]

    @property
    def K(self) -> int:
        return self.matrices.shape[1]

    @property
    def D(self) -> int:
        return self.matrices.shape[2]

    def scaled(self, alpha: float) -> "Codebook":
        return Codebook(self.matrices * alpha)


@dataclass(frozen=True)
class CompressedCode:
    """M cluster indices, one per partition."""

    indices: tuple[int, ...]
    K: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        _check_indices(self.indices, self.K)

    @property
    def M(self) -> int:
        return len(self.indices)

    @property
    def packed(self) -> bytes:
        return pack_code(self.indices, self.K)

    @classmethod
    def from_bytes(cls, packed: bytes, M: int, K: int) -> "CompressedCode":
        return cls(tuple(unpack_code(packed, M, K)), K)


@dataclass(frozen=True, eq=False)
class VectorSet:
    """N x L float matrix with optional integer labels."""

    vectors: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vecs.shape}")
        if not np.all(np.isfinite(vecs)):
            raise ValueError("vectors contain non-finite entries")
        vecs = vecs.copy()
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (vecs.shape[0],):
                raise ValueError(
                    f"got {labels.shape[0] if labels.ndim else 0} labels for {vecs.shape[0]} vectors"
                )
            if labels.size and (labels.min() < 0 or not np.issubdtype(labels.dtype, np.integer)):
                raise ValueError("labels must be nonnegative integers")
            labels = labels.astype(np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, idx) -> "VectorSet":
        labels = None if self.labels is None else self.labels[idx]
        return VectorSet(self.vectors[idx], labels)


def _check_indices(indices: Sequence[int], K: int) -> None:
    bits_per_index(K)
    for pos, z in enumerate(indices):
        if not 0 <= z < K:
            raise ValueError(f"code index {z} at position {pos} is outside [0, {K})")


def pack_code(indices: Sequence[int], K: int) -> bytes:
    indices = [int(z) for z in indices]
    _check_indices(indices, K)
    b = bits_per_index(K)
    stream = 0
    for m, z in enumerate(indices):
        stream |= z << (m * b)
    return stream.to_bytes(code_nbytes(len(indices), K), "little")


def unpack_code(packed: bytes, M: int, K: int) -> list[int]:
    b = bits_per_index(K)
    expected = code_nbytes(M, K)
    if len(packed) != expected:
        raise ValueError(f"packed code has {len(packed)} bytes, expected {expected} for M={M}, K={K}")
    stream = int.from_bytes(bytes(packed), "little")
    mask = K - 1
    return [(stream >> (m * b)) & mask for m in range(M)]


def pack_codes(indices: np.ndarray, K: int) -> bytes:
    """Pack an (N, M) index array into N back-to-back records."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 2:
        raise ValueError("indices must be an (N, M) array")
    N, M = idx.shape
    b = bits_per_index(K)
    nbytes = code_nbytes(M, K)
    bad = np.argwhere((idx < 0) | (idx >= K))
    if bad.size:
        row, pos = bad[0]
        raise ValueError(f"code index {idx[row, pos]} at row {row}, position {pos} is outside [0, {K})")
    # bit j of index m lands at stream bit m*b + j
    bits = ((idx[:, :, None] >> np.arange(b)) & 1).astype(np.uint8).reshape(N, M * b)
    padded = np.zeros((N, nbytes * 8), dtype=np.uint8)
    padded[:, : M * b] = bits
    return np.packbits(padded, axis=1, bitorder="little").tobytes()


def unpack_codes(data: bytes, N: int, M: int, K: int) -> np.ndarray:
    b = bits_per_index(K)
    nbytes = code_nbytes(M, K)
    if len(data) != N * nbytes:
        raise ValueError(f"expected {N * nbytes} bytes for {N} codes, got {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(N, nbytes)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, : M * b].reshape(N, M, b)
    return (bits.astype(np.int64) << np.arange(b)).sum(axis=2)


def reconstruct(code: Union[CompressedCode, Sequence[int]], codebook: Codebook) -> np.ndarray:
    """Concatenate the selected centroid of every partition."""
    indices = code.indices if isinstance(code, CompressedCode) else tuple(int(z) for z in code)
    if len(indices) != codebook.M:
        raise ValueError(f"code has {len(indices)} indices but codebook has M={codebook.M}")
    _check_indices(indices, codebook.K)
    return codebook.matrices[np.arange(codebook.M), list(indices)].reshape(-1)


def reconstruct_many(indices: np.ndarray, codebook: Codebook) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != codebook.M:
        raise ValueError(f"indices must have shape (N, {codebook.M})")
    if idx.size and (idx.min() < 0 or idx.max() >= codebook.K):
        raise ValueError(f"code indices must lie in [0, {codebook.K})")
    return codebook.matrices[np.arange(codebook.M), idx].reshape(idx.shape[0], -1)


def compression_ratio(L: int, M: int, K: int) -> float:
    """Ratio of float32 storage of an L-vector to an M*log2(K)-bit code."""
    if L <= 0 or M <= 0:
        raise ValueError("L and M must be positive")
    return 32 * L / (M * bits_per_index(K))


# -- file formats -------------------------------------------------------------


def _read_header(buf: bytes, magic: bytes, fmt: str) -> tuple:
    size = 4 + struct.calcsize(fmt)
    if len(buf) < size or buf[:4] != magic:
        raise FormatError(f"not a {magic.decode()} file")
    return struct.unpack_from(fmt, buf, 4)


def _f32_le(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_vectors(path: PathLike, vs: VectorSet) -> None:
    N, L = vs.vectors.shape
    has_labels = vs.labels is not None
    out = bytearray(VECTOR_MAGIC)
    out += struct.pack("<IIB3x", N, L, int(has_labels))
    out += _f32_le(vs.vectors)
    if has_labels:
        out += np.asarray(vs.labels, dtype="<u4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_vectors(path: PathLike) -> VectorSet:
    buf = Path(path).read_bytes()
    N, L, has_labels, = _read_header(buf, VECTOR_MAGIC, "<IIB3x")
    if has_labels not in (0, 1):
        raise FormatError(f"bad has_labels flag {has_labels}")
    off = 16
    expected = off + 4 * N * L + (4 * N if has_labels else 0)
    if len(buf) != expected:
        raise FormatError(f"DPQV file is {len(buf)} bytes, header implies {expected}")
    vecs = np.frombuffer(buf, dtype="<f4", count=N * L, offset=off).reshape(N, L)
    labels = None
    if has_labels:
        labels = np.frombuffer(buf, dtype="<u4", count=N, offset=off + 4 * N * L).astype(np.int64)
    return VectorSet(vecs.astype(np.float64), labels)


def write_codebook(path: PathLike, cb: Codebook) -> None:
    out = CODEBOOK_MAGIC + struct.pack("<III", cb.M, cb.K, cb.D) + _f32_le(cb.matrices)
    Path(path).write_bytes(out)


def read_codebook(path: PathLike) -> Codebook:
    buf = Path(path).read_bytes()
    M, K, D = _read_header(buf, CODEBOOK_MAGIC, "<III")
    expected = 16 + 4 * M * K * D
    if len(buf) != expected:
        raise FormatError(f"DPQC file is {len(buf)} bytes, header implies {expected}")
    mats = np.frombuffer(buf, dtype="<f4", offset=16).reshape(M, K, D)
    return Codebook(mats.astype(np.float64))


def write_codes(path: PathLike, indices: np.ndarray, K: int) -> None:
    idx = np.asarray(indices, dtype=np.int64)
    N, M = idx.shape
    Path(path).write_bytes(CODES_MAGIC + struct.pack("<III", N, M, K) + pack_codes(idx, K))


def read_codes(path: PathLike) -> tuple[np.ndarray, int]:
    """Return the (N, M) index array and K."""
    buf = Path(path).read_bytes()
    N, M, K = _read_header(buf, CODES_MAGIC, "<III")
    try:
        return unpack_codes(buf[16:], N, M, K), K
    except ValueError as exc:
        raise FormatError(f"DPQZ payload: {exc}") from exc
