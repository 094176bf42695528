"""Latent tensor and quantization-index containers plus LTNS serialization.

LTNS container layout (all integers little-endian):

    magic   4 bytes  b"LTNS"
    version u8       1
    dtype   u8       0 = float32, 1 = int32
    ndim    u8
    dims    ndim * u32
    payload row-major, 4 bytes per element

The container carries only shape and values. Quantizer metadata (kind,
step size) travels in the bitstream header or a pool manifest, never here.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

LTNS_MAGIC = b"LTNS"
LTNS_VERSION = 1

_DTYPE_F32 = 0
_DTYPE_I32 = 1


class QuantKind(enum.IntEnum):
    """Quantizer family; the integer values are part of the bitstream."""

    USQ = 0
    TCQ = 1


@dataclass(frozen=True)
class LatentTensor:
    """Real-valued latent coefficients, row-major, float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim == 0:
            raise ValueError("latent tensor needs at least one dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent tensor contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __eq__(self, other):
        return (
            isinstance(other, LatentTensor)
            and self.shape == other.shape
            and np.array_equal(
                self.values.view(np.uint32), other.values.view(np.uint32)
            )
        )

    def save(self, path):
        write_ltns(path, self.values)

    @classmethod
    def load(cls, path) -> "LatentTensor":
        arr = read_ltns(path)
        if arr.dtype != np.float32:
            raise FormatError("expected a float32 tensor")
        return cls(arr)


@dataclass(frozen=True)
class QuantIndices:
    """Signed quantization indices with their quantizer kind and step size.

    For TCQ the meaning of each index depends on the state sequence replayed
    from the start of the scan; see the quantizer module.
    """

    indices: np.ndarray
    kind: QuantKind
    delta: float

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int32)
        if idx.ndim == 0:
            raise ValueError("index tensor needs at least one dimension")
        if not self.delta > 0:
            raise ValueError("step size must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "kind", QuantKind(self.kind))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.indices.shape

    def save(self, path):
        write_ltns(path, self.indices)

    @classmethod
    def load(cls, path, kind: QuantKind, delta: float) -> "QuantIndices":
        arr = read_ltns(path)
        if arr.dtype != np.int32:
            raise FormatError("expected an int32 tensor")
        return cls(arr, kind, delta)


def ltns_bytes(array: np.ndarray) -> bytes:
    """Serialize a float32 or int32 array into an LTNS blob."""
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float32:
        dtype = _DTYPE_F32
    elif arr.dtype == np.int32:
        dtype = _DTYPE_I32
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float32 or int32")
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValueError("ndim must be in 1..255")
    if any(d <= 0 or d > 0xFFFFFFFF for d in arr.shape):
        raise ValueError("dimensions must be positive u32 values")
    head = LTNS_MAGIC + struct.pack(
        "<BBB", LTNS_VERSION, dtype, arr.ndim
    ) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return head + little.tobytes(order="C")


def ltns_from_bytes(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one LTNS blob at ``offset``; returns (array, next offset)."""
    if len(blob) - offset < 7:
        raise FormatError("truncated container header")
    if blob[offset : offset + 4] != LTNS_MAGIC:
        raise FormatError("bad magic; not an LTNS container")
    version, dtype, ndim = struct.unpack_from("<BBB", blob, offset + 4)
    if version != LTNS_VERSION:
        raise FormatError(f"unsupported container version {version}")
    if dtype not in (_DTYPE_F32, _DTYPE_I32):
        raise FormatError(f"unknown dtype code {dtype}")
    if ndim == 0:
        raise FormatError("zero-dimensional container")
    pos = offset + 7
    if len(blob) - pos < 4 * ndim:
        raise FormatError("truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, pos)
    pos += 4 * ndim
    if any(d == 0 for d in dims):
        raise FormatError("zero-sized dimension")
    count = int(np.prod(dims, dtype=np.int64))
    nbytes = 4 * count
    if len(blob) - pos < nbytes:
        raise FormatError(
            f"payload holds {(len(blob) - pos) // 4} values, shape needs {count}"
        )
    np_dtype = np.dtype("<f4") if dtype == _DTYPE_F32 else np.dtype("<i4")
    arr = np.frombuffer(blob, dtype=np_dtype, count=count, offset=pos)
    arr = arr.reshape(dims).astype(np_dtype.newbyteorder("="))
    return arr, pos + nbytes


def write_ltns(path, array: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(ltns_bytes(array))


def read_ltns(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr, end = ltns_from_bytes(blob)
    if end != len(blob):
        raise FormatError(f"{len(blob) - end} trailing bytes after payload")
    return arr
