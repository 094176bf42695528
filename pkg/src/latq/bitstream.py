"""Bitstream framing for coded tensors.

Header layout (little-endian throughout):

    magic   4 bytes  b"TCQB"
    version u8       1
    kind    u8       0 = USQ, 1 = TCQ
    delta   f32
    latent  u8 ndim, then ndim * u32 dims
    hyper   u8 ndim, then ndim * u32 dims
    hyplen  u32      hyper payload byte count
    hyper payload, then latent payload to end of stream

The hyper payload decodes first; the latent tables depend on it. No
integrity checksum: corruption beyond truncation is not detected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import FormatError
from .tensors import QuantKind

MAGIC = b"TCQB"
VERSION = 1


@dataclass(frozen=True)
class Bitstream:
    kind: QuantKind
    delta: float
    latent_shape: tuple[int, ...]
    hyper_shape: tuple[int, ...]
    hyper_payload: bytes
    latent_payload: bytes


def _pack_shape(shape) -> bytes:
    if not shape or len(shape) > 255:
        raise ValueError("shape must have 1..255 dimensions")
    if any(d <= 0 or d > 0xFFFFFFFF for d in shape):
        raise ValueError("dimensions must be positive u32 values")
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _unpack_shape(blob: bytes, pos: int) -> tuple[tuple[int, ...], int]:
    if len(blob) - pos < 1:
        raise FormatError("truncated header")
    (ndim,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if ndim == 0:
        raise FormatError("zero-dimensional shape")
    if len(blob) - pos < 4 * ndim:
        raise FormatError("truncated shape")
    dims = struct.unpack_from(f"<{ndim}I", blob, pos)
    if any(d == 0 for d in dims):
        raise FormatError("zero-sized dimension")
    return dims, pos + 4 * ndim


def frame_bitstream(bs: Bitstream) -> bytes:
    head = MAGIC + struct.pack("<BBf", VERSION, int(bs.kind), bs.delta)
    head += _pack_shape(bs.latent_shape)
    head += _pack_shape(bs.hyper_shape)
    head += struct.pack("<I", len(bs.hyper_payload))
    return head + bs.hyper_payload + bs.latent_payload


def parse_bitstream(blob: bytes) -> Bitstream:
    if len(blob) < 10:
        raise FormatError("truncated header")
    if blob[:4] != MAGIC:
        raise FormatError("bad magic; not a coded-tensor stream")
    version, kind, delta = struct.unpack_from("<BBf", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}")
    try:
        kind = QuantKind(kind)
    except ValueError as exc:
        raise FormatError(f"unknown quantizer kind {kind}") from exc
    if not delta > 0:
        raise FormatError("nonpositive step size")
    latent_shape, pos = _unpack_shape(blob, 10)
    hyper_shape, pos = _unpack_shape(blob, pos)
    if len(blob) - pos < 4:
        raise FormatError("truncated header")
    (hyplen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) - pos < hyplen:
        raise FormatError("truncated hyper payload")
    hyper_payload = blob[pos : pos + hyplen]
    latent_payload = blob[pos + hyplen :]
    return Bitstream(
        kind=kind,
        delta=float(delta),
        latent_shape=tuple(latent_shape),
        hyper_shape=tuple(hyper_shape),
        hyper_payload=hyper_payload,
        latent_payload=latent_payload,
    )
