"""Carry-less byte-oriented range coder over 16-bit fixed-point CDF tables.

32-bit low/range state with the classic carry-avoiding renormalization:
when the top bytes of low and low+range agree the byte is settled and can
be emitted; when the range underflows below 2^16 it is clipped to the next
2^16 boundary, which keeps every later byte settled as well. The decoder
mirrors the encoder's state transitions exactly, so it consumes exactly
the bytes the encoder produced (a 4-byte flush tail included).

Outputs are deterministic: integer state arithmetic only.
"""

from __future__ import annotations

from bisect import bisect_right

from .entropy import CDF_TOTAL, PmfTable
from .errors import FormatError

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF

FLUSH_BYTES = 4


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self.symbols = 0

    def encode(self, cum: int, freq: int, total: int = CDF_TOTAL):
        if freq <= 0 or cum < 0 or cum + freq > total:
            raise ValueError("invalid frequency interval")
        r = self.range // total
        self.low += r * cum
        self.range = r * freq
        # renormalize: emit settled bytes
        low, rng, out = self.low, self.range, self.out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low, self.range = low, rng
        self.symbols += 1

    def encode_symbol(self, table: PmfTable, symbol: int):
        idx = table.index_of(symbol)
        cdf = table.cdf_list()
        self.encode(cdf[idx], cdf[idx + 1] - cdf[idx])

    def finish(self) -> bytes:
        """Flush and return the payload; empty input gives an empty payload."""
        if self.symbols == 0:
            return b""
        low = self.low
        for _ in range(FLUSH_BYTES):
            self.out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        self.primed = False

    def _read_byte(self) -> int:
        if self.pos >= len(self.data):
            raise FormatError("payload exhausted early")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _prime(self):
        for _ in range(FLUSH_BYTES):
            self.code = ((self.code << 8) | self._read_byte()) & _MASK
        self.primed = True

    def decode_symbol(self, table: PmfTable) -> int:
        if not self.primed:
            self._prime()
        r = self.range // CDF_TOTAL
        cum = ((self.code - self.low) & _MASK) // r
        if cum >= CDF_TOTAL:
            raise FormatError("corrupt stream: cumulative out of range")
        cdf = table.cdf_list()
        idx = bisect_right(cdf, cum) - 1
        self.low += r * cdf[idx]
        self.range = r * (cdf[idx + 1] - cdf[idx])
        low, rng, code = self.low, self.range, self.code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            code = ((code << 8) | self._read_byte()) & _MASK
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low, self.range, self.code = low, rng, code
        return idx - table.q_max


def rc_encode(symbols, tables) -> bytes:
    """Encode a symbol sequence against its per-symbol tables."""
    symbols = list(symbols)
    if len(symbols) != len(tables):
        raise ValueError("one table per symbol required")
    enc = RangeEncoder()
    for s, t in zip(symbols, tables):
        enc.encode_symbol(t, int(s))
    return enc.finish()


def rc_decode(data: bytes, tables) -> list[int]:
    """Exact inverse of rc_encode for the same table sequence."""
    dec = RangeDecoder(data)
    return [dec.decode_symbol(t) for t in tables]


def ideal_codelength_bits(symbols, tables) -> float:
    """Sum of -log2 p under the fixed-point counts actually coded against."""
    return sum(t.exact_bits(int(s)) for s, t in zip(symbols, tables))
