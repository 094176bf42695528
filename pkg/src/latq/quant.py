"""Scalar and trellis quantization primitives.

The trellis scheme interleaves two scalar quantizers selected by a
four-state machine driven by index parity, following the dependent-
quantization design used in modern video coding standards:

    state      0     1     2     3
    quantizer  even  even  odd   odd
    next state T[state][parity], T = [[0, 2], [2, 0], [1, 3], [3, 1]]

Decoding replays the same walk from state 0, so the index stream alone
determines the reconstruction. These constants and the scan order
(row-major, one state reset per scanned sequence) are normative for
bitstream compatibility.

All rounding here breaks ties away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy import Q_MAX_DEFAULT, TcqQuantizer, Y_MAX_DEFAULT
from .tensors import LatentTensor, QuantIndices, QuantKind

NUM_STATES = 4
INITIAL_STATE = 0
QUANTIZER_OF_STATE = (
    TcqQuantizer.EVEN,
    TcqQuantizer.EVEN,
    TcqQuantizer.ODD,
    TcqQuantizer.ODD,
)
NEXT_STATE = ((0, 2), (2, 0), (1, 3), (3, 1))


@dataclass(frozen=True)
class QuantizerConfig:
    delta: float
    kind: QuantKind
    q_max: int = Q_MAX_DEFAULT
    y_max: int = Y_MAX_DEFAULT

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")


def round_half_away(x):
    """Nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))
    return out if out.ndim else float(out)


def usq_quantize(z, mu_hat, delta: float, q_max: int = Q_MAX_DEFAULT):
    """Mean-shifted uniform scalar quantization to clamped integer indices."""
    q = round_half_away((np.asarray(z, dtype=np.float64) - mu_hat) / delta)
    q = np.clip(q, -q_max, q_max)
    out = q.astype(np.int64) if np.ndim(q) else int(q)
    return out


def usq_dequantize(q, mu_hat, delta: float):
    """Reconstruction q*delta + mu."""
    out = np.asarray(q, dtype=np.float64) * delta + mu_hat
    return out if out.ndim else float(out)


def tcq_level(q, quantizer: TcqQuantizer, delta: float):
    """Reconstruction level of index q under one trellis quantizer."""
    q = np.asarray(q, dtype=np.float64)
    if quantizer == TcqQuantizer.EVEN:
        out = 2.0 * q * delta
    else:
        out = np.where(q == 0, 0.0, np.sign(q) * (2.0 * np.abs(q) - 1.0) * delta)
    return out if out.ndim else float(out)


def tcq_next_state(state: int, index: int) -> int:
    return NEXT_STATE[state][int(index) & 1]


def tcq_states(indices) -> np.ndarray:
    """State at each position when replaying a flat index sequence from state 0."""
    flat = np.asarray(indices, dtype=np.int64).ravel()
    states = np.empty(flat.size, dtype=np.int64)
    s = INITIAL_STATE
    for i, q in enumerate(flat):
        states[i] = s
        s = NEXT_STATE[s][int(q) & 1]
    return states


def tcq_replay(indices, delta: float, q_max: int = Q_MAX_DEFAULT):
    """Replay a flat index sequence; returns (levels, states)."""
    flat = np.asarray(indices, dtype=np.int64).ravel()
    if flat.size and np.abs(flat).max() > q_max:
        raise ValueError(f"index magnitude exceeds q_max={q_max}")
    states = tcq_states(flat)
    levels = np.empty(flat.size, dtype=np.float64)
    for quant in (TcqQuantizer.EVEN, TcqQuantizer.ODD):
        mask = np.isin(states, [s for s in range(NUM_STATES) if QUANTIZER_OF_STATE[s] == quant])
        levels[mask] = tcq_level(flat[mask], quant, delta)
    return levels, states


def tcq_dequantize(indices: QuantIndices, q_max: int = Q_MAX_DEFAULT) -> LatentTensor:
    """Decoder-side reconstruction of a trellis-coded index tensor.

    The tensor is walked as one flat row-major sequence starting in state
    0. Callers holding several independent sequences (one per patch or
    channel) dequantize them separately.
    """
    if indices.kind != QuantKind.TCQ:
        raise ValueError("tcq_dequantize needs TCQ indices")
    levels, _ = tcq_replay(indices.indices, indices.delta, q_max)
    return LatentTensor(levels.reshape(indices.shape).astype(np.float32))


def tcq_indices_from_levels(levels, delta: float, tol: float = 1e-6) -> np.ndarray:
    """Invert a replayed level sequence back to its indices.

    Walks the state machine and inverts the active quantizer's level map
    at each step; raises if a value is not a valid level of that
    quantizer (within ``tol`` of the exact grid, scaled by delta).
    """
    flat = np.asarray(levels, dtype=np.float64).ravel()
    out = np.empty(flat.size, dtype=np.int64)
    s = INITIAL_STATE
    for i, v in enumerate(flat):
        if QUANTIZER_OF_STATE[s] == TcqQuantizer.EVEN:
            q = round_half_away(v / (2.0 * delta))
            exact = tcq_level(q, TcqQuantizer.EVEN, delta)
        else:
            mag = abs(v) / delta
            q = 0.0 if mag < 0.5 else np.sign(v) * round_half_away((mag + 1.0) / 2.0)
            exact = tcq_level(q, TcqQuantizer.ODD, delta)
        if abs(exact - v) > tol * delta:
            raise ValueError(f"value {v} at position {i} is not a state-{s} level")
        out[i] = int(q)
        s = NEXT_STATE[s][out[i] & 1]
    return out


def hyper_round(y, y_max: int = Y_MAX_DEFAULT):
    """Nearest-integer rounding of the hyperprior, clamped to its support."""
    r = round_half_away(y)
    r = np.clip(r, -y_max, y_max)
    return r.astype(np.int64) if np.ndim(r) else int(r)
