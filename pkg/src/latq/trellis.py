"""Rate-distortion-optimal trellis index selection.

The encoder walks the four-state machine over one scanned sequence and
picks, per coefficient, an index from a small candidate set. Path cost is

    sum_i (z_i - level(q_i, quantizer(s_i)))^2 + lambda_q * bits(q_i)

with bits taken from the floored index pmf of the active quantizer. The
Viterbi recursion finds the cheapest state-consistent path; an exhaustive
enumerator over the same candidate sets serves as the validation oracle.

Equal-cost transitions resolve toward the smaller |index|, then the lower
originating state id, so bitstreams are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy import (
    P_MIN,
    Q_MAX_DEFAULT,
    TcqQuantizer,
    floor_probs,
    tcq_index_masses,
)
from .errors import InstanceTooLarge
from .quant import (
    INITIAL_STATE,
    NEXT_STATE,
    NUM_STATES,
    QUANTIZER_OF_STATE,
    tcq_level,
)
from .tensors import QuantIndices, QuantKind

_INF = float("inf")
_LOG2 = np.log(2.0)

BRUTE_FORCE_MAX_N = 12
BRUTE_FORCE_MAX_CANDIDATES = 4


@dataclass(frozen=True)
class TrellisConfig:
    delta: float
    lambda_q: float
    q_max: int = Q_MAX_DEFAULT
    candidates_per_state: int = 3
    p_min: float = P_MIN

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.lambda_q < 0:
            raise ValueError("lambda_q must be nonnegative")
        if self.candidates_per_state < 1:
            raise ValueError("candidates_per_state must be >= 1")


def _bracket(z: float, quantizer: TcqQuantizer, delta: float) -> tuple[int, int]:
    # indices of the two reconstruction levels enclosing z
    if quantizer == TcqQuantizer.EVEN:
        lo = int(np.floor(z / (2.0 * delta)))
        return lo, lo + 1
    a = abs(z) / delta
    m = int(np.floor((a + 1.0) / 2.0))
    lo, hi = m, m + 1
    if z < 0:
        lo, hi = -hi, -lo
    return lo, hi


def candidate_indices(
    z: float, quantizer: TcqQuantizer, delta: float, q_max: int = Q_MAX_DEFAULT
) -> list[int]:
    """Bracketing pair plus the zero index, deduplicated and clamped."""
    lo, hi = _bracket(float(z), quantizer, delta)
    cands = {max(-q_max, min(q_max, q)) for q in (lo, hi, 0)}
    return sorted(cands, key=lambda q: (abs(q), q))


def candidate_set(
    z: float,
    quantizer: TcqQuantizer,
    delta: float,
    q_max: int,
    size: int,
) -> list[int]:
    """Candidate list resized to ``size``.

    size 3 is the default bracket-plus-zero set. Larger sizes extend with
    the next-nearest levels; smaller sizes keep the levels closest to z
    (ties toward the smaller |index|).
    """
    base = candidate_indices(z, quantizer, delta, q_max)
    if size == 3 or len(base) >= size:
        if len(base) <= size:
            return base
        dist = lambda q: (abs(float(z) - tcq_level(q, quantizer, delta)), abs(q), q)
        return sorted(sorted(base, key=dist)[:size], key=lambda q: (abs(q), q))
    lo, hi = _bracket(float(z), quantizer, delta)
    cands = set(base)
    step = 1
    while len(cands) < size:
        added = False
        for q in (lo - step, hi + step):
            if -q_max <= q <= q_max and len(cands) < size:
                if q not in cands:
                    cands.add(q)
                    added = True
        if not added and (lo - step < -q_max and hi + step > q_max):
            break
        step += 1
    return sorted(cands, key=lambda q: (abs(q), q))


def rate_bit_tables(mu, sigma, cfg: TrellisConfig) -> np.ndarray:
    """-log2 floored index pmf for both quantizers, shape (n, 2, support)."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    out = np.empty((mu.size, 2, 2 * cfg.q_max + 1))
    for quant in (TcqQuantizer.EVEN, TcqQuantizer.ODD):
        masses = tcq_index_masses(mu, sigma, cfg.delta, quant, cfg.q_max)
        out[:, int(quant), :] = -np.log(floor_probs(masses, cfg.p_min)) / _LOG2
    return out


def _step_costs(z, mu, sigma, cfg: TrellisConfig):
    """Per step and state: list of (index, cost increment, next state)."""
    z = np.asarray(z, dtype=np.float64).ravel()
    bits = rate_bit_tables(mu, sigma, cfg)
    steps = []
    for i, zi in enumerate(z):
        per_state = []
        for s in range(NUM_STATES):
            quant = QUANTIZER_OF_STATE[s]
            opts = []
            for q in candidate_set(zi, quant, cfg.delta, cfg.q_max, cfg.candidates_per_state):
                err = zi - tcq_level(q, quant, cfg.delta)
                cost = err * err + cfg.lambda_q * bits[i, int(quant), q + cfg.q_max]
                opts.append((q, cost, NEXT_STATE[s][q & 1]))
            per_state.append(opts)
        steps.append(per_state)
    return steps


def tcq_encode_viterbi(z, mu, sigma, cfg: TrellisConfig) -> QuantIndices:
    """Cheapest state-consistent index sequence for one scanned sequence."""
    z = np.asarray(z, dtype=np.float64)
    shape = z.shape
    mu_f = np.asarray(mu, dtype=np.float64).ravel()
    sigma_f = np.asarray(sigma, dtype=np.float64).ravel()
    if mu_f.size != z.size or sigma_f.size != z.size:
        raise ValueError("parameter arrays must match the latent shape")
    n = z.size
    if n == 0:
        return QuantIndices(np.zeros(shape, dtype=np.int32), QuantKind.TCQ, cfg.delta)

    steps = _step_costs(z, mu_f, sigma_f, cfg)
    # per state: (cost, |q| of last step, originating state) for tie breaks
    best = [(0.0, 0, 0)] + [(_INF, 0, 0)] * (NUM_STATES - 1)
    back: list[list[tuple[int, int] | None]] = []
    for per_state in steps:
        new_best = [(_INF, 0, 0)] * NUM_STATES
        new_back: list[tuple[int, int] | None] = [None] * NUM_STATES
        for s in range(NUM_STATES):
            base = best[s][0]
            if base == _INF:
                continue
            for q, cost, ns in per_state[s]:
                key = (base + cost, abs(q), s)
                if key < new_best[ns]:
                    new_best[ns] = key
                    new_back[ns] = (s, q)
        best = new_best
        back.append(new_back)

    final = min(range(NUM_STATES), key=lambda s: (best[s][0], s))
    if best[final][0] == _INF:
        raise RuntimeError("no feasible trellis path")
    out = np.empty(n, dtype=np.int32)
    s = final
    for i in range(n - 1, -1, -1):
        prev, q = back[i][s]
        out[i] = q
        s = prev
    return QuantIndices(out.reshape(shape), QuantKind.TCQ, cfg.delta)


def tcq_brute_force(z, mu, sigma, cfg: TrellisConfig) -> QuantIndices:
    """Exhaustive enumeration over the same candidate sets.

    Validation oracle only; guarded to tiny instances.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    if n > BRUTE_FORCE_MAX_N:
        raise InstanceTooLarge(f"{n} coefficients > {BRUTE_FORCE_MAX_N}")
    if cfg.candidates_per_state > BRUTE_FORCE_MAX_CANDIDATES:
        raise InstanceTooLarge("too many candidates per state")
    steps = _step_costs(z, np.asarray(mu).ravel(), np.asarray(sigma).ravel(), cfg)

    best_key = None
    best_path = None
    path = [0] * n

    def walk(i: int, state: int, cost: float):
        nonlocal best_key, best_path
        if i == n:
            key = (cost, tuple(abs(q) for q in path), tuple(path))
            if best_key is None or key < best_key:
                best_key = key
                best_path = list(path)
            return
        for q, c, ns in steps[i][state]:
            path[i] = q
            walk(i + 1, ns, cost + c)

    walk(0, INITIAL_STATE, 0.0)
    out = np.asarray(best_path, dtype=np.int32).reshape(z.shape)
    return QuantIndices(out, QuantKind.TCQ, cfg.delta)


def trellis_path_cost(z, mu, sigma, indices: QuantIndices, cfg: TrellisConfig) -> float:
    """Cost of a given index sequence under the trellis objective."""
    z = np.asarray(z, dtype=np.float64).ravel()
    q = np.asarray(indices.indices, dtype=np.int64).ravel()
    bits = rate_bit_tables(mu, sigma, cfg)
    total = 0.0
    s = INITIAL_STATE
    for i, qi in enumerate(q):
        quant = QUANTIZER_OF_STATE[s]
        err = z[i] - tcq_level(int(qi), quant, cfg.delta)
        total += err * err + cfg.lambda_q * bits[i, int(quant), int(qi) + cfg.q_max]
        s = NEXT_STATE[s][int(qi) & 1]
    return float(total)
