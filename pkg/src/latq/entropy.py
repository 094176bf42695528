"""Discrete pmf construction and rate estimation for the Gaussian model.

Index probabilities are Gaussian interval masses. The uniform scalar
quantizer operates on a mean-shifted grid, so its cell boundaries live in
(z - mu) space and the mean cancels out of the pmf. The trellis
quantizers keep their reconstruction grids fixed (no mean shift); their
cells are the Voronoi regions of the even/odd level sets and the mean
enters through the integral.

Fixed-point tables: every pmf is floored at ``P_MIN``, renormalized, and
converted to cumulative counts summing to exactly 2^16 with every symbol
at count >= 1, which is what the range coder consumes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .gaussian import std_normal_cdf

P_MIN = 2.0 ** -16
SIGMA_MIN = 1e-4
Q_MAX_DEFAULT = 64
Y_MAX_DEFAULT = 32
CDF_TOTAL = 1 << 16

# Bound standing in for +/- infinity when evaluating interval masses; the
# normal CDF saturates to 0/1 long before this.
_FAR = 1e8
_LOG2 = np.log(2.0)


class TcqQuantizer(enum.IntEnum):
    """The two interleaved scalar quantizers of the trellis design."""

    EVEN = 0  # reconstruction levels 2*q*delta
    ODD = 1   # reconstruction levels 0 and sign(q)*(2|q|-1)*delta


@dataclass(frozen=True)
class GaussianParams:
    """Per-coefficient mean/deviation estimate from the hyperdecoder."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma)):
            raise ValueError("parameters must be finite")
        if self.sigma < SIGMA_MIN:
            raise ValueError(f"sigma {self.sigma} below minimum {SIGMA_MIN}")


@dataclass(frozen=True)
class PmfTable:
    """Floored index pmf plus the fixed-point cumulative counts.

    ``probs[k]`` is the probability of index ``k - q_max``. ``cdf`` has
    one more entry than ``probs``; ``cdf[-1] == 2**16``.
    """

    q_max: int
    probs: np.ndarray
    counts: np.ndarray
    cdf: np.ndarray
    _cdf_list: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_cdf_list", self.cdf.tolist())

    @property
    def support_size(self) -> int:
        return 2 * self.q_max + 1

    def index_of(self, symbol: int) -> int:
        idx = symbol + self.q_max
        if idx < 0 or idx >= self.support_size:
            raise ValueError(f"symbol {symbol} outside support +-{self.q_max}")
        return idx

    def bits(self, symbol: int) -> float:
        """Smooth estimate -log2 p(symbol) from the floored pmf."""
        return float(-np.log(self.probs[self.index_of(symbol)]) / _LOG2)

    def exact_bits(self, symbol: int) -> float:
        """Ideal codelength under the fixed-point counts the coder uses."""
        return float(-np.log2(self.counts[self.index_of(symbol)] / CDF_TOTAL))

    def cdf_list(self) -> list:
        return self._cdf_list


def usq_cell_bounds(delta: float, q_max: int = Q_MAX_DEFAULT) -> np.ndarray:
    """Cell boundaries in (z - mu) space for the mean-shifted scalar grid."""
    inner = (np.arange(-q_max, q_max, dtype=np.float64) + 0.5) * delta
    return np.concatenate(([-np.inf], inner, [np.inf]))


def tcq_cell_bounds(
    quantizer: TcqQuantizer, delta: float, q_max: int = Q_MAX_DEFAULT
) -> np.ndarray:
    """Voronoi cell boundaries in z space for one trellis quantizer."""
    q = np.arange(-q_max, q_max, dtype=np.float64)  # boundary between q and q+1
    if quantizer == TcqQuantizer.EVEN:
        inner = (2.0 * q + 1.0) * delta
    else:
        # midpoint between levels of q and q+1: 2q*delta generally,
        # except the boundaries around the zero level at +-delta/2
        inner = 2.0 * q * delta
        inner[q == 0] = 0.5 * delta
        inner[q == -1] = -0.5 * delta
    return np.concatenate(([-np.inf], inner, [np.inf]))


def interval_masses(bounds: np.ndarray, mu, sigma) -> np.ndarray:
    """Gaussian mass of each cell; broadcasts mu/sigma against leading axes.

    ``bounds`` has S+1 entries including the infinite extremes, so the
    extreme cells absorb the full tails. Returns masses of shape
    ``np.shape(mu) + (S,)`` before any flooring.
    """
    mu = np.asarray(mu, dtype=np.float64)[..., None]
    sigma = np.asarray(sigma, dtype=np.float64)[..., None]
    z = (np.clip(bounds, -_FAR, _FAR) - mu) / sigma
    cdf = std_normal_cdf(z)
    return np.diff(cdf, axis=-1)


def usq_index_masses(sigma, delta: float, q_max: int = Q_MAX_DEFAULT) -> np.ndarray:
    """Raw (pre-flooring) index masses for mean-shifted scalar quantization.

    The mean shift centers every cell on the integer grid, so the result
    depends only on sigma and delta.
    """
    return interval_masses(usq_cell_bounds(delta, q_max), 0.0, sigma)


def tcq_index_masses(
    mu, sigma, delta: float, quantizer: TcqQuantizer, q_max: int = Q_MAX_DEFAULT
) -> np.ndarray:
    """Raw (pre-flooring) index masses for one trellis quantizer."""
    return interval_masses(tcq_cell_bounds(quantizer, delta, q_max), mu, sigma)


def floor_probs(masses: np.ndarray, p_min: float = P_MIN) -> np.ndarray:
    """Lift every mass to at least p_min, then renormalize along the last axis."""
    floored = np.maximum(masses, p_min)
    return floored / floored.sum(axis=-1, keepdims=True)


def fixed_point_counts(probs: np.ndarray) -> np.ndarray:
    """Deterministic conversion to integer counts summing to 2^16, each >= 1.

    Largest-remainder apportionment with index-order tie breaking; rows of
    a 2-D input are converted independently and identically to the 1-D
    case, which keeps encoder- and decoder-side table construction
    bit-identical.
    """
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    rows, n = p.shape
    if n > CDF_TOTAL:
        raise ValueError("support too large for 16-bit counts")
    scaled = p * CDF_TOTAL
    counts = np.floor(scaled).astype(np.int64)
    remainders = scaled - counts
    deficit = CDF_TOTAL - counts.sum(axis=1)
    # order: largest remainder first, then smaller index first
    order = np.lexsort((np.broadcast_to(np.arange(n), p.shape), -remainders), axis=1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(n), p.shape).copy(), 1)
    counts += rank < deficit[:, None]
    # float drift can make the deficit negative; shave the largest entries
    for r in np.nonzero(deficit < 0)[0]:
        need = -int(deficit[r])
        for j in np.argsort(-counts[r], kind="stable")[:need]:
            counts[r, j] -= 1
    # lift empty symbols to one count, stealing from the largest entries
    for r in np.nonzero((counts == 0).any(axis=1))[0]:
        for j in np.nonzero(counts[r] == 0)[0]:
            donor = int(np.argmax(counts[r]))
            counts[r, donor] -= 1
            counts[r, j] = 1
    assert (counts.sum(axis=1) == CDF_TOTAL).all() and (counts >= 1).all()
    return counts if np.asarray(probs).ndim == 2 else counts[0]


def table_from_masses(masses: np.ndarray, q_max: int, p_min: float = P_MIN) -> PmfTable:
    probs = floor_probs(masses, p_min)
    counts = fixed_point_counts(probs)
    cdf = np.concatenate(([0], np.cumsum(counts)))
    return PmfTable(q_max=q_max, probs=probs, counts=counts, cdf=cdf)


def usq_index_pmf(
    params: GaussianParams,
    delta: float,
    q_max: int = Q_MAX_DEFAULT,
    p_min: float = P_MIN,
) -> PmfTable:
    """Index pmf for mean-shifted uniform scalar quantization."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return table_from_masses(usq_index_masses(params.sigma, delta, q_max), q_max, p_min)


def tcq_index_pmf(
    params: GaussianParams,
    delta: float,
    quantizer: TcqQuantizer,
    q_max: int = Q_MAX_DEFAULT,
    p_min: float = P_MIN,
) -> PmfTable:
    """Index pmf for one trellis quantizer (grid not mean-shifted)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    masses = tcq_index_masses(params.mu, params.sigma, delta, quantizer, q_max)
    return table_from_masses(masses, q_max, p_min)


def batch_tables(masses_2d: np.ndarray, q_max: int, p_min: float = P_MIN) -> list[PmfTable]:
    """Build one PmfTable per row; identical results to per-row construction."""
    probs = floor_probs(masses_2d, p_min)
    counts = fixed_point_counts(probs)
    tables = []
    for r in range(probs.shape[0]):
        cdf = np.concatenate(([0], np.cumsum(counts[r])))
        tables.append(PmfTable(q_max=q_max, probs=probs[r], counts=counts[r], cdf=cdf))
    return tables


def continuous_rate_bits(z, mu, sigma, delta: float, p_min: float = P_MIN):
    """-log2 of the Gaussian mass on [z - delta/2, z + delta/2], elementwise.

    This is the training-time rate estimate; the probability is floored at
    p_min so the result is capped at 16 bits. Callers differentiating this
    expression build it from the autodiff primitives instead.
    """
    z = np.asarray(z, dtype=np.float64)
    hi = std_normal_cdf((z - mu + 0.5 * delta) / sigma)
    lo = std_normal_cdf((z - mu - 0.5 * delta) / sigma)
    prob = np.maximum(hi - lo, p_min)
    out = -np.log(prob) / _LOG2
    return out if out.ndim else float(out)


@dataclass
class StaticHyperPmf:
    """Trainable logit histogram over the hyperprior support, one row per channel.

    ``logits`` has shape (channels, 2*y_max + 1); masses are the softmax of
    each row.
    """

    logits: np.ndarray
    y_max: int = Y_MAX_DEFAULT

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != 2 * self.y_max + 1:
            raise ValueError(
                f"logits must be (channels, {2 * self.y_max + 1}), got {self.logits.shape}"
            )

    @property
    def channels(self) -> int:
        return self.logits.shape[0]

    def masses(self) -> np.ndarray:
        e = np.exp(self.logits - self.logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def clamp(self, values):
        return np.clip(values, -self.y_max, self.y_max)

    def table(self, channel: int, p_min: float = P_MIN) -> PmfTable:
        """Coding table for one channel."""
        return table_from_masses(self.masses()[channel], self.y_max, p_min)


def hyper_rate_bits(
    value, pmf: StaticHyperPmf, channel: int, mode: str = "discrete",
    p_min: float = P_MIN,
):
    """Rate estimate for a hyperprior symbol under the static pmf.

    ``discrete`` looks up the mass of the rounded symbol. ``noisy``
    integrates the piecewise-constant density induced by the bin masses
    over a unit window centered on the (real-valued) input, which equals
    the discrete estimate at integers.
    """
    masses = pmf.masses()[channel]
    n = masses.size
    if mode == "discrete":
        idx = int(np.clip(int(round(value)), -pmf.y_max, pmf.y_max)) + pmf.y_max
        prob = masses[idx]
    elif mode == "noisy":
        v = float(np.clip(value, -pmf.y_max, pmf.y_max))
        k = int(np.floor(v + 0.5))  # nearest bin center
        f = v - k
        idx = k + pmf.y_max
        side = idx + (1 if f >= 0 else -1)
        side = min(max(side, 0), n - 1)
        prob = (1.0 - abs(f)) * masses[idx] + abs(f) * masses[side]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(-np.log(max(prob, p_min)) / _LOG2)
