"""Quality and rate metrics: PSNR, bits per pixel, BD-rate.

BD-rate follows the interpolation variant recorded in every report this
module writes: log10(rate) as a function of PSNR, interpolated with a
monotone piecewise-cubic (PCHIP, no polynomial overshoot), integrated
exactly over the common PSNR interval. The result is the average
relative rate difference in percent; negative values are savings.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import LatqError
from .images import ImagePatch

BD_VARIANT = "pchip-log10rate-exact-integral"


def psnr(x: ImagePatch, x_hat: ImagePatch) -> float:
    """Peak signal-to-noise ratio in dB on the unit sample scale."""
    if (x.width, x.height) != (x_hat.width, x_hat.height):
        raise ValueError("image shapes differ")
    mse = float(np.mean((x.samples - x_hat.samples) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def bits_per_pixel(payload_bytes: int, width: int, height: int) -> float:
    if width * height == 0:
        raise ValueError("empty image")
    return 8.0 * payload_bytes / (width * height)


@dataclass(frozen=True)
class RdPoint:
    lam: float
    rate: float  # bits per pixel
    quality: float  # PSNR dB


class RdCurve:
    """Rate-quality points sorted by rate, validated for interpolation."""

    def __init__(self, points, min_points: int = 4):
        pts = sorted(points, key=lambda p: p.rate)
        if len(pts) < min_points:
            raise LatqError(f"need at least {min_points} points, got {len(pts)}")
        if min_points < 4:
            warnings.warn("curves below 4 points make BD-rate fragile")
        rates = [p.rate for p in pts]
        if any(r <= 0 for r in rates):
            raise LatqError("rates must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise LatqError("rates must be strictly increasing")
        quals = [p.quality for p in pts]
        if any(b <= a for a, b in zip(quals, quals[1:])):
            warnings.warn("PSNR not strictly increasing with rate; curve kept as-is")
        self.points = pts

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def subset(self, indices) -> "RdCurve":
        return RdCurve([self.points[i] for i in indices], min_points=3)

    def high_half(self) -> "RdCurve":
        """Top rate points (upper 3 of a 5-point curve)."""
        n = len(self.points)
        return self.subset(range(max(0, n - 3), n))

    def low_half(self) -> "RdCurve":
        return self.subset(range(min(3, len(self.points))))


def _log_rate_interp(curve: RdCurve) -> PchipInterpolator:
    q = curve.qualities
    if any(b <= a for a, b in zip(q, q[1:])):
        raise LatqError("PSNR must be strictly increasing for BD-rate")
    return PchipInterpolator(q, np.log10(curve.rates))


def bd_rate(test: RdCurve, reference: RdCurve) -> float:
    """Average relative rate difference (percent) at equal PSNR."""
    f_test = _log_rate_interp(test)
    f_ref = _log_rate_interp(reference)
    lo = max(test.qualities.min(), reference.qualities.min())
    hi = min(test.qualities.max(), reference.qualities.max())
    if hi <= lo:
        raise LatqError("PSNR ranges do not overlap")
    span = hi - lo
    avg_diff = (f_test.integrate(lo, hi) - f_ref.integrate(lo, hi)) / span
    return float((10.0 ** avg_diff - 1.0) * 100.0)


def bd_rate_high_low(test: RdCurve, reference: RdCurve) -> tuple[float, float]:
    """BD-rate restricted to the top-3 and bottom-3 rate points."""
    return (
        bd_rate(test.high_half(), reference.high_half()),
        bd_rate(test.low_half(), reference.low_half()),
    )


def write_rd_csv(path, curve: RdCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "bpp", "psnr_db"])
        for p in curve.points:
            w.writerow([repr(p.lam), repr(p.rate), repr(p.quality)])


def read_rd_csv(path, min_points: int = 4) -> RdCurve:
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["lambda", "bpp", "psnr_db"]:
            raise LatqError(f"{path}: expected header lambda,bpp,psnr_db")
        for row in reader:
            if not row:
                continue
            points.append(RdPoint(float(row[0]), float(row[1]), float(row[2])))
    return RdCurve(points, min_points=min_points)


def write_bd_report(path, rows: list[tuple[str, float, float]]):
    """Per-image high/low BD-rates plus an average row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "bd_high_pct", "bd_low_pct"])
        for name, high, low in rows:
            w.writerow([name, f"{high:.4f}", f"{low:.4f}"])
        if rows:
            avg_h = sum(r[1] for r in rows) / len(rows)
            avg_l = sum(r[2] for r in rows) / len(rows)
            w.writerow(["average", f"{avg_h:.4f}", f"{avg_l:.4f}"])


def average_curve(per_image: dict[str, RdCurve]) -> RdCurve:
    """Pointwise average over images (same lambda grid on every curve)."""
    names = sorted(per_image)
    first = per_image[names[0]]
    lams = [p.lam for p in first.points]
    pts = []
    for i, lam in enumerate(lams):
        rates = [per_image[n].points[i].rate for n in names]
        quals = [per_image[n].points[i].quality for n in names]
        pts.append(RdPoint(lam, float(np.mean(rates)), float(np.mean(quals))))
    return RdCurve(pts, min_points=min(4, len(pts)))
