"""Grayscale image ingestion: binary PGM (P5) reading/writing and patching.

Input is restricted to 8-bit binary PGM. Samples are normalized to [0, 1]
by dividing the 8-bit code values by 255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError


@dataclass(frozen=True)
class ImagePatch:
    """A rectangle of luma samples in [0, 1], row-major."""

    width: int
    height: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float64).ravel()
        if self.width <= 0 or self.height <= 0:
            raise ValueError("patch dimensions must be positive")
        if s.size != self.width * self.height:
            raise ValueError(
                f"sample count {s.size} != {self.width}x{self.height}"
            )
        if s.size and (s.min() < 0.0 or s.max() > 1.0):
            raise ValueError("samples must lie in [0, 1]")
        object.__setattr__(self, "samples", s)

    def grid(self) -> np.ndarray:
        """Samples as a (height, width) array."""
        return self.samples.reshape(self.height, self.width)

    def to_uint8(self) -> np.ndarray:
        """Back to 8-bit code values, rounding to nearest."""
        return np.clip(np.rint(self.samples * 255.0), 0, 255).astype(np.uint8)


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    # PGM headers are whitespace-separated tokens; '#' starts a comment
    # running to end of line.
    n = len(blob)
    while pos < n:
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated header")
    return blob[start:pos], pos


def read_pgm(path) -> ImagePatch:
    """Read an 8-bit binary PGM (P5) file into normalized samples."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, pos = _next_token(blob, 0)
    if magic != b"P5":
        raise FormatError(f"unsupported format {magic!r}; need binary PGM (P5)")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(blob, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise FormatError(f"non-numeric header field {tok!r}") from exc
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError("non-positive image dimensions")
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported; need 8-bit (255)")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos : pos + width * height]
    if len(payload) < width * height:
        raise FormatError(
            f"payload holds {len(payload)} pixels, header claims {width * height}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return ImagePatch(width, height, pixels / 255.0)


def write_pgm(path, image: ImagePatch):
    """Write samples back out as 8-bit binary PGM."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.to_uint8().tobytes())


def extract_patches(image: ImagePatch, size: int, stride: int) -> list[ImagePatch]:
    """All size x size windows at stride offsets; partial windows dropped."""
    if size > image.width or size > image.height:
        raise ValueError(
            f"patch size {size} exceeds image {image.width}x{image.height}"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = image.grid()
    patches = []
    for top in range(0, image.height - size + 1, stride):
        for left in range(0, image.width - size + 1, stride):
            window = grid[top : top + size, left : left + size]
            patches.append(ImagePatch(size, size, window.copy().ravel()))
    return patches


def patch_grid_count(dim: int, size: int, stride: int) -> int:
    """Number of full windows along one dimension."""
    if size > dim:
        return 0
    return (dim - size) // stride + 1
