"""Corpus handling: synthetic texture generation, loading, pool files.

The bundled corpus is synthetic (generated by this module, so freely
redistributable): mixtures of filtered noise, gradients, and gratings
that span flat, smooth, and busy content. Real experiments point the CLI
at any directory of 8-bit binary PGM files instead.

Pool file layout: u32 little-endian record count, then per record two
LTNS frames, the input patch (patch_dim,) float32 followed by its
reconstructed latent (latent_dim,) float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError
from .images import ImagePatch, extract_patches, read_pgm, write_pgm
from .manifest import files_digest
from .tensors import ltns_bytes, ltns_from_bytes


def _philox(seed: int, *tags: int) -> np.random.Generator:
    mix = 0
    for t in tags:
        mix = (mix * 0x9E3779B97F4A7C15 + int(t) + 1) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, mix], dtype=np.uint64))
    )


def synthetic_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """One size x size luma field in [0, 1] mixing a few texture families."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))

    # smooth base: low-pass filtered noise
    smooth = ndimage.gaussian_filter(rng.normal(size=(size, size)), rng.uniform(2.0, 6.0))
    img += rng.uniform(0.5, 1.5) * smooth

    # oriented grating
    if rng.random() < 0.8:
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 10.0)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.1, 0.6) * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )

    # linear ramp
    if rng.random() < 0.6:
        gx, gy = rng.uniform(-1, 1, 2)
        img += rng.uniform(0.2, 0.8) * (gx * xx + gy * yy)

    # fine texture
    if rng.random() < 0.5:
        img += rng.uniform(0.02, 0.15) * ndimage.gaussian_filter(
            rng.normal(size=(size, size)), rng.uniform(0.4, 1.2)
        )

    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full((size, size), 0.5)
    return (img - lo) / (hi - lo)


def generate_corpus(directory, count: int, size: int = 64, seed: int = 7) -> list[Path]:
    """Write ``count`` synthetic PGM images; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = _philox(seed, 0x5EED, i)
        field = synthetic_texture(size, rng)
        img = ImagePatch(size, size, field.ravel())
        # snap through 8-bit so files and in-memory pixels agree
        path = directory / f"synth_{i:03d}.pgm"
        write_pgm(path, img)
        paths.append(path)
    return paths


def corpus_paths(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FormatError(f"no .pgm files under {directory}")
    return paths


def load_corpus(directory) -> list[tuple[str, ImagePatch]]:
    return [(p.name, read_pgm(p)) for p in corpus_paths(directory)]


def corpus_patch_matrix(images, patch: int = 8, stride: int | None = None) -> np.ndarray:
    """Stack all patches of all images into one (P, patch*patch) matrix."""
    stride = stride or patch
    rows = []
    for _, img in images:
        for pt in extract_patches(img, patch, stride):
            rows.append(pt.samples)
    return np.stack(rows)


def corpus_digest(directory) -> str:
    return files_digest(corpus_paths(directory))


def write_pool(path, inputs: np.ndarray, latents: np.ndarray):
    """Persist matched (input patch, reconstructed latent) records."""
    if inputs.shape[0] != latents.shape[0]:
        raise ValueError("record counts differ")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", inputs.shape[0]))
        for x, z in zip(inputs, latents):
            fh.write(ltns_bytes(np.ascontiguousarray(x, dtype=np.float32)))
            fh.write(ltns_bytes(np.ascontiguousarray(z, dtype=np.float32)))


def read_pool(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError("truncated pool file")
    (count,) = struct.unpack_from("<I", blob, 0)
    pos = 4
    xs, zs = [], []
    for _ in range(count):
        x, pos = ltns_from_bytes(blob, pos)
        z, pos = ltns_from_bytes(blob, pos)
        xs.append(x)
        zs.append(z)
    if pos != len(blob):
        raise FormatError("trailing bytes after pool records")
    if not xs:
        return np.zeros((0, 0), np.float32), np.zeros((0, 0), np.float32)
    return np.stack(xs), np.stack(zs)
