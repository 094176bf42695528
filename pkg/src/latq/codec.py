"""The desk-scale codec model and the end-to-end encode/decode pipeline.

Architecture: dense sub-nets over flattened 8x8 luma patches. The encoder
maps 64 samples to 32 latent coefficients; the hyperencoder compresses
those to 8 hyperprior values from which mean and deviation heads predict
the per-coefficient Gaussian parameters. A trainable static histogram
models the hyperprior itself.

The coded stream carries the hyperprior first: the decoder needs it to
rebuild the latent probability tables. Per image, patches are scanned in
row-major order; within a patch the latent coefficients form one scanned
sequence, and the trellis state machine is reset at each patch boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import Bitstream, frame_bitstream, parse_bitstream
from .entropy import (
    P_MIN,
    SIGMA_MIN,
    StaticHyperPmf,
    TcqQuantizer,
    batch_tables,
    tcq_index_masses,
    usq_index_masses,
)
from .errors import FormatError, LatqError
from .images import ImagePatch, extract_patches
from .manifest import read_manifest, write_manifest
from .nn import NetSpec, ParamStore, dense, load_param_blob, save_param_blob
from .quant import (
    INITIAL_STATE,
    NEXT_STATE,
    QUANTIZER_OF_STATE,
    hyper_round,
    tcq_level,
    tcq_replay,
    usq_dequantize,
    usq_quantize,
)
from .rangecoder import RangeDecoder, RangeEncoder, ideal_codelength_bits, rc_encode
from .tensors import QuantKind
from .trellis import TrellisConfig, tcq_encode_viterbi

PATCH_SIZE = 8
LATENT_DIM = 32
HYPER_DIM = 8

# Trellis rate weight, in units of delta^2. Calibrated by the
# `eval --sweep-lambda-q` sweep on the bundled synthetic corpus (the
# sweep minimizes BD-rate against the scalar-quantizer anchors).
DEFAULT_LAMBDA_Q = 0.3

MODEL_FORMAT = "latq-model"
MODEL_VERSION = 1


def default_groups(patch_dim: int = PATCH_SIZE * PATCH_SIZE,
                   latent_dim: int = LATENT_DIM,
                   hyper_dim: int = HYPER_DIM,
                   y_max: int = 32) -> dict:
    return {
        "enc": dense((patch_dim, 64, "relu"), (64, latent_dim, "linear")),
        "dec": dense((latent_dim, 64, "relu"), (64, patch_dim, "linear")),
        "hypenc": dense((latent_dim, 16, "relu"), (16, hyper_dim, "linear")),
        "hypdec_mean": dense((hyper_dim, 16, "relu"), (16, latent_dim, "linear")),
        "hypdec_dev": dense((hyper_dim, 16, "relu"), (16, latent_dim, "softplus")),
        "hpmf": (hyper_dim, 2 * y_max + 1),
    }


@dataclass
class CodecModel:
    store: ParamStore
    kind: QuantKind
    lam: float
    delta: float = 1.0
    q_max: int = 64
    y_max: int = 32
    sigma_min: float = SIGMA_MIN
    lambda_q: float = DEFAULT_LAMBDA_Q
    seed: int = 0
    patch_size: int = PATCH_SIZE

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def latent_dim(self) -> int:
        return self.store.groups["enc"].n_out

    @property
    def hyper_dim(self) -> int:
        return self.store.groups["hypenc"].n_out

    # -- numpy inference -------------------------------------------------

    def latents(self, x: np.ndarray) -> np.ndarray:
        return self.store.run_net("enc", x)

    def hyper(self, z: np.ndarray) -> np.ndarray:
        return self.store.run_net("hypenc", z)

    def gaussian_params(self, y_values: np.ndarray):
        mu = self.store.run_net("hypdec_mean", y_values)
        sigma = self.store.run_net("hypdec_dev", y_values) + self.sigma_min
        return mu, sigma

    def reconstruct(self, z_hat: np.ndarray) -> np.ndarray:
        return self.store.run_net("dec", z_hat)

    def hyper_pmf(self) -> StaticHyperPmf:
        return StaticHyperPmf(self.store.views("hpmf"), self.y_max)

    def trellis_config(self) -> TrellisConfig:
        return TrellisConfig(
            delta=self.delta,
            lambda_q=self.lambda_q * self.delta * self.delta,
            q_max=self.q_max,
        )

    def copy(self) -> "CodecModel":
        return CodecModel(
            store=self.store.copy(), kind=self.kind, lam=self.lam,
            delta=self.delta, q_max=self.q_max, y_max=self.y_max,
            sigma_min=self.sigma_min, lambda_q=self.lambda_q,
            seed=self.seed, patch_size=self.patch_size,
        )

    # -- persistence -------------------------------------------------------

    def save(self, stem):
        stem = Path(stem)
        fields = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind.name,
            "lambda": repr(self.lam),
            "delta": repr(self.delta),
            "q_max": self.q_max,
            "y_max": self.y_max,
            "sigma_min": repr(self.sigma_min),
            "lambda_q": repr(self.lambda_q),
            "seed": self.seed,
            "patch_size": self.patch_size,
            "param_count": self.store.size,
        }
        for name, g in self.store.groups.items():
            if isinstance(g, NetSpec):
                fields[f"net_{name}"] = g.describe()
            else:
                fields[f"shape_{name}"] = "x".join(str(d) for d in g)
        write_manifest(stem.with_suffix(".manifest"), fields)
        save_param_blob(stem.with_suffix(".params"), self.store.flat)

    @classmethod
    def load(cls, stem) -> "CodecModel":
        stem = Path(stem)
        fields = read_manifest(stem.with_suffix(".manifest"))
        if fields.get("format") != MODEL_FORMAT:
            raise FormatError(f"{stem}: not a model manifest")
        if int(fields.get("version", 0)) != MODEL_VERSION:
            raise FormatError("unsupported model version")
        groups: dict = {}
        for key, val in fields.items():
            if key.startswith("net_"):
                groups[key[4:]] = NetSpec.parse(val)
            elif key.startswith("shape_"):
                groups[key[6:]] = tuple(int(d) for d in val.split("x"))
        store = ParamStore(groups)
        store.flat[:] = load_param_blob(stem.with_suffix(".params"), store.size)
        return cls(
            store=store,
            kind=QuantKind[fields["kind"]],
            lam=float(fields["lambda"]),
            delta=float(fields["delta"]),
            q_max=int(fields["q_max"]),
            y_max=int(fields["y_max"]),
            sigma_min=float(fields["sigma_min"]),
            lambda_q=float(fields["lambda_q"]),
            seed=int(fields["seed"]),
            patch_size=int(fields["patch_size"]),
        )


def build_model(kind: QuantKind, lam: float, seed: int, delta: float = 1.0,
                lambda_q: float = DEFAULT_LAMBDA_Q) -> CodecModel:
    store = ParamStore(default_groups())
    store.init(seed)
    return CodecModel(store=store, kind=kind, lam=lam, delta=delta,
                      lambda_q=lambda_q, seed=seed)


# -- quantization of a latent batch ------------------------------------


def quantize_latents(model: CodecModel, z: np.ndarray, mu: np.ndarray,
                     sigma: np.ndarray) -> np.ndarray:
    """Index array (B, N) under the model's quantizer; one trellis per row."""
    if model.kind == QuantKind.USQ:
        return np.asarray(usq_quantize(z, mu, model.delta, model.q_max))
    cfg = model.trellis_config()
    out = np.empty(z.shape, dtype=np.int64)
    for b in range(z.shape[0]):
        out[b] = tcq_encode_viterbi(z[b], mu[b], sigma[b], cfg).indices
    return out


def dequantize_latents(model: CodecModel, q: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Reconstructed latents from indices; replays the trellis per row."""
    if model.kind == QuantKind.USQ:
        return usq_dequantize(q, mu, model.delta)
    out = np.empty(q.shape, dtype=np.float64)
    for b in range(q.shape[0]):
        out[b], _ = tcq_replay(q[b], model.delta, model.q_max)
    return out


# -- image pipeline ------------------------------------------------------


@dataclass(frozen=True)
class EncodeResult:
    payload: bytes
    bpp: float
    psnr: float
    ideal_bits: float
    hyper_bits: float
    latent_bits: float
    z_hat: np.ndarray
    y_hat: np.ndarray


@dataclass(frozen=True)
class DecodeResult:
    image: ImagePatch
    z_hat: np.ndarray
    y_hat: np.ndarray


def pad_to_multiple(image: ImagePatch, multiple: int) -> ImagePatch:
    """Edge-replicate so both dimensions divide ``multiple``."""
    wpad = (-image.width) % multiple
    hpad = (-image.height) % multiple
    if wpad == 0 and hpad == 0:
        return image
    grid = np.pad(image.grid(), ((0, hpad), (0, wpad)), mode="edge")
    return ImagePatch(image.width + wpad, image.height + hpad, grid.ravel())


def _tile(model: CodecModel, image: ImagePatch) -> tuple[np.ndarray, int, int]:
    p = model.patch_size
    if image.width % p or image.height % p:
        raise ValueError(
            f"image {image.width}x{image.height} not divisible by {p}; pad first"
        )
    rows, cols = image.height // p, image.width // p
    patches = extract_patches(image, p, p)
    x = np.stack([pt.samples for pt in patches])
    return x, rows, cols


def _untile(model: CodecModel, x_hat: np.ndarray, rows: int, cols: int) -> ImagePatch:
    p = model.patch_size
    grid = np.empty((rows * p, cols * p))
    for b in range(rows * cols):
        r, c = divmod(b, cols)
        grid[r * p : (r + 1) * p, c * p : (c + 1) * p] = x_hat[b].reshape(p, p)
    return ImagePatch(cols * p, rows * p, grid.ravel())


def _hyper_tables(model: CodecModel):
    pmf = model.hyper_pmf()
    return [pmf.table(j) for j in range(model.hyper_dim)]


def _usq_tables(model: CodecModel, sigma: np.ndarray):
    masses = usq_index_masses(sigma.ravel(), model.delta, model.q_max)
    return batch_tables(masses, model.q_max)


def _tcq_patch_tables(model: CodecModel, mu_row: np.ndarray, sigma_row: np.ndarray):
    """Per-coefficient tables for both trellis quantizers, one patch."""
    out = []
    for quant in (TcqQuantizer.EVEN, TcqQuantizer.ODD):
        masses = tcq_index_masses(mu_row, sigma_row, model.delta, quant, model.q_max)
        out.append(batch_tables(masses, model.q_max))
    return out  # [even_tables, odd_tables]


def encode_patch_batch(model: CodecModel, x: np.ndarray):
    """Analysis + quantization; returns (y_hat, q, z_hat, mu, sigma)."""
    z = model.latents(x)
    y = model.hyper(z)
    y_hat = hyper_round(y, model.y_max)
    mu, sigma = model.gaussian_params(y_hat.astype(np.float64))
    q = quantize_latents(model, z, mu, sigma)
    z_hat = dequantize_latents(model, q, mu)
    return y_hat, q, z_hat, mu, sigma


def encode_image(model: CodecModel, image: ImagePatch) -> EncodeResult:
    x, rows, cols = _tile(model, image)
    y_hat, q, z_hat, mu, sigma = encode_patch_batch(model, x)
    n_patches = x.shape[0]

    hyper_tabs = _hyper_tables(model)
    hyper_syms = y_hat.ravel().tolist()
    hyper_seq = [hyper_tabs[j] for _ in range(n_patches) for j in range(model.hyper_dim)]
    hyper_payload = rc_encode(hyper_syms, hyper_seq)
    hyper_bits = ideal_codelength_bits(hyper_syms, hyper_seq)

    if model.kind == QuantKind.USQ:
        latent_seq = _usq_tables(model, sigma)
        latent_syms = q.ravel().tolist()
        latent_payload = rc_encode(latent_syms, latent_seq)
        latent_bits = ideal_codelength_bits(latent_syms, latent_seq)
    else:
        enc = RangeEncoder()
        latent_bits = 0.0
        for b in range(n_patches):
            even_odd = _tcq_patch_tables(model, mu[b], sigma[b])
            state = INITIAL_STATE
            for i in range(model.latent_dim):
                table = even_odd[int(QUANTIZER_OF_STATE[state])][i]
                sym = int(q[b, i])
                enc.encode_symbol(table, sym)
                latent_bits += table.exact_bits(sym)
                state = NEXT_STATE[state][sym & 1]
        latent_payload = enc.finish()

    blob = frame_bitstream(Bitstream(
        kind=model.kind,
        delta=model.delta,
        latent_shape=(rows, cols, model.latent_dim),
        hyper_shape=(rows, cols, model.hyper_dim),
        hyper_payload=hyper_payload,
        latent_payload=latent_payload,
    ))

    x_hat = np.clip(model.reconstruct(z_hat), 0.0, 1.0)
    mse = float(np.mean((x - x_hat) ** 2))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    pixels = image.width * image.height
    return EncodeResult(
        payload=blob,
        bpp=8.0 * len(blob) / pixels,
        psnr=psnr,
        ideal_bits=hyper_bits + latent_bits,
        hyper_bits=hyper_bits,
        latent_bits=latent_bits,
        z_hat=z_hat,
        y_hat=y_hat,
    )


def decode_image(model: CodecModel, blob: bytes) -> DecodeResult:
    bs = parse_bitstream(blob)
    if bs.kind != model.kind:
        raise FormatError(
            f"stream is {bs.kind.name} but model expects {model.kind.name}"
        )
    if abs(bs.delta - np.float32(model.delta)) > 0:
        raise FormatError("stream step size does not match the model")
    if len(bs.latent_shape) != 3 or len(bs.hyper_shape) != 3:
        raise FormatError("expected (rows, cols, dim) tensor shapes")
    rows, cols, n = bs.latent_shape
    hrows, hcols, m = bs.hyper_shape
    if (rows, cols) != (hrows, hcols):
        raise FormatError("latent and hyper grids disagree")
    if n != model.latent_dim or m != model.hyper_dim:
        raise FormatError("tensor shapes do not match the model")
    n_patches = rows * cols

    hyper_tabs = _hyper_tables(model)
    hyper_seq = [hyper_tabs[j] for _ in range(n_patches) for j in range(m)]
    dec = RangeDecoder(bs.hyper_payload)
    y_hat = np.array([dec.decode_symbol(t) for t in hyper_seq], dtype=np.int64)
    y_hat = y_hat.reshape(n_patches, m)

    mu, sigma = model.gaussian_params(y_hat.astype(np.float64))

    if model.kind == QuantKind.USQ:
        latent_seq = _usq_tables(model, sigma)
        ldec = RangeDecoder(bs.latent_payload)
        q = np.array([ldec.decode_symbol(t) for t in latent_seq], dtype=np.int64)
        q = q.reshape(n_patches, n)
        z_hat = usq_dequantize(q, mu, model.delta)
    else:
        ldec = RangeDecoder(bs.latent_payload)
        z_hat = np.empty((n_patches, n))
        for b in range(n_patches):
            even_odd = _tcq_patch_tables(model, mu[b], sigma[b])
            state = INITIAL_STATE
            for i in range(n):
                quant = QUANTIZER_OF_STATE[state]
                sym = ldec.decode_symbol(even_odd[int(quant)][i])
                z_hat[b, i] = tcq_level(sym, quant, model.delta)
                state = NEXT_STATE[state][sym & 1]

    x_hat = np.clip(model.reconstruct(z_hat), 0.0, 1.0)
    return DecodeResult(image=_untile(model, x_hat, rows, cols), z_hat=z_hat, y_hat=y_hat)
