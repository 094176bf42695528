"""Training procedures: surrogate pretraining and quantization finetuning.

Four entry points mirror the experimental protocol:

  pretrain                   end-to-end with a differentiable quantizer
                             surrogate (uniform noise for the scalar
                             quantizer, the two-branch switch for the
                             trellis one)
  dump_latent_pool           offline pass of the true quantizer under a
                             frozen anchor, recording (input, latent
                             reconstruction) pairs
  finetune_decoder           decoder-only distortion training on a pool;
                             bitstreams are untouched by construction
  finetune_hyper_and_decoder hypercoder + decoder training with the
                             latent truly quantized; the mean estimate
                             receives no distortion gradient and is
                             driven by the rate term alone

All randomness is counter-based (Philox keyed on seed/epoch/batch), so
runs with equal configs are bit-identical on one platform.

Distortion is summed squared error on the 8-bit sample scale (code
values 0..255), which puts the bundled Lagrange multipliers in a useful
operating range for bits-per-sample rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import constant, interval_rate_bits, stop_gradient
from .codec import CodecModel
from .entropy import P_MIN, continuous_rate_bits
from .errors import LatqError
from .nn import Adam, GraphParams, LrSchedule, RETRAIN_ALPHA
from .quant import hyper_round, round_half_away, tcq_replay, usq_dequantize
from .tensors import QuantKind
from .trellis import tcq_encode_viterbi

DIST_SCALE = 255.0 ** 2

ALL_GROUPS = ("enc", "dec", "hypenc", "hypdec_mean", "hypdec_dev", "hpmf")
HYPER_GROUPS = ("hypenc", "hpmf", "hypdec_mean", "hypdec_dev", "dec")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    alpha: float = RETRAIN_ALPHA
    patience: int = 5
    min_improvement: float = 1e-3
    seed: int = 0
    # rate argument under true quantization: the dequantized latent
    # (mean-gradient flows through the interval bounds) or the bare
    # index grid (rate drives sigma only)
    rate_on_dequantized: bool = True


@dataclass
class TrainHistory:
    epoch_losses: list
    schedule: LrSchedule

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def philox(seed: int, *tags: int) -> np.random.Generator:
    mix = 0
    for t in tags:
        mix = (mix * 0x9E3779B97F4A7C15 + int(t) + 1) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, mix], dtype=np.uint64))
    )


def _hyper_noisy_bits(gp: GraphParams, model: CodecModel, y_tilde: ad.Tensor) -> ad.Tensor:
    """Differentiable rate of noisy hyperprior values, (B, M) bits.

    Integrates the piecewise-constant density given by the per-channel
    histogram over a unit window around each value.
    """
    masses = ad.softmax_rows(gp.raw("hpmf"))
    v = ad.clip(y_tilde, -model.y_max, model.y_max)
    k = np.floor(v.value + 0.5)
    idx = (k + model.y_max).astype(np.int64)
    f = v - constant(k)
    absf = ad.absolute(f)
    side = idx + np.where(f.value >= 0.0, 1, -1)
    side = np.clip(side, 0, 2 * model.y_max)
    p_center = ad.gather_channels(masses, idx)
    p_side = ad.gather_channels(masses, side)
    prob = (1.0 - absf) * p_center + absf * p_side
    return -ad.log2(ad.clip_min(prob, P_MIN))


def _switch_noise(z: ad.Tensor, delta: float, rng: np.random.Generator) -> ad.Tensor:
    """Two-branch noise surrogate for the trellis quantizer.

    First branch adds noise of double width; the second subtracts one
    step toward zero. Per coefficient the branch closer to the clean
    latent is kept.
    """
    u = rng.uniform(-delta, delta, z.shape)
    z0 = z + constant(u)
    shift = np.sign(z0.value) * delta
    z1 = z0 - constant(shift)
    keep0 = np.abs(z.value - z0.value) <= np.abs(z.value - z1.value)
    return ad.where(keep0, z0, z1)


def _surrogate_loss(gp: GraphParams, model: CodecModel, x: np.ndarray,
                    mode: str, rng: np.random.Generator) -> ad.Tensor:
    xT = constant(x)
    z = gp.forward("enc", xT)
    if mode == "usq_noise":
        z_t = z + constant(rng.uniform(-model.delta / 2, model.delta / 2, z.shape))
    elif mode == "tcq_switch_noise":
        z_t = _switch_noise(z, model.delta, rng)
    else:
        raise ValueError(f"unknown pretraining mode {mode!r}")
    y = gp.forward("hypenc", z)
    y_t = y + constant(rng.uniform(-0.5, 0.5, y.shape))
    mu = gp.forward("hypdec_mean", y_t)
    sigma = gp.forward("hypdec_dev", y_t) + model.sigma_min

    x_hat = gp.forward("dec", z_t)
    err = xT - x_hat
    dist = (err * err).sum(axis=1) * DIST_SCALE
    rate = interval_rate_bits(z_t, mu, sigma, model.delta, P_MIN).sum(axis=1)
    rate = rate + _hyper_noisy_bits(gp, model, y_t).sum(axis=1)
    return (dist + model.lam * rate).mean()


def _true_usq_loss(gp: GraphParams, model: CodecModel, x: np.ndarray,
                   rng: np.random.Generator, rate_on_dequantized: bool) -> ad.Tensor:
    xT = constant(x)
    z = model.latents(x)  # frozen encoder: plain forward, no tape
    y = gp.forward("hypenc", constant(z))
    y_t = y + constant(rng.uniform(-0.5, 0.5, y.shape))
    mu = gp.forward("hypdec_mean", y_t)
    sigma = gp.forward("hypdec_dev", y_t) + model.sigma_min

    q = np.clip(
        round_half_away((z - mu.value) / model.delta), -model.q_max, model.q_max
    )
    # the mean contributes no distortion gradient; reconstruction uses
    # its value only
    z_hat = constant(q * model.delta) + stop_gradient(mu)
    x_hat = gp.forward("dec", z_hat)
    err = xT - x_hat
    dist = (err * err).sum(axis=1) * DIST_SCALE

    if rate_on_dequantized:
        rate_lat = interval_rate_bits(z_hat, mu, sigma, model.delta, P_MIN)
    else:
        rate_lat = interval_rate_bits(
            constant(q * model.delta), constant(np.zeros_like(q)), sigma,
            model.delta, P_MIN,
        )
    rate = rate_lat.sum(axis=1) + _hyper_noisy_bits(gp, model, y_t).sum(axis=1)
    return (dist + model.lam * rate).mean()


def _run(model: CodecModel, n_items: int, cfg: TrainConfig, groups, make_loss) -> TrainHistory:
    """Shared epoch/batch loop: shuffle, build graph, backprop, Adam step."""
    store = model.store
    adam = Adam(store.size)
    mask = store.group_mask(groups)
    if mask.all():
        mask = None
    sched = LrSchedule(cfg.lr, cfg.alpha, cfg.patience, cfg.min_improvement)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = philox(cfg.seed, 0xE0, epoch).permutation(n_items)
        losses = []
        for bi, start in enumerate(range(0, n_items, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            rng = philox(cfg.seed, 0xBA, epoch, bi)
            gp = GraphParams(store, groups)
            loss = make_loss(gp, idx, rng)
            loss.backward()
            adam.step(store.flat, gp.grad_vector(), sched.lr, mask)
            losses.append(float(loss.value))
        epoch_losses.append(float(np.mean(losses)))
        sched.epoch_end(epoch_losses[-1])
    return TrainHistory(epoch_losses=epoch_losses, schedule=sched)


def pretrain(model: CodecModel, patches: np.ndarray, cfg: TrainConfig,
             mode: str | None = None) -> TrainHistory:
    """End-to-end training with the quantizer surrogate matching model.kind."""
    if mode is None:
        mode = "usq_noise" if model.kind == QuantKind.USQ else "tcq_switch_noise"

    def make_loss(gp, idx, rng):
        return _surrogate_loss(gp, model, patches[idx], mode, rng)

    return _run(model, patches.shape[0], cfg, ALL_GROUPS, make_loss)


def dump_latent_pool(model: CodecModel, patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True-quantizer pass under the frozen model: (inputs, latent recon)."""
    z = model.latents(patches)
    y_hat = hyper_round(model.hyper(z), model.y_max).astype(np.float64)
    mu, sigma = model.gaussian_params(y_hat)
    if model.kind == QuantKind.USQ:
        q = np.clip(
            round_half_away((z - mu) / model.delta), -model.q_max, model.q_max
        )
        z_hat = usq_dequantize(q, mu, model.delta)
    else:
        cfg = model.trellis_config()
        z_hat = np.empty_like(z)
        for b in range(z.shape[0]):
            qi = tcq_encode_viterbi(z[b], mu[b], sigma[b], cfg)
            z_hat[b], _ = tcq_replay(qi.indices, model.delta, model.q_max)
    return patches.astype(np.float32), z_hat.astype(np.float32)


def finetune_decoder(anchor: CodecModel, pool_x: np.ndarray, pool_z: np.ndarray,
                     cfg: TrainConfig) -> tuple[CodecModel, TrainHistory]:
    """Distortion-only decoder training on pooled reconstructions.

    Returns a copy; the anchor is untouched. Encoder and hypercoder
    parameters are frozen, so coded streams are byte-identical.
    """
    if pool_x.shape[0] != pool_z.shape[0]:
        raise LatqError("pool inputs and latents disagree in length")
    if pool_z.shape[1] != anchor.latent_dim or pool_x.shape[1] != anchor.patch_dim:
        raise LatqError("pool dimensions do not match the model")
    model = anchor.copy()

    x64 = pool_x.astype(np.float64)
    z64 = pool_z.astype(np.float64)

    def make_loss(gp, idx, rng):
        xT = constant(x64[idx])
        x_hat = gp.forward("dec", constant(z64[idx]))
        err = xT - x_hat
        return ((err * err).sum(axis=1) * DIST_SCALE).mean()

    hist = _run(model, pool_x.shape[0], cfg, ("dec",), make_loss)
    return model, hist


def finetune_hyper_and_decoder(anchor: CodecModel, patches: np.ndarray,
                               cfg: TrainConfig) -> tuple[CodecModel, TrainHistory]:
    """Joint hypercoder+decoder training on truly quantized latents.

    Only supported for scalar quantization: a trellis pool would go stale
    the moment the hypercoder moves, since index selection depends on it.
    """
    if anchor.kind != QuantKind.USQ:
        raise LatqError("unsupported: TCQ hypercoder retrain")
    model = anchor.copy()

    def make_loss(gp, idx, rng):
        return _true_usq_loss(gp, model, patches[idx], rng, cfg.rate_on_dequantized)

    hist = _run(model, patches.shape[0], cfg, HYPER_GROUPS, make_loss)
    return model, hist


def training_rate_bits(model: CodecModel, patches: np.ndarray) -> float:
    """Mean per-patch rate (bits) of the true-quantization objective.

    Deterministic variant used to compare models: hyperprior rounded (not
    noised), latent truly quantized, both terms from the smooth
    estimates.
    """
    z = model.latents(patches)
    y_hat = hyper_round(model.hyper(z), model.y_max).astype(np.float64)
    mu, sigma = model.gaussian_params(y_hat)
    q = np.clip(round_half_away((z - mu) / model.delta), -model.q_max, model.q_max)
    z_hat = usq_dequantize(q, mu, model.delta)
    lat = continuous_rate_bits(z_hat, mu, sigma, model.delta).sum(axis=1)
    pmf = model.hyper_pmf()
    hyp = np.zeros(patches.shape[0])
    for j in range(model.hyper_dim):
        col = y_hat[:, j]
        masses = pmf.masses()[j]
        idx = (col + model.y_max).astype(np.int64)
        hyp += -np.log2(np.maximum(masses[idx], P_MIN))
    return float(np.mean(lat + hyp))
