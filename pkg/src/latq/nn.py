"""Dense networks over the autodiff engine: specs, parameters, optimizer.

Parameters of a model live in one flat float64 vector; named groups map
to dense-layer stacks or raw arrays through views into that vector, so an
optimizer update through the flat vector is immediately visible to every
forward pass. Persistence is float32 (see the checkpoint format), and
fresh initializations are snapped to float32 values so that a saved and
reloaded model is bit-identical to the one in memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import LatqError

ACTIVATIONS = ("linear", "relu", "softplus")


class TrainingDiverged(LatqError):
    """Raised when gradients or parameters stop being finite."""


@dataclass(frozen=True)
class LayerSpec:
    n_in: int
    n_out: int
    activation: str = "linear"

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("empty network")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"width mismatch: {a.n_out} -> {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def param_count(self) -> int:
        return sum(l.n_in * l.n_out + l.n_out for l in self.layers)

    def describe(self) -> str:
        return ",".join(f"{l.n_in}x{l.n_out}:{l.activation}" for l in self.layers)

    @classmethod
    def parse(cls, text: str) -> "NetSpec":
        layers = []
        for part in text.split(","):
            dims, act = part.split(":")
            n_in, n_out = dims.split("x")
            layers.append(LayerSpec(int(n_in), int(n_out), act))
        return cls(tuple(layers))


def dense(*sizes_and_acts) -> NetSpec:
    """dense((64, 48, 'relu'), (48, 32, 'linear'))"""
    return NetSpec(tuple(LayerSpec(*t) for t in sizes_and_acts))


class ParamStore:
    """Named parameter groups backed by one flat vector.

    A group is either a NetSpec (a stack of dense layers, stored as
    W then b per layer) or a raw array shape.
    """

    def __init__(self, groups: dict[str, NetSpec | tuple[int, ...]]):
        self.groups = dict(groups)
        self._layout: dict[str, list[tuple[slice, tuple[int, ...]]]] = {}
        pos = 0
        for name, g in self.groups.items():
            entries = []
            if isinstance(g, NetSpec):
                for l in g.layers:
                    entries.append((slice(pos, pos + l.n_in * l.n_out), (l.n_in, l.n_out)))
                    pos += l.n_in * l.n_out
                    entries.append((slice(pos, pos + l.n_out), (l.n_out,)))
                    pos += l.n_out
            else:
                n = int(np.prod(g))
                entries.append((slice(pos, pos + n), tuple(g)))
                pos += n
            self._layout[name] = entries
        self.flat = np.zeros(pos, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.flat.size

    def group_slice(self, name: str) -> slice:
        entries = self._layout[name]
        return slice(entries[0][0].start, entries[-1][0].stop)

    def views(self, name: str):
        """Live views into the flat vector for one group."""
        out = [self.flat[s].reshape(shape) for s, shape in self._layout[name]]
        g = self.groups[name]
        if isinstance(g, NetSpec):
            return [(out[2 * i], out[2 * i + 1]) for i in range(len(g.layers))]
        return out[0]

    def group_mask(self, names) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for n in names:
            mask[self.group_slice(n)] = True
        return mask

    def group_bytes(self, name: str) -> bytes:
        return self.flat[self.group_slice(name)].tobytes()

    def copy(self) -> "ParamStore":
        other = ParamStore(self.groups)
        other.flat[:] = self.flat
        return other

    def init(self, seed: int):
        """Glorot-uniform dense layers, zero biases and raw arrays.

        Values are snapped to float32 so persistence round-trips exactly.
        """
        rng = np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(0x1A7)]))
        for name, g in self.groups.items():
            if not isinstance(g, NetSpec):
                continue
            for (ws, wshape), (bs, _) in zip(
                self._layout[name][0::2], self._layout[name][1::2]
            ):
                limit = np.sqrt(6.0 / (wshape[0] + wshape[1]))
                self.flat[ws] = rng.uniform(-limit, limit, self.flat[ws].size)
                self.flat[bs] = 0.0
        self.flat[:] = self.flat.astype(np.float32)

    # -- forward passes --------------------------------------------------

    def run_net(self, name: str, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward (no tape) through one dense group."""
        spec = self.groups[name]
        h = np.asarray(x, dtype=np.float64)
        for (w, b), layer in zip(self.views(name), spec.layers):
            h = h @ w + b
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
            elif layer.activation == "softplus":
                h = np.logaddexp(0.0, h)
        return h


class GraphParams:
    """Autodiff leaves for a set of groups plus grad gathering."""

    def __init__(self, store: ParamStore, names):
        self.store = store
        self.names = list(names)
        self._leaves: dict[str, list[ad.Tensor]] = {}
        for name in self.names:
            arrays = store._layout[name]
            self._leaves[name] = [
                ad.Tensor(store.flat[s].reshape(shape)) for s, shape in arrays
            ]

    def net(self, name: str):
        ts = self._leaves[name]
        return [(ts[2 * i], ts[2 * i + 1]) for i in range(len(ts) // 2)]

    def raw(self, name: str) -> ad.Tensor:
        return self._leaves[name][0]

    def forward(self, name: str, x: ad.Tensor) -> ad.Tensor:
        spec = self.store.groups[name]
        h = x
        for (tw, tb), layer in zip(self.net(name), spec.layers):
            h = h @ tw + tb
            if layer.activation == "relu":
                h = ad.relu(h)
            elif layer.activation == "softplus":
                h = ad.softplus(h)
        return h

    def grad_vector(self) -> np.ndarray:
        g = np.zeros(self.store.size)
        for name in self.names:
            for (s, _), leaf in zip(self.store._layout[name], self._leaves[name]):
                if leaf.grad is not None:
                    g[s] = leaf.grad.ravel()
        return g


class Adam:
    """Adaptive-moment optimizer over the flat parameter vector."""

    def __init__(self, dim: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray, lr: float, mask=None):
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        if mask is None:
            self.m *= self.beta1
            self.m += (1.0 - self.beta1) * grad
            self.v *= self.beta2
            self.v += (1.0 - self.beta2) * grad * grad
            flat -= lr * (self.m / c1) / (np.sqrt(self.v / c2) + self.eps)
            changed = flat
        else:
            g = grad[mask]
            m = self.beta1 * self.m[mask] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[mask] + (1.0 - self.beta2) * g * g
            self.m[mask] = m
            self.v[mask] = v
            changed = flat[mask] - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            flat[mask] = changed
        if not np.all(np.isfinite(changed)):
            raise TrainingDiverged("non-finite parameters")


# Decay protocol used for retraining runs: lr starts at 1e-6 * alpha and
# shrinks by alpha whenever the epoch loss saturates.
RETRAIN_ALPHA = 1.0 / 1.131
RETRAIN_L0 = 1e-6 * RETRAIN_ALPHA


@dataclass
class LrSchedule:
    """Learning rate l0 * alpha^k, decayed on loss saturation.

    Saturation: the epoch-mean loss has not improved by more than
    ``min_improvement`` (relative) for ``patience`` consecutive epochs.
    """

    l0: float
    alpha: float = RETRAIN_ALPHA
    patience: int = 5
    min_improvement: float = 1e-3
    decays: int = 0
    best: float = field(default=float("inf"))
    stale: int = 0

    @property
    def lr(self) -> float:
        return self.l0 * self.alpha ** self.decays

    def epoch_end(self, epoch_loss: float) -> float:
        """Record one epoch's mean loss; returns the lr for the next epoch."""
        if epoch_loss < self.best * (1.0 - self.min_improvement):
            self.best = epoch_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.decays += 1
                self.stale = 0
        return self.lr

    def state(self) -> dict:
        return {
            "l0": self.l0,
            "alpha": self.alpha,
            "patience": self.patience,
            "min_improvement": self.min_improvement,
            "decays": self.decays,
            "best": self.best,
            "stale": self.stale,
        }


def save_param_blob(path, flat: np.ndarray):
    """Raw little-endian float32 parameter blob."""
    with open(path, "wb") as fh:
        fh.write(flat.astype("<f4").tobytes())


def load_param_blob(path, expected: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr = np.frombuffer(blob, dtype="<f4")
    if arr.size != expected:
        raise LatqError(f"parameter blob holds {arr.size} values, model needs {expected}")
    return arr.astype(np.float64)
