"""Reverse-mode automatic differentiation over numpy arrays.

A define-by-run tape: every operation returns a node holding its value,
its parents, and a closure that routes the output gradient to them.
Values are float64 arrays; broadcasting is supported and gradients are
summed back down to each parent's shape.
"""

from __future__ import annotations

import numpy as np

from .gaussian import std_normal_cdf, std_normal_pdf

_LOG2 = np.log(2.0)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            # copy: g may alias another node's gradient buffer
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.value.shape:
                self.grad = np.broadcast_to(self.grad, self.value.shape).copy()
        else:
            self.grad += g

    def backward(self):
        """Accumulate d(self)/d(node) into every node of the graph."""
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g * other.value, self.shape))
            other._accumulate(_unbroadcast(g * self.value, other.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value / other.value, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g / other.value, self.shape))
            other._accumulate(
                _unbroadcast(-g * self.value / (other.value * other.value), other.shape)
            )

        out._backward = back
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value @ other.value, (self, other))

        def back(g):
            self._accumulate(g @ other.value.T)
            other._accumulate(self.value.T @ g)

        out._backward = back
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A leaf that never receives gradients of interest."""
    return Tensor(x)


def relu(t: Tensor) -> Tensor:
    out = Tensor(np.maximum(t.value, 0.0), (t,))
    out._backward = lambda g: t._accumulate(g * (t.value > 0.0))
    return out


def softplus(t: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, t.value), (t,))

    def back(g):
        x = t.value
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(x) / (1.0 + np.exp(x)))
        t._accumulate(g * sig)

    out._backward = back
    return out


def exp(t: Tensor) -> Tensor:
    v = np.exp(t.value)
    out = Tensor(v, (t,))
    out._backward = lambda g: t._accumulate(g * v)
    return out


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.value), (t,))
    out._backward = lambda g: t._accumulate(g / t.value)
    return out


def log2(t: Tensor) -> Tensor:
    return log(t) * (1.0 / _LOG2)


def absolute(t: Tensor) -> Tensor:
    out = Tensor(np.abs(t.value), (t,))
    out._backward = lambda g: t._accumulate(g * np.sign(t.value))
    return out


def clip_min(t: Tensor, lo: float) -> Tensor:
    out = Tensor(np.maximum(t.value, lo), (t,))
    out._backward = lambda g: t._accumulate(g * (t.value > lo))
    return out


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(t.value, lo, hi), (t,))
    out._backward = lambda g: t._accumulate(g * ((t.value > lo) & (t.value < hi)))
    return out


def gaussian_cdf(t: Tensor) -> Tensor:
    out = Tensor(std_normal_cdf(t.value), (t,))
    out._backward = lambda g: t._accumulate(g * std_normal_pdf(t.value))
    return out


def stop_gradient(t: Tensor) -> Tensor:
    """Forward identity, backward zero."""
    return Tensor(t.value.copy(), (t,), backward=None)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.where(mask, a.value, b.value), (a, b))

    def back(g):
        a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    out._backward = back
    return out


def gather_channels(table: Tensor, idx: np.ndarray) -> Tensor:
    """out[b, j] = table[j, idx[b, j]] for a (channels, support) table."""
    idx = np.asarray(idx, dtype=np.int64)
    chan = np.broadcast_to(np.arange(table.shape[0]), idx.shape)
    out = Tensor(table.value[chan, idx], (table,))

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, (chan, idx), g)
        table._accumulate(gt)

    out._backward = back
    return out


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax (max-shifted for stability)."""
    shift = constant(logits.value.max(axis=-1, keepdims=True))
    e = exp(logits - shift)
    return e / e.sum(axis=-1, keepdims=True)


def interval_rate_bits(z: Tensor, mu: Tensor, sigma: Tensor, delta: float, p_min: float) -> Tensor:
    """-log2 Gaussian mass on [z - delta/2, z + delta/2]; the training rate term."""
    hi = gaussian_cdf((z - mu + 0.5 * delta) / sigma)
    lo = gaussian_cdf((z - mu - 0.5 * delta) / sigma)
    return -log2(clip_min(hi - lo, p_min))


# -- gradient checking -------------------------------------------------


def numeric_gradient(f, arrays: list[np.ndarray], step: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of a scalar function of arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat_a, flat_g = a.ravel(), g.ravel()
        for i in range(flat_a.size):
            saved = flat_a[i]
            flat_a[i] = saved + step
            fp = f(arrays)
            flat_a[i] = saved - step
            fm = f(arrays)
            flat_a[i] = saved
            flat_g[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(np.ravel(a)))
    nb = float(np.linalg.norm(np.ravel(b)))
    if na == 0.0 and nb == 0.0:
        return 0.0
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(na, nb))
