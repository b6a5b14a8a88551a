"""Small numerical kernel: dense layers, activations, losses, Adam.

Everything is plain numpy and dtype-generic: float32 state during training,
float64 in the unit/property suites. Parameters live in flat
``dict[str, ndarray]`` containers; backward functions return gradient dicts
keyed the same way, so the optimizer is a loop over keys.

Weight convention: an affine map stores ``W`` with shape (out, in) and bias
``b`` with shape (out,); batched inputs are row vectors, ``y = x @ W.T + b``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) Gaussian error linear unit."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(grad_out: np.ndarray, probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    inner = np.sum(grad_out * probs, axis=axis, keepdims=True)
    return probs * (grad_out - inner)


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ W.T + b


def affine_backward(grad_out, x, W):
    """Returns (dx, dW, db); grad_out and x are (batch, out) / (batch, in)."""
    dx = grad_out @ W
    dW = grad_out.T @ x
    db = grad_out.sum(axis=0)
    return dx, dW, db


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over the batch.

    Returns (loss, dloss/dlogits). Labels are integer class indices.
    """
    n = logits.shape[0]
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), labels]))
    probs = softmax(logits, axis=1)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def mse_to_uniform(logits: np.ndarray):
    """Mean squared gap between softmax(logits) and the uniform vector.

    Averaged over categories (per sample) and then over the batch.
    Returns (loss, dloss/dlogits).
    """
    n, c = logits.shape
    probs = softmax(logits, axis=1)
    diff = probs - 1.0 / c
    loss = float(np.mean(np.sum(diff * diff, axis=1) / c))
    dprobs = 2.0 * diff / (c * n)
    dlogits = softmax_backward(dprobs, probs, axis=1)
    return loss, dlogits


def rng_stream(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic named substream of a base seed."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(t) & 0xFFFFFFFF for t in tags]])


def init_affine(rng: np.random.Generator, n_out: int, n_in: int, dtype=np.float32):
    """Gaussian fan-in initialization, zero bias."""
    W = (rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)).astype(dtype)
    b = np.zeros(n_out, dtype=dtype)
    return W, b


class Adam:
    """Adaptive-moment optimizer over a parameter dict.

    Keeps one (m, v, t) slot per parameter name; ``step`` touches only the
    names present in ``grads``, so disjoint parameter groups can be stepped
    independently (the task discriminator's separate step relies on this).
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = params[name]
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
                self._t[name] = 0
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            g = g.astype(p.dtype, copy=False)
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p -= np.asarray(self.lr * mhat / (np.sqrt(vhat) + self.eps), dtype=p.dtype)


def accumulate_grads(total: dict[str, np.ndarray], part: dict[str, np.ndarray], weight: float = 1.0) -> None:
    """total += weight * part, creating entries as needed."""
    for name, g in part.items():
        if name in total:
            total[name] = total[name] + weight * g
        else:
            total[name] = weight * g
