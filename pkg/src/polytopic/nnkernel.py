"""Minimal dense-network numerical core.

Everything the neural topic models need and nothing more: parameters with
Adam state, dense layers with softplus/identity activations, batch
normalization, inverted dropout, reparameterized Gaussian sampling, and a
central-finite-difference gradient checker. All tensors are plain numpy
arrays; backward passes are written out analytically layer by layer.

Randomness goes through :class:`RngStream`, a counter-based wrapper over
numpy's Philox generator: the value drawn depends only on (seed, counter),
never on call order elsewhere in the process.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .errors import ModelStateError

DTYPES = {"f32": np.float32, "f64": np.float64}

# Philox counter space is 2**256; giving every draw its own 2**70-sized
# block keeps draws non-overlapping for any realistic request size.
_COUNTER_BLOCK = 1 << 70

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, *tags: int) -> int:
    """Derive a new 64-bit seed from ``seed`` and integer tags (splitmix64)."""
    state = seed & _MASK64
    for tag in tags:
        state = (state + 0x9E3779B97F4A7C15 + (tag & _MASK64)) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        state = z ^ (z >> 31)
    return state


class RngStream:
    """Counter-based random stream: same (seed, counter) => same draw.

    Each draw call consumes one counter slot, so replaying a stream from a
    known counter reproduces the exact sequence regardless of what any
    other stream did in between.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def _next_gen(self) -> Generator:
        gen = Generator(Philox(key=self.seed, counter=self.counter * _COUNTER_BLOCK))
        self.counter += 1
        return gen

    def at(self, counter: int) -> "RngStream":
        """A new stream over the same seed, positioned at ``counter``."""
        return RngStream(self.seed, counter)

    def spawn(self, tag: int) -> "RngStream":
        """Derive an independent stream keyed by ``tag``."""
        return RngStream(mix_seed(self.seed, tag), 0)

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        return self._next_gen().standard_normal(shape).astype(dtype, copy=False)

    def uniform(self, shape, dtype=np.float64) -> np.ndarray:
        return self._next_gen().random(shape).astype(dtype, copy=False)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._next_gen().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_gen().permutation(n)


class Param:
    """A trainable tensor: value, gradient, and Adam moment buffers."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def xavier_uniform(n_in: int, n_out: int, rng: RngStream, dtype=np.float64) -> np.ndarray:
    limit = np.asarray(np.sqrt(6.0 / (n_in + n_out)), dtype=dtype)
    return (rng.uniform((n_in, n_out), dtype=dtype) * 2.0 - 1.0) * limit


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) computed without overflow for large |x|
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient through y = softmax(z): dz = y * (dy - sum(dy * y))."""
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def nll_from_logits(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` under softmax(logits), with its
    gradient w.r.t. the logits (= softmax - onehot)."""
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


class Dense:
    """Fully connected layer y = act(x W + b), activation softplus or identity."""

    def __init__(self, n_in: int, n_out: int, rng: RngStream,
                 activation: str = "identity", bias: bool = True, dtype=np.float64):
        if activation not in ("identity", "softplus"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation
        self.W = Param(xavier_uniform(n_in, n_out, rng, dtype=dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype)) if bias else None
        self._x = None
        self._pre = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.W.shape[0]:
            raise ModelStateError(
                f"shape mismatch: input width {x.shape[-1]}, layer expects {self.W.shape[0]}")
        pre = x @ self.W.value
        if self.b is not None:
            pre = pre + self.b.value
        self._x = x
        self._pre = pre
        return softplus(pre) if self.activation == "softplus" else pre

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise ModelStateError("Dense.backward called before forward")
        dpre = dy * sigmoid(self._pre) if self.activation == "softplus" else dy
        self.W.grad += self._x.T @ dpre
        if self.b is not None:
            self.b.grad += dpre.sum(axis=0)
        return dpre @ self.W.value.T

    def params(self) -> list[Param]:
        return [self.W] if self.b is None else [self.W, self.b]


class BatchNorm:
    """Per-feature batch normalization.

    Training mode normalizes with batch statistics (biased variance) and
    updates running statistics; eval mode normalizes with the running
    statistics. Following the ProdLDA lineage the scale (gamma) is fixed at
    1 by default and only the shift (beta) is learned; both can be turned
    off entirely for a plain whitening layer.
    """

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1,
                 scale: bool = False, shift: bool = True, dtype=np.float64):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(np.ones(width, dtype=dtype)) if scale else None
        self.beta = Param(np.zeros(width, dtype=dtype)) if shift else None
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)
        self._cache = None

    def _gamma_value(self):
        return 1.0 if self.gamma is None else self.gamma.value

    def forward(self, x: np.ndarray, train: bool, update_stats: bool = True) -> np.ndarray:
        if train:
            n = x.shape[0]
            if n < 2:
                raise ModelStateError("batch normalization needs batch size >= 2 in training mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            if update_stats:
                m = self.momentum
                unbiased = var * n / max(n - 1, 1)
                self.running_mean = (1.0 - m) * self.running_mean + m * mean
                self.running_var = (1.0 - m) * self.running_var + m * unbiased
            self._cache = (xhat, inv_std, True)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            self._cache = (xhat, inv_std, False)
        out = xhat * self._gamma_value()
        if self.beta is not None:
            out = out + self.beta.value
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ModelStateError("BatchNorm.backward called before forward")
        xhat, inv_std, was_train = self._cache
        if self.beta is not None:
            self.beta.grad += dy.sum(axis=0)
        if self.gamma is not None:
            self.gamma.grad += (dy * xhat).sum(axis=0)
        dxhat = dy * self._gamma_value()
        if not was_train:
            return dxhat * inv_std
        n = dy.shape[0]
        return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                - xhat * (dxhat * xhat).sum(axis=0))

    def params(self) -> list[Param]:
        out = []
        if self.gamma is not None:
            out.append(self.gamma)
        if self.beta is not None:
            out.append(self.beta)
        return out


class Dropout:
    """Inverted dropout: scales kept units by 1/(1-p) so E[out] = in."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x: np.ndarray, rng: RngStream, train: bool) -> np.ndarray:
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        mask = (rng.uniform(x.shape, dtype=x.dtype) >= self.p).astype(x.dtype)
        self._mask = mask / keep
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask


def sample_gaussian(mu: np.ndarray, log_var: np.ndarray, rng: RngStream):
    """Reparameterized draw z = mu + exp(log_var / 2) * eps, eps ~ N(0, I).

    Returns (z, eps); eps is needed for the analytic backward pass
    (dz/dlog_var = 0.5 * exp(log_var / 2) * eps).
    """
    if mu.shape != log_var.shape:
        raise ModelStateError(f"shape mismatch: mu {mu.shape} vs log_var {log_var.shape}")
    eps = rng.normal(mu.shape, dtype=mu.dtype)
    z = mu + np.exp(0.5 * log_var) * eps
    return z, eps


def adam_step(params: Sequence[Param], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction, in place, then zero the grads."""
    for p in params:
        p.step += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / (1.0 - beta1 ** p.step)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def finite_difference_gradients(loss_fn: Callable[[], float], params: Sequence[Param],
                                eps: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. every param entry.

    ``loss_fn`` must be deterministic (fix any RngStream counters before
    calling). Values are perturbed in place and restored exactly.
    """
    grads = []
    for p in params:
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        grads.append(g.reshape(p.value.shape))
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray],
                       floor: float = 1e-3) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries of all tensors.

    Entries where both gradients are below ``floor`` are compared on an
    absolute scale of ``floor``: central differences carry roundoff noise
    of order machine_eps * |loss| / step, so exact zeros (e.g. a bias
    feeding a batch-norm layer) would otherwise dominate the ratio.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
