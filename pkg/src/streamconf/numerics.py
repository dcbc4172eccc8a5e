"""Deterministic numeric kernels, seeded initialization and finite differences.

Everything here is a pure function of its inputs. Single precision is used
for benchmark runs, double precision for all gradient and oracle checks.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InvalidMaskError, ShapeError

MASK_NEG = -1e9
LN_EPS = 1e-5


class Rng:
    """Seedable xoshiro256** stream; same seed gives a bit-identical stream."""

    def __init__(self, seed):
        self._state = kernels.seed_state(seed)

    def raw(self, n):
        return kernels.xoshiro_fill(self._state, int(n))

    def uniform01(self, n):
        # 53 high bits -> double in [0, 1)
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform(self, shape, low, high, dtype=np.float64):
        n = int(np.prod(shape)) if shape else 1
        u = self.uniform01(n)
        return (low + (high - low) * u).reshape(shape).astype(dtype)

    def normal(self, shape, dtype=np.float64):
        """Box-Muller on consecutive uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = ((self.raw(m) >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = (self.raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape).astype(dtype)

    def glorot(self, shape, fan_in, fan_out, dtype=np.float64):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(shape, -s, s, dtype)


def matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(x.dtype, copy=False)


def swish(x):
    return x * sigmoid(x)


def swish_backward(x, grad):
    s = sigmoid(x)
    return grad * (s + x * s * (1 - s))


def glu(x):
    if x.shape[-1] % 2:
        raise ShapeError(f"glu: last dimension must be even, got {x.shape}")
    d = x.shape[-1] // 2
    return x[..., :d] * sigmoid(x[..., d:])


def glu_backward(x, grad):
    d = x.shape[-1] // 2
    a, b = x[..., :d], x[..., d:]
    s = sigmoid(b)
    return np.concatenate([grad * s, grad * a * s * (1 - s)], axis=-1)


def masked_softmax(scores, mask):
    """Softmax over the last axis with binary mask; masked entries are exactly 0.

    The mask is applied additively (-1e9) before the max-subtraction so that
    exp underflows to exact zero, then multiplied in to guarantee exact zeros
    regardless of score magnitude.
    """
    t = mask.shape[0]
    if scores.shape[-2:] != (t, t):
        raise ShapeError(f"masked_softmax: scores {scores.shape} vs mask {mask.shape}")
    if not np.all(mask.any(axis=1)):
        raise InvalidMaskError("mask has a fully-masked row")
    m = mask.astype(scores.dtype)
    shifted = scores + (m - 1) * -MASK_NEG
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * m
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs, grad):
    inner = (grad * probs).sum(axis=-1, keepdims=True)
    return probs * (grad - inner)


def layer_norm(x, gamma, beta, eps=LN_EPS):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta


def layer_norm_backward(x, gamma, grad, eps=LN_EPS):
    """Gradients w.r.t. x, gamma and beta for layer_norm."""
    d = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    gxhat = grad * gamma
    gx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
    axes = tuple(range(x.ndim - 1))
    return gx, (grad * xhat).sum(axis=axes), grad.sum(axis=axes)


def depthwise_conv1d(x, kernel):
    """Per-channel conv, stride 1, output length preserved by zero padding."""
    if kernel.shape[1] % 2 == 0:
        raise ConfigError(f"depthwise_conv1d: kernel size must be odd, got {kernel.shape[1]}")
    if x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"depthwise_conv1d: channels {x.shape} vs kernel {kernel.shape}")
    return kernels.depthwise_conv1d(x, kernel)


@dataclass
class LstmWeights:
    """Single LSTM cell; gate order i, f, g, o stacked along the first axis."""
    w_ih: np.ndarray  # [4H, D_in]
    w_hh: np.ndarray  # [4H, H]
    bias: np.ndarray  # [4H]


def init_lstm(rng, d_in, hidden, dtype=np.float64):
    return LstmWeights(
        w_ih=rng.glorot((4 * hidden, d_in), d_in, hidden, dtype),
        w_hh=rng.glorot((4 * hidden, hidden), hidden, hidden, dtype),
        bias=np.zeros(4 * hidden, dtype=dtype),
    )


def lstm_step(x, h, c, weights):
    hid = h.shape[-1]
    if weights.w_ih.shape != (4 * hid, x.shape[-1]):
        raise ShapeError(f"lstm_step: w_ih {weights.w_ih.shape} vs input {x.shape}, hidden {hid}")
    gates = weights.w_ih @ x + weights.w_hh @ h + weights.bias
    i, f, g, o = np.split(gates, 4)
    c_new = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
    h_new = sigmoid(o) * np.tanh(c_new)
    return h_new, c_new


def finite_diff_grad(f, x, step=1e-5):
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = f(x)
        xf[i] = orig - step
        fm = f(x)
        xf[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"finite_diff_grad: non-finite value at coordinate {i}")
        flat[i] = (fp - fm) / (2 * step)
    return grad


def rel_error(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-30)
    return np.abs(a - b).max() / denom
