"""Dense float64 kernel: activations, LSTM cell, Adam, and finite-difference checks.

Everything here operates on plain numpy arrays in 64-bit precision. Backward
passes are hand-derived per layer; `gradient_check` verifies them against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def sigmoid(x):
    # expit is the overflow-safe 1 / (1 + exp(-x))
    return expit(np.asarray(x, dtype=np.float64))


def gelu(x):
    """Exact erf-based GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def gelu_grad(x):
    """Derivative of exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    pdf = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return cdf + x * pdf


def softmax(x):
    """Numerically stabilized softmax (max subtraction)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def linear(w, b, x):
    """Affine map w @ x + b."""
    w = np.asarray(w)
    x = np.asarray(x)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"linear: weight cols {w.shape[1]} != input dim {x.shape[0]}")
    return w @ x + b


def cross_entropy(probabilities, target_index):
    """Loss -ln p[target] and its gradient w.r.t. the pre-softmax logits.

    The probability is clamped at 1e-12 so a (near-)perfect prediction
    yields a finite loss of ~0. Returns (loss, dlogits) with
    dlogits = p - one_hot(target).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= target_index < p.shape[0]:
        raise ValueError(f"cross_entropy: target {target_index} out of range [0, {p.shape[0]})")
    loss = -np.log(max(p[target_index], 1e-12))
    dlogits = p.copy()
    dlogits[target_index] -= 1.0
    return loss, dlogits


def dropout_mask(shape, rate, rng):
    """Inverted-dropout scale mask: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout; identity at inference or rate 0."""
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        return x.copy()
    return x * dropout_mask(x.shape, rate, rng)


def xavier_uniform(n_in, n_out, rng):
    """Normalized Xavier init: uniform on [-b, b], b = sqrt(6) / sqrt(n_in + n_out)."""
    if n_in < 1 or n_out < 1:
        raise ValueError("xavier_uniform: dimensions must be >= 1")
    bound = np.sqrt(6.0) / np.sqrt(n_in + n_out)
    return rng.uniform(-bound, bound, size=(n_in, n_out))


# ---------------------------------------------------------------------------
# LSTM cell (stacked gate order: input, forget, output, candidate)
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Standard LSTM cell parameters with gates stacked as [i, f, o, g].

    w: (4*hidden, input_dim), u: (4*hidden, hidden), b: (4*hidden,).
    """

    input_dim: int
    hidden_dim: int
    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    @classmethod
    def create(cls, input_dim, hidden_dim, rng):
        """Xavier-initialized weights, zero biases except forget bias +1."""
        w = xavier_uniform(4 * hidden_dim, input_dim, rng)
        u = xavier_uniform(4 * hidden_dim, hidden_dim, rng)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0
        return cls(input_dim, hidden_dim, w, u, b)


def lstm_step(params, x, h_prev, c_prev):
    """One LSTM step; returns (h, c)."""
    h, c, _ = lstm_step_cached(params, x, h_prev, c_prev)
    return h, c


def lstm_step_cached(params, x, h_prev, c_prev):
    """LSTM step that also returns the cache needed for the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    n = params.hidden_dim
    if x.shape[0] != params.input_dim:
        raise ValueError(f"lstm_step: input dim {x.shape[0]} != expected {params.input_dim}")
    if h_prev.shape[0] != n or c_prev.shape[0] != n:
        raise ValueError("lstm_step: state dim mismatch")
    a = params.w @ x + params.u @ h_prev + params.b
    i = sigmoid(a[:n])
    f = sigmoid(a[n:2 * n])
    o = sigmoid(a[2 * n:3 * n])
    g = np.tanh(a[3 * n:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (x, h_prev, c_prev, i, f, o, g, tc)
    return h, c, cache


def lstm_step_backward(params, cache, dh, dc, grads):
    """Backward through one LSTM step.

    Accumulates parameter gradients into `grads` (dict with keys "w", "u",
    "b") and returns (dx, dh_prev, dc_prev).
    """
    x, h_prev, c_prev, i, f, o, g, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    da_i = (dc * g) * i * (1.0 - i)
    da_f = (dc * c_prev) * f * (1.0 - f)
    da_o = (dh * tc) * o * (1.0 - o)
    da_g = (dc * i) * (1.0 - g * g)
    da = np.concatenate([da_i, da_f, da_o, da_g])
    grads["w"] += np.outer(da, x)
    grads["u"] += np.outer(da, h_prev)
    grads["b"] += da
    dx = params.w.T @ da
    dh_prev = params.u.T @ da
    dc_prev = dc * f
    return dx, dh_prev, dc_prev


def lstm_run(params, xs):
    """Run a sequence of input vectors from zero state; returns (h, c, caches)."""
    h = np.zeros(params.hidden_dim)
    c = np.zeros(params.hidden_dim)
    caches = []
    for x in xs:
        h, c, cache = lstm_step_cached(params, x, h, c)
        caches.append(cache)
    return h, c, caches


def lstm_run_backward(params, caches, dh_final, grads):
    """Backprop through time for a sequence run from zero state.

    `dh_final` is the gradient at the last hidden state. Returns the list
    of input gradients, one per timestep (same order as the inputs).
    """
    dh = dh_final
    dc = np.zeros(params.hidden_dim)
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        dx, dh, dc = lstm_step_backward(params, caches[t], dh, dc, grads)
        dxs[t] = dx
    return dxs


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam with bias correction; moments keyed like the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One Adam update over a dict of parameter arrays; returns updated dict."""
    state.step_count += 1
    t = state.step_count
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1 ** t)
        v_hat = state.v[name] / (1.0 - state.beta2 ** t)
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def gradient_check(loss_fn, params, analytic_grads, epsilon=1e-5):
    """Max relative error between analytic gradients and central differences.

    `loss_fn(params) -> scalar` must be deterministic (dropout disabled).
    Relative error per entry: |a - n| / max(1e-8, |a| + |n|).
    """
    worst = 0.0
    for name, p in params.items():
        analytic = np.asarray(analytic_grads[name], dtype=np.float64)
        flat = p.reshape(-1)
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = loss_fn(params)
            flat[idx] = orig - epsilon
            down = loss_fn(params)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
