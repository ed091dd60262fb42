"""Minimal deterministic neural-network stack.

Three fixed network shapes (policy, skill embedding, inference) share this
code: tanh hidden layers feeding a linear head whose output splits into the
mean and clamped log-std of a diagonal Gaussian. Gradients are hand-derived
reverse mode. Everything is float64 and functional over immutable parameter
snapshots, so identical seeds give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Bounds on the log-std head. The floor prevents degenerate collapse, the
# ceiling prevents entropy-bonus-driven variance explosion.
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# Per-dimension entropy of a unit Gaussian: 0.5 * (1 + log 2pi).
_UNIT_ENTROPY = 0.5 + _HALF_LOG_2PI


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MlpParams:
    """Parameters of one MLP: tanh hidden layers, linear head.

    The head width must be even; forward passes split it into mean and
    log-std halves. Instances are immutable (arrays are write-protected);
    updates return new instances.
    """

    layer_sizes: tuple
    weights: tuple
    biases: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError("layer_sizes must have >= 2 positive entries")
        if sizes[-1] % 2 != 0:
            raise ValueError("head layer must be even (mean and log_std halves)")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match layer_sizes")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (sizes[i], sizes[i + 1]):
                raise ValueError(f"weights[{i}] shape {w.shape} mismatches layers {sizes}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"biases[{i}] shape {b.shape} mismatches layers {sizes}")
            if not np.isfinite(w).all() or not np.isfinite(b).all():
                raise ValueError(f"layer {i} has non-finite parameters")
            ws.append(_frozen_array(w))
            bs.append(_frozen_array(b))
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        """Dimension of the Gaussian head (half the last layer)."""
        return self.layer_sizes[-1] // 2

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class MlpGrads:
    """Parameter-shaped gradients, same layout as MlpParams."""

    weights: tuple
    biases: tuple


@dataclass(frozen=True)
class DiagGaussian:
    """Mean / log-std pair of a diagonal Gaussian.

    log_std is clipped into [LOG_STD_MIN, LOG_STD_MAX] on construction, so
    every instance satisfies the bound by construction.
    """

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        log_std = np.asarray(self.log_std, dtype=np.float64).reshape(-1)
        if mean.shape != log_std.shape:
            raise ValueError("mean and log_std must have equal dims")
        if not np.isfinite(mean).all() or not np.isfinite(log_std).all():
            raise ValueError("DiagGaussian requires finite mean and log_std")
        object.__setattr__(self, "mean", _frozen_array(mean))
        object.__setattr__(self, "log_std", _frozen_array(np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def init_mlp(rng: np.random.Generator, layer_sizes, head_scale: float = 0.01) -> MlpParams:
    """Xavier-scaled Gaussian init; the head layer is shrunk by head_scale.

    A small head keeps initial means near zero and log-std near zero
    (unit sigma), which is where the policy-gradient updates are smooth.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    ws, bs = [], []
    for i in range(len(sizes) - 1):
        scale = math.sqrt(1.0 / sizes[i])
        if i == len(sizes) - 2:
            scale *= head_scale
        ws.append(rng.standard_normal((sizes[i], sizes[i + 1])) * scale)
        bs.append(np.zeros(sizes[i + 1]))
    return MlpParams(sizes, tuple(ws), tuple(bs))


def mlp_forward_batch(params: MlpParams, x: np.ndarray):
    """Batched forward pass.

    Returns (means, log_stds, cache) with shapes (n, d); cache holds the
    layer activations and the raw pre-clip log-std needed by mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} mismatches first layer {params.in_dim}")
    activations = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w + b)
        activations.append(h)
    raw = h @ params.weights[-1] + params.biases[-1]
    d = params.out_dim
    means = raw[:, :d]
    raw_log_stds = raw[:, d:]
    log_stds = np.clip(raw_log_stds, LOG_STD_MIN, LOG_STD_MAX)
    return means, log_stds, (activations, raw_log_stds)


def mlp_forward(params: MlpParams, x: np.ndarray) -> DiagGaussian:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.in_dim:
        raise ValueError(f"input dim {x.shape[0]} mismatches first layer {params.in_dim}")
    means, log_stds, _ = mlp_forward_batch(params, x[None, :])
    return DiagGaussian(means[0], log_stds[0])


def mlp_backward(params: MlpParams, cache, d_mean: np.ndarray, d_log_std: np.ndarray) -> MlpGrads:
    """Reverse-mode gradients, summed over the batch.

    d_mean / d_log_std are the loss gradients w.r.t. the post-clip head
    outputs. The clip contributes zero gradient where it saturates.
    """
    activations, raw_log_stds = cache
    d_mean = np.asarray(d_mean, dtype=np.float64)
    d_log_std = np.asarray(d_log_std, dtype=np.float64)
    if d_mean.shape != d_log_std.shape or d_mean.shape != (activations[0].shape[0], params.out_dim):
        raise ValueError("upstream gradient shape mismatches the head")
    inside = (raw_log_stds > LOG_STD_MIN) & (raw_log_stds < LOG_STD_MAX)
    delta = np.concatenate([d_mean, d_log_std * inside], axis=1)
    n_layers = len(params.weights)
    gws = [None] * n_layers
    gbs = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gws[i] = activations[i].T @ delta
        gbs[i] = delta.sum(axis=0)
        if i > 0:
            # d tanh(u) = 1 - tanh(u)^2, and activations[i] stores tanh(u)
            delta = (delta @ params.weights[i].T) * (1.0 - activations[i] ** 2)
    return MlpGrads(tuple(gws), tuple(gbs))


def backprop(params: MlpParams, x: np.ndarray, d_mean: np.ndarray, d_log_std: np.ndarray) -> MlpGrads:
    """Gradients of a scalar loss for a single input, given the upstream
    gradient w.r.t. the network's DiagGaussian output."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.in_dim:
        raise ValueError(f"input dim {x.shape[0]} mismatches first layer {params.in_dim}")
    _, _, cache = mlp_forward_batch(params, x[None, :])
    d_mean = np.asarray(d_mean, dtype=np.float64).reshape(1, -1)
    d_log_std = np.asarray(d_log_std, dtype=np.float64).reshape(1, -1)
    return mlp_backward(params, cache, d_mean, d_log_std)


# ---------------------------------------------------------------------------
# Diagonal-Gaussian scalar ops and their batched counterparts.

def gaussian_log_prob(g: DiagGaussian, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != g.mean.shape:
        raise ValueError("x dim mismatches the Gaussian")
    u = (x - g.mean) * np.exp(-g.log_std)
    return float(np.sum(-0.5 * u * u - g.log_std - _HALF_LOG_2PI))


def gaussian_entropy(g: DiagGaussian) -> float:
    return float(np.sum(_UNIT_ENTROPY + g.log_std))


def gaussian_sample(g: DiagGaussian, rng: np.random.Generator) -> np.ndarray:
    return g.mean + np.exp(g.log_std) * rng.standard_normal(g.dim)


def log_prob_batch(means, log_stds, xs) -> np.ndarray:
    """Row-wise log N(xs | means, diag exp(log_stds)^2); shapes (n, d) -> (n,)."""
    u = (xs - means) * np.exp(-log_stds)
    return np.sum(-0.5 * u * u - log_stds - _HALF_LOG_2PI, axis=1)


def entropy_batch(log_stds) -> np.ndarray:
    return np.sum(_UNIT_ENTROPY + log_stds, axis=1)


def log_prob_grads(means, log_stds, xs):
    """d log p / d mean and d log p / d log_std, row-wise.

    For u = (x - mean) / sigma: d/d mean = u / sigma, d/d log_std = u^2 - 1.
    """
    inv_std = np.exp(-log_stds)
    u = (xs - means) * inv_std
    return u * inv_std, u * u - 1.0


# ---------------------------------------------------------------------------
# Adaptive-moment optimizer over flat lists of arrays.

@dataclass(frozen=True)
class AdamState:
    """Moment accumulators for one parameter set; updated serially."""

    step: int
    m: tuple
    v: tuple
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be >= 0")
        for acc in (*self.m, *self.v):
            if not np.isfinite(acc).all():
                raise ValueError("optimizer accumulators must be finite")


def _param_arrays(params: MlpParams):
    arrays, names = [], []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays.extend([w, b])
        names.extend([f"weights[{i}]", f"biases[{i}]"])
    return arrays, names


def adam_init(params: MlpParams, lr: float) -> AdamState:
    arrays, _ = _param_arrays(params)
    zeros = tuple(_frozen_array(np.zeros_like(a)) for a in arrays)
    return AdamState(step=0, m=zeros, v=zeros, lr=lr)


def adam_step_arrays(state: AdamState, arrays, grads, names=None):
    """One bias-corrected adaptive-moment update on a list of arrays."""
    if names is None:
        names = [f"tensor[{i}]" for i in range(len(arrays))]
    for g, name in zip(grads, names):
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in {name}")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        a = a - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_arrays.append(a)
        new_m.append(_frozen_array(m))
        new_v.append(_frozen_array(v))
    new_state = AdamState(step=t, m=tuple(new_m), v=tuple(new_v),
                          lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_arrays, new_state


def adam_step(state: AdamState, params: MlpParams, grads: MlpGrads):
    """Adam update of a full MLP; returns (new params, new state)."""
    arrays, names = _param_arrays(params)
    flat_grads = []
    for gw, gb in zip(grads.weights, grads.biases):
        flat_grads.extend([gw, gb])
    new_arrays, new_state = adam_step_arrays(state, arrays, flat_grads, names)
    ws = tuple(new_arrays[0::2])
    bs = tuple(new_arrays[1::2])
    return MlpParams(params.layer_sizes, ws, bs), new_state
