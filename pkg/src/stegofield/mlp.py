"""Small fully-connected decoder with a hand-written backward pass and Adam.

The decoder maps an encoded feature vector to raw outputs; output
nonlinearities (sigmoid for color, clamped exp for density) are applied by
the field layer, so the net itself is affine layers with ReLU between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DENSITY_EXP_CLAMP = 10.0


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths, input to output, e.g. (32, 64, 64, 3). ReLU between layers."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"layer widths must be positive: {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return sum(nin * nout + nout for nin, nout in zip(self.widths, self.widths[1:]))


class MlpParams:
    """Weight matrices (n_in, n_out) and bias vectors, one pair per layer."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @property
    def spec(self) -> MlpSpec:
        widths = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        return MlpSpec(tuple(widths))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(spec: MlpSpec, seed=None, dtype=np.float32) -> MlpParams:
    """He-normal weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for nin, nout in zip(spec.widths, spec.widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / nin), size=(nin, nout)).astype(dtype)
        weights.append(w)
        biases.append(np.zeros(nout, dtype=dtype))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Run the net; returns (raw outputs, tape for the backward pass).

    The tape holds each layer's input and pre-activation.
    """
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input shape {x.shape} does not match net input width "
            f"{params.weights[0].shape[0]}")
    inputs = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            inputs.append(h)
        else:
            h = z
    return h, (inputs, pre)


def mlp_backward(params: MlpParams, tape, grad_output: np.ndarray):
    """Exact reverse-mode gradients for all weights, biases and the input."""
    inputs, pre = tape
    if grad_output.shape != pre[-1].shape:
        raise ValueError(f"grad shape {grad_output.shape} != output shape {pre[-1].shape}")
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    dz = grad_output
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = inputs[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        dh = dz @ params.weights[i].T
        if i > 0:
            dz = dh * (pre[i - 1] > 0)
        else:
            dz = dh
    grads = MlpParams(grad_w, grad_b)
    return grads, dz


@dataclass
class AdamState:
    """First/second-moment buffers and the shared step counter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_arrays(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays])


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float) -> None:
    """One in-place Adam update over a list of parameter arrays."""
    if len(arrays) != len(state.m):
        raise ValueError("optimizer state does not match the parameter list")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v, strict=True):
        if a.shape != g.shape:
            raise ValueError(f"param shape {a.shape} != grad shape {g.shape}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        g = np.square(g)
        g *= 1.0 - ADAM_BETA2
        v += g
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(bc2)
        denom += ADAM_EPS
        np.divide(m, denom, out=denom)
        denom *= lr / bc1
        a -= denom


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.square(diff)))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def sparsity_loss(tables: np.ndarray, beta: float):
    """beta * mean |table features|, and its (dense) gradient."""
    if beta < 0:
        raise ValueError("sparsity weight must be >= 0")
    if beta == 0.0:
        return 0.0, np.zeros_like(tables)
    loss = beta * float(np.mean(np.abs(tables)))
    grad = (beta / tables.size) * np.sign(tables)
    return loss, grad.astype(tables.dtype, copy=False)


def check_finite(value, what: str) -> None:
    """Raise NumericsError if the loss or an array went NaN/Inf."""
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")
