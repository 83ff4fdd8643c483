"""Small fully connected networks with hand-written backward passes, optimizers and LR schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

RELU = "relu"
IDENTITY = "identity"


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = RELU


@dataclass
class Mlp:
    """Stack of affine layers.

    Activations are indexed a_0 (input) .. a_L (output). A skip link ``(i, j)``
    adds a_i onto a_j right after layer j-1 has been applied, so widths must agree.
    """

    layers: list[Layer]
    skips: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        widths = self.widths
        for l in range(len(self.layers)):
            W, b = self.layers[l].weight, self.layers[l].bias
            if W.shape != (widths[l], b.shape[0]):
                raise ShapeMismatch(f"layer {l}: weight {W.shape} does not chain")
        for i, j in self.skips:
            if not 0 <= i < j <= len(self.layers) or widths[i] != widths[j]:
                raise ShapeMismatch(f"skip {i}->{j} incompatible with widths {widths}")

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].weight.shape[0]] + [ly.weight.shape[1] for ly in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for ly in self.layers:
            out += [ly.weight, ly.bias]
        return out

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers], list(self.skips))


def init_mlp(sizes: list[int], seed, *, skips=(), final_activation=IDENTITY, zero_last=False) -> Mlp:
    """He-initialized ReLU stack; the final layer uses ``final_activation``."""
    rng = np.random.default_rng(seed)
    layers = []
    for l, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = l == len(sizes) - 2
        act = final_activation if last else RELU
        scale = math.sqrt(2.0 / a) if act == RELU else math.sqrt(1.0 / a)
        W = np.zeros((a, b)) if (last and zero_last) else rng.normal(0.0, scale, (a, b))
        layers.append(Layer(W, np.zeros(b), act))
    return Mlp(layers, list(skips))


def mlp_forward(mlp: Mlp, x: np.ndarray, *, return_cache: bool = False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ShapeMismatch(f"input {x.shape} for in_dim {mlp.in_dim}")
    acts = [x]
    pre = []
    for l, ly in enumerate(mlp.layers):
        z = acts[-1] @ ly.weight + ly.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if ly.activation == RELU else z
        for i, j in mlp.skips:
            if j == l + 1:
                a = a + acts[i]
        acts.append(a)
    if return_cache:
        return acts[-1], (acts, pre)
    return acts[-1]


def mlp_backward(mlp: Mlp, x: np.ndarray, output_grad: np.ndarray, cache=None):
    """Gradients of sum(output * output_grad) w.r.t. every parameter and the input.

    Returns ``(param_grads, input_grad)`` with param_grads ordered like ``mlp.params()``.
    ReLU uses subgradient 0 at exactly zero pre-activation.
    """
    if cache is None:
        _, cache = mlp_forward(mlp, x, return_cache=True)
    acts, pre = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ShapeMismatch(f"output_grad {g.shape} vs output {acts[-1].shape}")
    grads_a = [None] * len(acts)
    grads_a[-1] = g
    pgrads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    for l in range(len(mlp.layers) - 1, -1, -1):
        ga = grads_a[l + 1]
        for i, j in mlp.skips:
            if j == l + 1:
                grads_a[i] = ga if grads_a[i] is None else grads_a[i] + ga
        ly = mlp.layers[l]
        dz = ga * (pre[l] > 0.0) if ly.activation == RELU else ga
        pgrads[2 * l] = acts[l].T @ dz
        pgrads[2 * l + 1] = dz.sum(axis=0)
        gin = dz @ ly.weight.T
        grads_a[l] = gin if grads_a[l] is None else grads_a[l] + gin
    return pgrads, grads_a[0]


# --- optimization -------------------------------------------------------------


class Sgd:
    """Plain gradient descent with decoupled weight decay."""

    def __init__(self, weight_decay: float = 1e-2):
        self.weight_decay = weight_decay

    def step(self, params, grads, lr: float) -> None:
        for p, g in zip(params, grads):
            if self.weight_decay and p.ndim > 1:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * g


class AdamW:
    """Adam moments with decoupled weight decay (weights only, not biases)."""

    def __init__(self, weight_decay: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, lr: float) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and p.ndim > 1:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, weight_decay: float):
    if name == "sgd":
        return Sgd(weight_decay)
    if name == "adamw":
        return AdamW(weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")


def one_cycle_lr(step: int, total_steps: int, lr_min: float, lr_max: float, warmup_frac: float = 0.25) -> float:
    """Linear warmup from lr_min to lr_max, then cosine decay back to lr_min."""
    if total_steps <= 1:
        return lr_max
    warm = max(1, int(round(warmup_frac * total_steps)))
    if step < warm:
        return lr_min + (lr_max - lr_min) * step / warm
    frac = min(1.0, (step - warm) / max(1, total_steps - 1 - warm))
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
