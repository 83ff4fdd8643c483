"""Central finite-difference checks for the hand-written backward passes."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .mlp import RELU, mlp_forward


def numeric_gradients(loss_fn: Callable[[], float], params: Sequence[np.ndarray], step: float = 1e-3) -> list[np.ndarray]:
    """Perturb every entry of every parameter in place and restore it afterwards."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out.append(g)
    return out


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """Worst per-tensor ||a - n|| / (||a|| + ||n||); 0 when both are zero."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.linalg.norm(a) + np.linalg.norm(n)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def kink_margin(mlp, x) -> float:
    """Smallest |pre-activation| over the ReLU layers.

    Central differences are only meaningful when no ReLU changes state inside
    the step, so callers draw inputs until this margin exceeds the step size.
    """
    _, (_, pre) = mlp_forward(mlp, x, return_cache=True)
    vals = [np.abs(z).min() for z, ly in zip(pre, mlp.layers) if ly.activation == RELU]
    return float(min(vals)) if vals else float("inf")


def classifier_kink_margin(head, X) -> float:
    """:func:`kink_margin` over both levels of a classifier head, at their actual inputs."""
    from .scg import _forward

    _, _, (xn, _, _, mod, _) = _forward(head, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return min(kink_margin(head.level1, xn), kink_margin(head.level2, mod))
