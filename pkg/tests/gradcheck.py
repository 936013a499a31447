"""Central finite-difference gradient checking helpers (float64)."""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f()
        flat[i] = original - h
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Worst relative error over input and parameter gradients.

    Loss is sum(forward(x) * R) for a fixed random R, so the upstream
    gradient is exactly R.  The layer must behave deterministically across
    repeated forward calls (reseed stochastic layers before each call).
    """
    x = np.asarray(x, dtype=np.float64)
    out = layer.forward(x.copy(), train=True)
    upstream = rng.standard_normal(out.shape)

    def loss() -> float:
        return float((layer.forward(x, train=True) * upstream).sum())

    analytic_input = layer.backward(upstream.copy())
    analytic_params = {name: grad.copy() for name, grad in layer.grads.items()}

    worst = max_rel_err(analytic_input, numeric_grad(loss, x, h))
    for name in layer.params:
        numeric = numeric_grad(loss, layer.params[name], h)
        worst = max(worst, max_rel_err(analytic_params[name], numeric))
    return worst


def well_separated(rng: np.random.Generator, shape, gap: float = 0.05) -> np.ndarray:
    """Values with pairwise gaps well above the FD step, away from kinks at 0."""
    n = int(np.prod(shape))
    base = (rng.permutation(n).astype(np.float64) + 1.0) * gap
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return (base * signs).reshape(shape)
