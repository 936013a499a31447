"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


class Adam:
    """Updates the given parameter arrays in place.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
    param <- param - lr * m_hat / (sqrt(v_hat) + eps)
    with m_hat = m/(1-b1^t), v_hat = v/(1-b2^t).
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for param, grad, m, v in zip(self.params, grads, self.m, self.v):
            if grad.shape != param.shape:
                raise ShapeMismatch(f"gradient shape {grad.shape} vs parameter {param.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(grad)
            m_hat = m / correction1
            v_hat = v / correction2
            param -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)
