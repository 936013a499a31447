"""Loss functions: batch-mean squared reconstruction error and categorical
cross entropy over softmax outputs."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

_LOG_FLOOR = 1e-12


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of the squared Euclidean reconstruction error.

    Returns the scalar loss and its gradient 2*(pred - target)/batch.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: shapes {pred.shape} vs {target.shape}")
    batch = pred.shape[0] if pred.ndim > 0 else 1
    diff = pred - target
    loss = float(np.sum(diff.astype(np.float64) ** 2) / batch)
    return loss, (2.0 / batch) * diff


def cross_entropy_loss(probabilities: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true classes.

    ``probabilities`` must come from a softmax.  The returned gradient is the
    fused softmax + cross-entropy gradient (p - onehot)/batch, i.e. the
    gradient with respect to the softmax *inputs*; feed it to the layer below
    the final softmax.
    """
    if probabilities.ndim != 2:
        raise ShapeMismatch(f"cross entropy expects (batch, classes), got {probabilities.shape}")
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels.reshape(1)
    batch, n_classes = probabilities.shape
    if labels.shape != (batch,):
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ShapeMismatch("label outside the class range")
    picked = probabilities[np.arange(batch), labels]
    loss = float(-np.log(np.maximum(picked, _LOG_FLOOR), dtype=np.float64).sum() / batch)
    grad = probabilities.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch
