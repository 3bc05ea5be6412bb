"""Contrastive objective for training a fingerprint encoder.

The similarity of two embeddings is ``exp(cos(a, b) / temperature)``. For each
anchor the positive competes against every other anchor in the batch.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from consent_registry.errors import InvalidInputError
from consent_registry.fingerprint import Fingerprint


@dataclass(frozen=True)
class ContrastiveBatch:
    """Anchors and their augmented positives."""

    anchors: Sequence[Fingerprint]
    positives: Sequence[Fingerprint]
    temperature: float = 0.1

    def __post_init__(self):
        if len(self.anchors) != len(self.positives):
            raise InvalidInputError(
                f"{len(self.anchors)} anchors but {len(self.positives)} positives."
            )
        if not self.anchors:
            raise InvalidInputError("A contrastive batch cannot be empty.")
        if not self.temperature > 0:
            raise InvalidInputError("Temperature must be positive.")
        dims = {fp.dim for fp in self.anchors} | {fp.dim for fp in self.positives}
        if len(dims) != 1:
            raise InvalidInputError(f"Mixed fingerprint dimensions {sorted(dims)}.")

    def matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Stack anchors and positives.

        :return: (anchors, positives), each of shape (n, D).
        """
        return (
            np.vstack([fp.values for fp in self.anchors]),
            np.vstack([fp.values for fp in self.positives]),
        )


def _unit_rows(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("Zero-norm fingerprint in contrastive batch.")
    return matrix / norms[:, np.newaxis], norms


def _through_normalization(
    grad: np.ndarray, unit: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    radial = np.sum(grad * unit, axis=1, keepdims=True)
    return (grad - radial * unit) / norms[:, np.newaxis]


def contrastive_loss(batch: ContrastiveBatch) -> Tuple[float, np.ndarray]:
    """
    Contrastive loss and its analytic gradient.

    Inputs are normalised before the cosines are taken and the gradient is
    carried back through that normalisation, so it is exact for inputs of
    any norm.

    :param batch: the batch.

    :return: the loss summed over anchors, and gradients of shape (2, n, D)
        holding d/d anchors and d/d positives.
    """
    anchors, positives = batch.matrices()
    u, u_norms = _unit_rows(anchors)
    v, v_norms = _unit_rows(positives)
    lam = batch.temperature
    n = u.shape[0]

    positive_logits = np.sum(u * v, axis=1) / lam
    negative_logits = (u @ u.T) / lam
    logits = np.concatenate([positive_logits[:, np.newaxis], negative_logits], axis=1)
    # Column i + 1 is the anchor compared with itself and is not a negative.
    mask = np.zeros_like(logits, dtype=bool)
    mask[np.arange(n), np.arange(n) + 1] = True
    logits = np.where(mask, -np.inf, logits)

    shift = logits.max(axis=1, keepdims=True)
    weights = np.exp(logits - shift)
    totals = weights.sum(axis=1, keepdims=True)
    log_totals = shift[:, 0] + np.log(totals[:, 0])
    loss = float(np.sum(log_totals - positive_logits))

    probabilities = weights / totals
    p_positive = probabilities[:, 0]
    p_negative = probabilities[:, 1:]

    grad_u = (p_negative @ u + p_negative.T @ u) / lam
    grad_u += (p_positive - 1.0)[:, np.newaxis] * v / lam
    grad_v = (p_positive - 1.0)[:, np.newaxis] * u / lam

    grads = np.stack(
        [
            _through_normalization(grad_u, u, u_norms),
            _through_normalization(grad_v, v, v_norms),
        ]
    )
    return max(loss, 0.0), grads
