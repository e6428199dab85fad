"""Text-queue semantic alignment loss.

Image and text anchors are pooled to single vectors, projected onto a queue
of text features via temperature-scaled cosine similarity, and the resulting
probability distributions are pulled together with a KL divergence.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ParameterError, ShapeError
from .tensor import Tensor, as_tensor, cosine_sim, kl_div, mean_rows, softmax_temp, stack_scalars
from .tensorio import read_tensor

DEFAULT_QUEUE_SIZE = 30
DEFAULT_TAU = 0.07


class TextQueue:
    """k pooled text vectors plus the softmax temperature."""

    def __init__(self, entries, tau: float = DEFAULT_TAU):
        entries = [as_tensor(e) for e in entries]
        if len(entries) < 2:
            raise ShapeError("queue needs at least 2 entries")
        if not tau > 0:
            raise ParameterError(f"temperature must be positive, got {tau}")
        dim = entries[0].data.shape
        for e in entries:
            if e.ndim != 1 or e.data.shape != dim:
                raise ShapeError("queue entries must be equal-length vectors")
            if float(e.data @ e.data) <= 1e-24:
                raise DegenerateInputError("queue entry has zero norm")
        self.entries = entries
        self.tau = float(tau)

    @property
    def k(self) -> int:
        return len(self.entries)


class SemanticDistribution:
    """Probabilities of an anchor over the queue entries."""

    def __init__(self, probs: Tensor):
        if probs.ndim != 1:
            raise ShapeError("distribution must be a vector")
        if np.any(probs.data <= 0):
            raise DegenerateInputError("distribution entries must be positive")
        if abs(float(probs.data.sum()) - 1.0) > 1e-9:
            raise DegenerateInputError("distribution must sum to 1")
        self.probs = probs

    @property
    def k(self) -> int:
        return self.probs.data.shape[0]


def load_queue(path, tau: float = DEFAULT_TAU) -> TextQueue:
    """Load a queue fixture stored as a (k, D) tensor file."""
    matrix = read_tensor(path)
    if matrix.ndim != 2:
        raise ShapeError(f"queue fixture must be a (k, D) matrix, got rank {matrix.ndim}")
    return TextQueue([Tensor(row) for row in matrix], tau)


def pool_semantic(features: Tensor) -> Tensor:
    """Mean over rows; the pooling rule shared by both anchors."""
    return mean_rows(features)


def semantic_distribution(anchor: Tensor, queue: TextQueue) -> SemanticDistribution:
    """Softmax over temperature-scaled cosine similarities to the queue."""
    sims = stack_scalars([cosine_sim(anchor, entry) for entry in queue.entries])
    return SemanticDistribution(softmax_temp(sims, queue.tau))


def semantic_loss(pv: SemanticDistribution, pt: SemanticDistribution) -> Tensor:
    """KL divergence from the visual distribution to the text distribution."""
    if pv.k != pt.k:
        raise ShapeError(f"distribution lengths differ: {pv.k} vs {pt.k}")
    return kl_div(pv.probs, pt.probs)


def total_loss(l_sem, l_nll, weight: float):
    """Joint objective: weight * semantic + sequence NLL."""
    if weight < 0:
        raise ParameterError(f"semantic-loss weight must be >= 0, got {weight}")
    return as_tensor(l_sem) * weight + as_tensor(l_nll)
