"""
Metric-learning losses on descriptors with exact analytic gradients.

All similarities are squared L2 distances. Hinge kinks take the zero
subgradient.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import DimensionMismatchError, InvalidInputError

logger = logging.getLogger("rectification")


@dataclass(frozen=True)
class PairLabel:
    query_index: int
    sample_index: int
    is_positive: bool

    def __post_init__(self):
        if self.query_index == self.sample_index:
            raise InvalidInputError(f"pair indices must differ, got {self.query_index} twice")


@dataclass(frozen=True)
class ContrastiveParams:
    margin: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise InvalidInputError(f"margin must be positive, got {self.margin}")


@dataclass(frozen=True)
class TripletParams:
    margin: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise InvalidInputError(f"margin must be positive, got {self.margin}")


@dataclass
class PrototypeSet:
    """One prototype per class, zero-initialized"""

    vectors: np.ndarray

    @classmethod
    def zeros(cls, num_classes, dim):
        return cls(vectors=np.zeros((num_classes, dim)))

    @property
    def num_classes(self):
        return self.vectors.shape[0]


def pair_similarity(a, b):
    """Squared L2 distance between two descriptors"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError("pair_similarity", a.shape, b.shape)
    diff = a - b
    return float(diff @ diff)


def _pair_arrays(batch, pairs):
    batch = np.asarray(batch, dtype=np.float64)
    if not pairs:
        return batch, None, None, None
    queries = np.fromiter((pair.query_index for pair in pairs), dtype=np.intp, count=len(pairs))
    samples = np.fromiter((pair.sample_index for pair in pairs), dtype=np.intp, count=len(pairs))
    positive = np.fromiter((pair.is_positive for pair in pairs), dtype=bool, count=len(pairs))
    size = batch.shape[0]
    if (queries < 0).any() or (queries >= size).any() or (samples < 0).any() or (samples >= size).any():
        raise InvalidInputError(f"pair index out of range for a batch of {size}")
    return batch, queries, samples, positive


def contrastive_loss(batch, pairs, params):
    """Sum over pairs of phi*s + (1-phi)*max(tau - s, 0)"""
    batch, queries, samples, positive = _pair_arrays(batch, pairs)
    if queries is None:
        return 0.0
    diffs = batch[queries] - batch[samples]
    similarity = np.einsum("ij,ij->i", diffs, diffs)
    terms = np.where(positive, similarity, np.maximum(params.margin - similarity, 0.0))
    return float(terms.sum())


def contrastive_grad(batch, pairs, params):
    """Exact gradient of `contrastive_loss` for every descriptor in the batch"""
    batch, queries, samples, positive = _pair_arrays(batch, pairs)
    grads = np.zeros_like(batch)
    if queries is None:
        return grads
    diffs = batch[queries] - batch[samples]
    similarity = np.einsum("ij,ij->i", diffs, diffs)
    kinks = int(np.count_nonzero(~positive & (similarity == params.margin)))
    if kinks:
        logger.warning(f"{kinks} negative pairs sit exactly on the margin; taking the zero subgradient")
    coefficients = np.where(positive, 2.0, np.where(similarity < params.margin, -2.0, 0.0))
    contributions = coefficients[:, None] * diffs
    np.add.at(grads, queries, contributions)
    np.add.at(grads, samples, -contributions)
    return grads


def pairwise_grad_decomposition(query, samples, coefficients):
    """sum_j alpha_j (p_i - p_j): the form every pairwise-distance gradient takes"""
    query = np.asarray(query, dtype=np.float64)
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if samples.shape[1] != query.shape[0]:
        raise DimensionMismatchError("pairwise_grad_decomposition samples", query.shape[0], samples.shape[1])
    if coefficients.shape != (samples.shape[0],):
        raise DimensionMismatchError("pairwise_grad_decomposition coefficients", samples.shape[0], coefficients.shape)
    if not np.isfinite(coefficients).all():
        raise InvalidInputError("coefficients must be finite")
    return coefficients @ (query[None, :] - samples)


def _triplet_arrays(batch, triplets):
    batch = np.asarray(batch, dtype=np.float64)
    if len(triplets) == 0:
        return batch, None
    index = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    if (index < 0).any() or (index >= batch.shape[0]).any():
        raise InvalidInputError(f"triplet index out of range for a batch of {batch.shape[0]}")
    return batch, index


def triplet_loss(batch, triplets, params):
    """Sum over (anchor, positive, negative) of max(s_ap - s_an + margin, 0)"""
    batch, index = _triplet_arrays(batch, triplets)
    if index is None:
        return 0.0
    anchor, positive, negative = batch[index[:, 0]], batch[index[:, 1]], batch[index[:, 2]]
    s_ap = np.einsum("ij,ij->i", anchor - positive, anchor - positive)
    s_an = np.einsum("ij,ij->i", anchor - negative, anchor - negative)
    return float(np.maximum(s_ap - s_an + params.margin, 0.0).sum())


def triplet_grad(batch, triplets, params):
    batch, index = _triplet_arrays(batch, triplets)
    grads = np.zeros_like(batch)
    if index is None:
        return grads
    anchor, positive, negative = batch[index[:, 0]], batch[index[:, 1]], batch[index[:, 2]]
    d_ap = anchor - positive
    d_an = anchor - negative
    s_ap = np.einsum("ij,ij->i", d_ap, d_ap)
    s_an = np.einsum("ij,ij->i", d_an, d_an)
    active = (s_ap - s_an + params.margin > 0.0)[:, None]
    np.add.at(grads, index[:, 0], np.where(active, 2.0 * (d_ap - d_an), 0.0))
    np.add.at(grads, index[:, 1], np.where(active, -2.0 * d_ap, 0.0))
    np.add.at(grads, index[:, 2], np.where(active, 2.0 * d_an, 0.0))
    return grads


def prototype_loss_and_grad(descriptors, labels, prototypes, temperature=1.0):
    """
    Distance-based cross entropy against class prototypes.

    loss = mean_i -log softmax_k(-gamma * ||f_i - m_k||^2)[y_i]

    Returns (loss, descriptor gradients, prototype gradients).
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    vectors = prototypes.vectors
    if descriptors.ndim != 2 or descriptors.shape[0] == 0:
        raise InvalidInputError("prototype loss needs a non-empty batch")
    if descriptors.shape[1] != vectors.shape[1]:
        raise DimensionMismatchError("prototype descriptors", vectors.shape[1], descriptors.shape[1])
    if labels.shape != (descriptors.shape[0],):
        raise InvalidInputError("exactly one label per descriptor is required")
    if (labels < 0).any() or (labels >= vectors.shape[0]).any():
        raise InvalidInputError("label does not index a prototype")

    size = descriptors.shape[0]
    offsets = descriptors[:, None, :] - vectors[None, :, :]
    distances = np.einsum("ikc,ikc->ik", offsets, offsets)
    logits = -temperature * distances
    rows = np.arange(size)
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[rows, labels]))

    # d loss / d logits = (softmax - onehot) / B, and d logits / d f = -2 gamma (f - m)
    weights = softmax(logits, axis=1)
    weights[rows, labels] -= 1.0
    weights *= 2.0 * temperature / size
    descriptor_grads = -np.einsum("ik,ikc->ic", weights, offsets)
    prototype_grads = np.einsum("ik,ikc->kc", weights, offsets)
    return loss, descriptor_grads, prototype_grads


def nearest_prototype(descriptors, prototypes):
    descriptors = np.asarray(descriptors, dtype=np.float64)
    offsets = descriptors[:, None, :] - prototypes.vectors[None, :, :]
    return np.argmin(np.einsum("ikc,ikc->ik", offsets, offsets), axis=1)
