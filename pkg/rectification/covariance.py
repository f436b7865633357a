"""
Descriptor covariance estimation: a FIFO memory queue of detached
descriptors, and the streaming running-average recurrence that needs no
queue at all.
"""
from dataclasses import dataclass, replace
import copy
import logging

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    InsufficientSamplesError,
    InvalidBatchError,
    InvalidInputError,
)

logger = logging.getLogger("rectification")


def _as_batch(batch, dim):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2:
        raise InvalidBatchError(f"descriptor batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != dim:
        raise DimensionMismatchError("descriptor batch", dim, batch.shape[1])
    if batch.shape[0] < 1:
        raise InvalidBatchError("descriptor batch is empty")
    return batch


def sample_covariance(samples):
    """
    Unbiased sample covariance, computed mean-first then from deviations.
    Jitter-free; the result is symmetric by construction.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise InsufficientSamplesError(
            f"need at least 2 samples for a covariance, got {samples.shape[0] if samples.ndim else 0}"
        )
    if not np.isfinite(samples).all():
        raise InvalidInputError("samples contain non-finite values")
    deviations = samples - samples.mean(axis=0)
    cov = deviations.T @ deviations / (samples.shape[0] - 1)
    return (cov + cov.T) / 2.0


class MemoryQueue:
    """
    FIFO buffer of the K most recent descriptors, stored as detached float64
    copies in a ring buffer.
    """

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise InvalidInputError(f"queue capacity must be positive, got {capacity}")
        if dim < 1:
            raise InvalidInputError(f"queue dim must be positive, got {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._storage = np.zeros((self.capacity, self.dim))
        self._head = 0
        self.count = 0

    def __len__(self):
        return self.count

    @property
    def is_full(self):
        return self.count == self.capacity

    def enqueue(self, batch):
        """Append a batch; the oldest descriptors fall out once K is reached"""
        batch = _as_batch(batch, self.dim)
        size = batch.shape[0]
        if size > self.capacity:
            raise InvalidBatchError(
                f"batch of {size} descriptors exceeds queue capacity {self.capacity}"
            )
        slots = (self._head + np.arange(size)) % self.capacity
        self._storage[slots] = batch
        self._head = (self._head + size) % self.capacity
        self.count = min(self.count + size, self.capacity)
        return self

    def contents(self):
        """Queued descriptors, oldest first"""
        if self.count < self.capacity:
            return self._storage[: self.count].copy()
        order = (self._head + np.arange(self.capacity)) % self.capacity
        return self._storage[order]

    def snapshot(self):
        """Deep copy for read-only diagnostics while training continues"""
        return copy.deepcopy(self)


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    jitter: float
    sample_count: int

    @property
    def dim(self):
        return self.matrix.shape[0]


def estimate_from_queue(queue, jitter):
    """Sample covariance over every queued descriptor, plus jitter on the diagonal"""
    if queue.count < 2:
        raise InsufficientSamplesError(
            f"queue holds {queue.count} descriptors, at least 2 are required"
        )
    if jitter <= 0:
        raise InvalidInputError(f"jitter must be positive, got {jitter}")
    cov = sample_covariance(queue.contents())
    return CovarianceEstimate(
        matrix=cov + jitter * np.eye(queue.dim),
        jitter=float(jitter),
        sample_count=queue.count,
    )


@dataclass(frozen=True)
class RunningAverageState:
    """Streaming (N_k, mean_k, P_k); P starts at identity and the mean at zero"""

    total_count: int
    mean: np.ndarray
    matrix: np.ndarray

    @classmethod
    def initial(cls, dim):
        return cls(total_count=0, mean=np.zeros(dim), matrix=np.eye(dim))

    @property
    def dim(self):
        return self.mean.shape[0]

    def estimate(self, jitter):
        """Current P_k with jitter added, ready for eigendecomposition"""
        if jitter <= 0:
            raise InvalidInputError(f"jitter must be positive, got {jitter}")
        return CovarianceEstimate(
            matrix=self.matrix + jitter * np.eye(self.dim),
            jitter=float(jitter),
            sample_count=self.total_count,
        )

    def snapshot(self):
        return replace(self, mean=self.mean.copy(), matrix=self.matrix.copy())


def running_update(state, batch):
    """
    One step of the running-average recurrence. Both the mean and the scatter
    terms are scaled by 1/N_{k+1}, so the mean stays a true mean.
    """
    batch = _as_batch(batch, state.dim)
    size = batch.shape[0]
    total = state.total_count + size
    keep = (total - size) / total

    mean = keep * state.mean + batch.sum(axis=0) / total
    deviations = batch - mean
    scatter = deviations.T @ deviations
    matrix = keep * state.matrix + scatter / total
    matrix = (matrix + matrix.T) / 2.0

    return RunningAverageState(total_count=total, mean=mean, matrix=matrix)


class QueueEstimator:
    """Memory-queue covariance source for the rectifier"""

    kind = "queue"

    def __init__(self, capacity, dim):
        self.queue = MemoryQueue(capacity, dim)

    @property
    def sample_count(self):
        return self.queue.count

    def observe(self, descriptors):
        # a batch larger than K keeps only its last K rows, as a FIFO would
        batch = _as_batch(descriptors, self.queue.dim)
        self.queue.enqueue(batch[-self.queue.capacity :])

    def estimate(self, jitter):
        return estimate_from_queue(self.queue, jitter)


class RunningAverageEstimator:
    """Running-average covariance source for the rectifier"""

    kind = "running_average"

    def __init__(self, dim):
        self.state = RunningAverageState.initial(dim)

    @property
    def sample_count(self):
        return self.state.total_count

    def observe(self, descriptors):
        self.state = running_update(self.state, descriptors)

    def estimate(self, jitter):
        return self.state.estimate(jitter)
