"""
Gradient rectification: turn a descriptor covariance estimate into the
projection P* = U diag((mean_lambda / lambda_i)^s) U^T and multiply
descriptor-level gradients by it during the backward pass.
"""
from collections import Counter
from dataclasses import dataclass
import logging

from django.conf import settings
import numpy as np

from .covariance import QueueEstimator, RunningAverageEstimator
from .exceptions import (
    DimensionMismatchError,
    InvalidConfigError,
    InvalidInputError,
    NumericalFailureError,
)
from .linalg import eigh_sym, sym_sandwich

logger = logging.getLogger("rectification")

# Incremented by every grm operation; evaluation code must leave it untouched.
grm_operation_counts = Counter()

ESTIMATORS = ("queue", "running_average")


@dataclass(frozen=True)
class ProjectionMatrix:
    matrix: np.ndarray
    rectification_rate: float
    source_mean_eigenvalue: float
    eigenvalues: np.ndarray
    is_identity: bool = False

    @classmethod
    def identity(cls, dim, rectification_rate=0.0):
        return cls(
            matrix=np.eye(dim),
            rectification_rate=rectification_rate,
            source_mean_eigenvalue=1.0,
            eigenvalues=np.ones(dim),
            is_identity=True,
        )

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GrmConfig:
    rectification_rate: float = 1.0
    jitter: float = 1e-3
    queue_capacity: int = 10240
    estimator: str = "queue"
    refresh_period: int = 1
    warmup_min_samples: int = 256

    def __post_init__(self):
        if not 0.0 <= self.rectification_rate <= 2.0:
            raise InvalidConfigError(
                f"rectification rate must lie in [0, 2], got {self.rectification_rate}"
            )
        if self.jitter <= 0:
            raise InvalidConfigError(f"jitter must be positive, got {self.jitter}")
        if self.queue_capacity < 2:
            raise InvalidConfigError(f"queue capacity must be >= 2, got {self.queue_capacity}")
        if self.estimator not in ESTIMATORS:
            raise InvalidConfigError(f"unknown estimator {self.estimator!r}")
        if self.refresh_period < 1:
            raise InvalidConfigError(f"refresh period must be >= 1, got {self.refresh_period}")

    @classmethod
    def from_settings(cls, **overrides):
        defaults = settings.GRM_LAB
        values = {
            "rectification_rate": defaults["RECTIFICATION_RATE"],
            "jitter": defaults["JITTER"],
            "queue_capacity": defaults["QUEUE_CAPACITY"],
            "estimator": defaults["ESTIMATOR"],
            "refresh_period": defaults["REFRESH_PERIOD"],
            "warmup_min_samples": defaults["WARMUP_MIN_SAMPLES"],
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def bank_linear(cls, **overrides):
        """Memory queue with s = 1"""
        return cls.from_settings(**{"estimator": "queue", "rectification_rate": 1.0, **overrides})

    @classmethod
    def average_sqrt(cls, **overrides):
        """Running average with s = 0.5"""
        return cls.from_settings(
            **{"estimator": "running_average", "rectification_rate": 0.5, **overrides}
        )

    def warmup_threshold(self, dim):
        return max(2 * dim, self.warmup_min_samples)

    def can_warm_up(self, dim):
        """A queue that never holds `warmup_threshold` rows never rectifies"""
        return self.estimator != "queue" or self.queue_capacity >= self.warmup_threshold(dim)


PRESETS = {
    "bank_linear": GrmConfig.bank_linear,
    "average_sqrt": GrmConfig.average_sqrt,
}


def build_projection(p, s):
    """P* = U diag((mean_lambda / lambda_i)^s) U^T from a jittered covariance estimate"""
    grm_operation_counts["build_projection"] += 1
    dim = p.matrix.shape[0]
    if s == 0:
        return ProjectionMatrix.identity(dim, 0.0)

    decomposition = eigh_sym(p.matrix, max_sweeps=settings.GRM_LAB["MAX_JACOBI_SWEEPS"])
    eigenvalues = decomposition.eigenvalues
    if (eigenvalues <= 0).any():
        raise NumericalFailureError(
            f"covariance estimate has non-positive eigenvalue {eigenvalues.min():.3e} "
            f"despite jitter {p.jitter}"
        )
    mean_eigenvalue = decomposition.mean_eigenvalue
    scales = (mean_eigenvalue / eigenvalues) ** s
    return ProjectionMatrix(
        matrix=sym_sandwich(decomposition.basis, scales),
        rectification_rate=float(s),
        source_mean_eigenvalue=mean_eigenvalue,
        eigenvalues=scales,
    )


def rectify(proj, grads):
    """g* = P* g for every row of `grads`"""
    grm_operation_counts["rectify"] += 1
    grads = np.asarray(grads, dtype=np.float64)
    squeeze = grads.ndim == 1
    if squeeze:
        grads = grads[None, :]
    if grads.ndim != 2 or grads.shape[1] != proj.dim:
        raise DimensionMismatchError("gradients", proj.dim, grads.shape[-1])
    if not np.isfinite(grads).all():
        raise InvalidInputError("gradients contain non-finite values")

    if proj.is_identity:
        rectified = grads.copy()
    else:
        rectified = grads @ proj.matrix.T
    return rectified[0] if squeeze else rectified


class GradientRectifier:
    """
    Stateful GRM attached at the descriptor level of one training loop.

    Forward descriptors feed the covariance estimator; every
    `refresh_period` steps, once warmed up, P* is rebuilt; backward
    gradients are multiplied by the current P* (identity until then).
    """

    def __init__(self, config, dim):
        self.config = config
        self.dim = dim
        if config.estimator == "queue":
            self.estimator = QueueEstimator(config.queue_capacity, dim)
        else:
            self.estimator = RunningAverageEstimator(dim)
        self.projection = ProjectionMatrix.identity(dim, config.rectification_rate)
        self.step = 0
        self.rebuilds = 0

        if not config.can_warm_up(dim):
            logger.warning(
                f"Queue capacity {config.queue_capacity} is below the warmup threshold "
                f"{config.warmup_threshold(dim)}; rectification never activates"
            )

    @property
    def warmed_up(self):
        return self.estimator.sample_count >= self.config.warmup_threshold(self.dim)

    def observe(self, descriptors):
        """Forward pass: store detached descriptors"""
        self.estimator.observe(np.array(descriptors, dtype=np.float64, copy=True))

    def refresh(self):
        estimate = self.estimator.estimate(self.config.jitter)
        self.projection = build_projection(estimate, self.config.rectification_rate)
        self.rebuilds += 1
        logger.debug(
            f"Rebuilt projection at step {self.step} from {estimate.sample_count} samples "
            f"(mean eigenvalue {self.projection.source_mean_eigenvalue:.4e})"
        )

    def hook(self, descriptors, gradients):
        """One training step of the GRM: observe, maybe rebuild, rectify"""
        grm_operation_counts["grm_hook"] += 1
        self.observe(descriptors)
        if self.step % self.config.refresh_period == 0 and self.warmed_up:
            self.refresh()
        rectified = rectify(self.projection, gradients)
        self.step += 1
        return rectified
