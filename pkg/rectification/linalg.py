"""
Dense symmetric linear algebra used by covariance analysis and projection
construction. Everything here works in float64 regardless of the dtype the
caller trains in.
"""
from dataclasses import dataclass
from functools import lru_cache
import logging

import numpy as np

from .exceptions import ConvergenceError, DimensionMismatchError, InvalidInputError

logger = logging.getLogger("rectification")

SYMMETRY_TOLERANCE = 1e-12
OFF_DIAGONAL_TOLERANCE = 1e-12
DEFAULT_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenDecomposition:
    """Orthonormal basis (columns) with eigenvalues sorted descending"""

    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    @property
    def mean_eigenvalue(self):
        return float(np.mean(self.eigenvalues))

    def reconstruct(self):
        return _symmetrize((self.basis * self.eigenvalues) @ self.basis.T)


def _symmetrize(matrix):
    return (matrix + matrix.T) / 2.0


def as_sym_matrix(a):
    """Validate `a` as a finite symmetric float64 matrix and return it"""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InvalidInputError("matrix has non-finite entries")
    scale = np.maximum(1.0, np.abs(a))
    if (np.abs(a - a.T) > SYMMETRY_TOLERANCE * scale).any():
        raise InvalidInputError("matrix is not symmetric")
    return a


@lru_cache(maxsize=64)
def _round_robin_schedule(dim):
    """
    Disjoint (p, q) index pairs per round so that every pair appears once per
    sweep. Pairs inside a round touch distinct rows, so one round is applied
    as a single vectorized update.
    """
    players = list(range(dim + dim % 2))
    n = len(players)
    rounds = []
    for _ in range(n - 1):
        pairs = []
        for i in range(n // 2):
            p, q = players[i], players[n - 1 - i]
            if p < dim and q < dim:
                pairs.append((min(p, q), max(p, q)))
        if pairs:
            ps, qs = zip(*pairs)
            rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_diagonal_norm(a):
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def eigh_sym(a, max_sweeps=DEFAULT_MAX_SWEEPS):
    """
    Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops below
    1e-12 * ||a||_F. Eigenvalues come back in descending order and each
    eigenvector has its largest-magnitude entry positive.
    """
    a = as_sym_matrix(a)
    dim = a.shape[0]
    work = a.copy()
    basis = np.eye(dim)
    tolerance = OFF_DIAGONAL_TOLERANCE * float(np.linalg.norm(a))

    sweeps = 0
    while _off_diagonal_norm(work) > tolerance:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {_off_diagonal_norm(work):.3e}, target {tolerance:.3e})"
            )
        for p, q in _round_robin_schedule(dim):
            apq = work[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            safe_apq = np.where(active, apq, 1.0)
            theta = (work[q, q] - work[p, p]) / (2.0 * safe_apq)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            rows_p, rows_q = work[p, :], work[q, :]
            work[p, :] = c[:, None] * rows_p - s[:, None] * rows_q
            work[q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            cols_p, cols_q = work[:, p], work[:, q]
            work[:, p] = cols_p * c - cols_q * s
            work[:, q] = cols_p * s + cols_q * c
            work[p, q] = 0.0
            work[q, p] = 0.0

            vec_p, vec_q = basis[:, p], basis[:, q]
            basis[:, p] = vec_p * c - vec_q * s
            basis[:, q] = vec_p * s + vec_q * c
        work = _symmetrize(work)
        sweeps += 1

    logger.debug(f"Jacobi converged in {sweeps} sweeps for dim {dim}")

    eigenvalues = np.diag(work).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    basis = basis[:, order]

    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.where(basis[pivots, np.arange(dim)] < 0.0, -1.0, 1.0)
    basis = basis * signs

    return EigenDecomposition(basis=basis, eigenvalues=eigenvalues)


def sym_sandwich(u, scales):
    """U diag(scales) U^T, symmetrized explicitly"""
    u = np.asarray(u, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise InvalidInputError(f"basis must be square, got shape {u.shape}")
    if scales.shape != (u.shape[1],):
        raise DimensionMismatchError("sym_sandwich scales", u.shape[1], scales.shape)
    if not np.isfinite(scales).all() or (scales < 0).any():
        raise InvalidInputError("scales must be finite and nonnegative")
    return _symmetrize((u * scales) @ u.T)
