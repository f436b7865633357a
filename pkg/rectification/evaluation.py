"""
Retrieval and distribution diagnostics: Recall@N, covariance spectra,
eigenbasis alignment matrices and their diagonal mass.

Nothing in here touches the grm module; inference stays rectifier-free.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from .covariance import sample_covariance
from .encoder import l2_normalize
from .exceptions import DimensionMismatchError, InvalidInputError
from .linalg import eigh_sym

logger = logging.getLogger("rectification")

ORTHONORMALITY_TOLERANCE = 1e-6
DISTANCE_BLOCK = 1 << 22


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    basis: np.ndarray
    condition_number: float


@dataclass
class EvalReport:
    recall_at: dict
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    condition_number: float = float("nan")


@dataclass(frozen=True)
class AlignmentMatrix:
    entries: np.ndarray

    @property
    def dim(self):
        return self.entries.shape[0]


def recall_at_n(queries, database, positives, n_values=(1, 5, 10)):
    """
    Fraction of queries with a positive among their N nearest database
    descriptors (L2). Distance ties go to the lower database index.
    `positives[i]` lists the database indices that are positives of query i.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    database = np.atleast_2d(np.asarray(database, dtype=np.float64))
    if database.shape[0] == 0 or database.size == 0:
        raise InvalidInputError("database is empty")
    if queries.shape[1] != database.shape[1]:
        raise DimensionMismatchError("query descriptors", database.shape[1], queries.shape[1])
    if len(positives) != queries.shape[0]:
        raise InvalidInputError("one positive set per query is required")
    n_values = sorted(int(n) for n in n_values)
    if n_values[0] < 1 or n_values[-1] > database.shape[0]:
        raise InvalidInputError(f"N must lie in [1, {database.shape[0]}], got {n_values}")

    is_positive = np.zeros((queries.shape[0], database.shape[0]), dtype=bool)
    for row, indices in enumerate(positives):
        if len(indices) == 0:
            raise InvalidInputError(f"query {row} has no positive in the database")
        is_positive[row, np.asarray(indices, dtype=np.intp)] = True

    # rank of the first positive for each query
    first_hit = np.empty(queries.shape[0], dtype=np.int64)
    step = max(1, DISTANCE_BLOCK // (database.shape[0] * database.shape[1]))
    for start in range(0, queries.shape[0], step):
        chunk = queries[start : start + step]
        diffs = chunk[:, None, :] - database[None, :, :]
        distances = np.einsum("qdc,qdc->qd", diffs, diffs)
        order = np.argsort(distances, axis=1, kind="stable")
        hits = np.take_along_axis(is_positive[start : start + step], order, axis=1)
        first_hit[start : start + step] = np.argmax(hits, axis=1)

    return EvalReport(recall_at={n: float(np.mean(first_hit < n)) for n in n_values})


def spectrum_report(batch):
    """Jitter-free sample-covariance spectrum, descending, with its condition number"""
    decomposition = eigh_sym(sample_covariance(batch))
    eigenvalues = decomposition.eigenvalues
    condition = float(eigenvalues[0] / max(eigenvalues[-1], 1e-300))
    return SpectrumReport(eigenvalues=eigenvalues, basis=decomposition.basis, condition_number=condition)


def _check_orthonormal(basis, name):
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {basis.shape}")
    if np.abs(basis.T @ basis - np.eye(basis.shape[0])).max() > ORTHONORMALITY_TOLERANCE:
        raise InvalidInputError(f"{name} is not orthonormal")
    return basis


def alignment_matrix(basis_a, basis_b):
    """A[i][j] = |a_i . b_j| for the eigenvector columns of two bases"""
    basis_a = _check_orthonormal(basis_a, "basis_a")
    basis_b = _check_orthonormal(basis_b, "basis_b")
    if basis_a.shape != basis_b.shape:
        raise DimensionMismatchError("alignment bases", basis_a.shape, basis_b.shape)
    return AlignmentMatrix(entries=np.clip(np.abs(basis_a.T @ basis_b), 0.0, 1.0))


def diagonal_mass(alignment, top_k):
    """Mean of the leading `top_k` diagonal entries"""
    if not 1 <= top_k <= alignment.dim:
        raise InvalidInputError(f"top_k must lie in [1, {alignment.dim}], got {top_k}")
    return float(np.mean(np.diag(alignment.entries)[:top_k]))


def evaluate_retrieval(encoder, dataset, n_values=(1, 5, 10), normalize=False):
    """Encode the dataset, score its query/database split and summarize the descriptor spectrum"""
    descriptors = encoder.encode(np.asarray(dataset.inputs, dtype=np.float64))
    if normalize:
        descriptors, _ = l2_normalize(descriptors)
    queries, database = dataset.split()
    # N beyond the database size is scored as exhaustive retrieval
    effective = {n: min(n, database.shape[0]) for n in n_values}
    report = recall_at_n(
        descriptors[queries], descriptors[database], dataset.ground_truth(), sorted(set(effective.values()))
    )
    report.recall_at = {n: report.recall_at[effective[n]] for n in n_values}
    spectrum = spectrum_report(descriptors)
    report.eigenvalues = spectrum.eigenvalues
    report.condition_number = spectrum.condition_number
    return report, descriptors, spectrum
