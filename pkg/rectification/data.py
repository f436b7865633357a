"""
Synthetic retrieval / classification data and the binary dataset format.

Layout of a dataset file, all little-endian:
    b"GRMD", version byte, u32 places, u32 per_place, u32 dim,
    float32 inputs row-major (places * per_place rows), u32 place_ids.
"""
from dataclasses import dataclass
from pathlib import Path
import logging
import struct

import numpy as np

from .exceptions import FormatError, InvalidInputError

logger = logging.getLogger("rectification")

DATASET_MAGIC = b"GRMD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sBIII")


@dataclass
class RetrievalDataset:
    """
    Items grouped by place. The first `queries_per_place` items of every
    place are queries, the rest form the database; same place = positive.
    """

    inputs: np.ndarray
    place_ids: np.ndarray
    samples_per_place: int
    queries_per_place: int = 1

    def __post_init__(self):
        self.place_ids = np.asarray(self.place_ids, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.place_ids.shape[0]:
            raise InvalidInputError("one place id per input row is required")
        if self.inputs.shape[0] == 0:
            raise InvalidInputError("dataset is empty")
        counts = np.bincount(self.place_ids)
        if (counts == 0).any():
            raise InvalidInputError("place ids must be contiguous from 0")
        if not 1 <= self.queries_per_place < counts.min():
            raise InvalidInputError(
                f"every place needs at least {self.queries_per_place + 1} samples "
                f"so each query has a database positive"
            )

    @property
    def num_places(self):
        return int(self.place_ids.max()) + 1

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def query_mask(self):
        mask = np.zeros(len(self), dtype=bool)
        seen = np.zeros(self.num_places, dtype=np.int64)
        for index, place in enumerate(self.place_ids):
            mask[index] = seen[place] < self.queries_per_place
            seen[place] += 1
        return mask

    def split(self):
        """(query indices, database indices)"""
        mask = self.query_mask
        return np.flatnonzero(mask), np.flatnonzero(~mask)

    def ground_truth(self):
        """Database positions of the positives for each query"""
        queries, database = self.split()
        db_places = self.place_ids[database]
        return [np.flatnonzero(db_places == self.place_ids[q]) for q in queries]

    def items_by_place(self):
        return [np.flatnonzero(self.place_ids == place) for place in range(self.num_places)]


def _random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _check_counts(**counts):
    for name, value in counts.items():
        if value < 1:
            raise InvalidInputError(f"{name} must be >= 1, got {value}")


def gen_synthetic_retrieval(num_places, samples_per_place, input_dim, anisotropy, seed, spread=1.0):
    """
    Place centers from a Gaussian whose covariance has eigenvalues spanning a
    ratio of `anisotropy` (randomly rotated); samples jittered around each
    center with the same covariance shape scaled by `spread`.
    """
    _check_counts(num_places=num_places, samples_per_place=samples_per_place, input_dim=input_dim)
    if anisotropy < 1:
        raise InvalidInputError(f"anisotropy must be >= 1, got {anisotropy}")
    if spread < 0:
        raise InvalidInputError(f"spread must be non-negative, got {spread}")

    rng = np.random.default_rng(seed)
    variances = np.logspace(0.0, -np.log10(anisotropy), input_dim) if input_dim > 1 else np.ones(1)
    mixing = _random_rotation(rng, input_dim) * np.sqrt(variances)

    centers = rng.normal(size=(num_places, input_dim)) @ mixing.T
    place_ids = np.repeat(np.arange(num_places), samples_per_place)
    noise = rng.normal(size=(place_ids.shape[0], input_dim)) @ mixing.T
    inputs = (centers[place_ids] + spread * noise).astype(np.float32)

    logger.info(
        f"Generated {num_places} places x {samples_per_place} samples in {input_dim}-D "
        f"(anisotropy {anisotropy}, spread {spread}, seed {seed})"
    )
    return RetrievalDataset(inputs=inputs, place_ids=place_ids, samples_per_place=samples_per_place)


def gen_synthetic_blobs(num_classes, samples_per_class, input_dim, seed, separation=8.0):
    """Well separated unit-variance Gaussian blobs, one per class"""
    _check_counts(num_classes=num_classes, samples_per_class=samples_per_class, input_dim=input_dim)
    rng = np.random.default_rng(seed)
    if num_classes <= input_dim:
        centers = separation * _random_rotation(rng, input_dim)[:num_classes]
    else:
        centers = separation * rng.normal(size=(num_classes, input_dim))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    inputs = (centers[labels] + rng.normal(size=(labels.shape[0], input_dim))).astype(np.float32)
    return RetrievalDataset(inputs=inputs, place_ids=labels, samples_per_place=samples_per_class)


def save_dataset(dataset, path):
    places = dataset.num_places
    if places * dataset.samples_per_place != len(dataset):
        raise InvalidInputError("dataset rows must equal places x samples_per_place")
    with open(path, "wb") as handle:
        handle.write(
            _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, places, dataset.samples_per_place, dataset.input_dim)
        )
        handle.write(np.ascontiguousarray(dataset.inputs, dtype="<f4").tobytes())
        handle.write(np.ascontiguousarray(dataset.place_ids, dtype="<u4").tobytes())
    logger.info(f"Dataset with {len(dataset)} items written to {path}")


def _read_records(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, places, per_place, dim = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path} is not a dataset file")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    rows = places * per_place
    expected = _HEADER.size + 4 * rows * dim + 4 * rows
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    inputs = np.frombuffer(data, dtype="<f4", count=rows * dim, offset=_HEADER.size)
    place_ids = np.frombuffer(data, dtype="<u4", count=rows, offset=_HEADER.size + 4 * rows * dim)
    return inputs.reshape(rows, dim).astype(np.float32), place_ids.astype(np.int64), per_place


def load_dataset(path, queries_per_place=1):
    inputs, place_ids, per_place = _read_records(path)
    return RetrievalDataset(
        inputs=inputs,
        place_ids=place_ids,
        samples_per_place=per_place,
        queries_per_place=queries_per_place,
    )


def dump_descriptors(descriptors, path):
    """Descriptor dump (e.g. a memory queue snapshot) in the dataset layout, one row per 'place'"""
    descriptors = np.asarray(descriptors)
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, descriptors.shape[0], 1, descriptors.shape[1]))
        handle.write(np.ascontiguousarray(descriptors, dtype="<f4").tobytes())
        handle.write(np.arange(descriptors.shape[0], dtype="<u4").tobytes())


def load_descriptor_dump(path):
    inputs, _, _ = _read_records(path)
    return inputs
