import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from rectification.covariance import (
    MemoryQueue,
    QueueEstimator,
    RunningAverageState,
    estimate_from_queue,
    running_update,
    sample_covariance,
)
from rectification.exceptions import (
    DimensionMismatchError,
    InsufficientSamplesError,
    InvalidBatchError,
    InvalidInputError,
)
from rectification.linalg import eigh_sym


def brute_force_covariance(samples):
    samples = np.asarray(samples, dtype=np.float64)
    count, dim = samples.shape
    mean = [sum(samples[n, i] for n in range(count)) / count for i in range(dim)]
    cov = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            cov[i, j] = sum((samples[n, i] - mean[i]) * (samples[n, j] - mean[j]) for n in range(count))
    return cov / (count - 1)


class MemoryQueueTests(SimpleTestCase):
    def test_enqueue_without_eviction(self):
        queue = MemoryQueue(4, 2).enqueue(np.ones((2, 2)))
        self.assertEqual(queue.count, 2)
        self.assertFalse(queue.is_full)

    def test_full_queue_evicts_oldest(self):
        queue = MemoryQueue(4, 1)
        queue.enqueue(np.arange(4.0)[:, None])
        queue.enqueue(np.array([[10.0], [11.0]]))
        self.assertEqual(len(queue), 4)
        assert_array_equal(queue.contents().ravel(), [2.0, 3.0, 10.0, 11.0])

    def test_keeps_most_recent_items_across_wraps(self):
        rng = np.random.default_rng(0)
        queue = MemoryQueue(7, 3)
        seen = []
        for size in rng.integers(1, 8, size=20):
            batch = rng.normal(size=(size, 3))
            queue.enqueue(batch)
            seen.extend(batch)
            assert_array_equal(queue.contents(), np.asarray(seen[-7:]))

    def test_single_descriptor_is_promoted(self):
        queue = MemoryQueue(3, 2).enqueue(np.array([1.0, 2.0]))
        self.assertEqual(queue.count, 1)

    def test_stores_copies(self):
        batch = np.ones((2, 2))
        queue = MemoryQueue(4, 2).enqueue(batch)
        batch[:] = 5.0
        assert_array_equal(queue.contents(), np.ones((2, 2)))

    def test_oversized_batch(self):
        with self.assertRaises(InvalidBatchError):
            MemoryQueue(2, 2).enqueue(np.zeros((3, 2)))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            MemoryQueue(4, 3).enqueue(np.zeros((2, 2)))

    def test_snapshot_is_independent(self):
        queue = MemoryQueue(4, 1).enqueue(np.ones((2, 1)))
        snapshot = queue.snapshot()
        queue.enqueue(np.zeros((2, 1)))
        self.assertEqual(snapshot.count, 2)

    def test_estimator_keeps_tail_of_oversized_batch(self):
        estimator = QueueEstimator(3, 1)
        estimator.observe(np.arange(5.0)[:, None])
        assert_array_equal(estimator.queue.contents().ravel(), [2.0, 3.0, 4.0])


class QueueEstimateTests(SimpleTestCase):
    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            dim = int(rng.integers(1, 6))
            capacity = int(rng.integers(2, 30))
            queue = MemoryQueue(capacity, dim)
            for _ in range(int(rng.integers(1, 5))):
                queue.enqueue(rng.normal(size=(int(rng.integers(1, capacity + 1)), dim)))
            if queue.count < 2:
                queue.enqueue(rng.normal(size=(2, dim)))
            estimate = estimate_from_queue(queue, 1e-3)
            expected = brute_force_covariance(queue.contents()) + 1e-3 * np.eye(dim)
            assert_allclose(estimate.matrix, expected, atol=1e-9)
            self.assertEqual(estimate.sample_count, queue.count)

    def test_jitter_makes_identical_samples_definite(self):
        queue = MemoryQueue(8, 3).enqueue(np.ones((5, 3)))
        estimate = estimate_from_queue(queue, 1e-3)
        assert_allclose(estimate.matrix, 1e-3 * np.eye(3))
        self.assertGreaterEqual(eigh_sym(estimate.matrix).eigenvalues.min(), 0.5e-3)

    def test_symmetric(self):
        queue = MemoryQueue(50, 6).enqueue(np.random.default_rng(2).normal(size=(40, 6)))
        matrix = estimate_from_queue(queue, 1e-3).matrix
        assert_array_equal(matrix, matrix.T)

    def test_insufficient_samples(self):
        with self.assertRaises(InsufficientSamplesError):
            estimate_from_queue(MemoryQueue(4, 2).enqueue(np.ones(2)), 1e-3)

    def test_non_finite_descriptors(self):
        batch = np.ones((3, 2))
        batch[1, 1] = np.inf
        with self.assertRaises(InvalidInputError):
            estimate_from_queue(MemoryQueue(4, 2).enqueue(batch), 1e-3)

    def test_sample_covariance_of_line(self):
        t = np.linspace(-1.0, 1.0, 11)
        cov = sample_covariance(np.stack([t, 2.0 * t], axis=1))
        self.assertAlmostEqual(np.linalg.det(cov), 0.0, places=12)


class RunningAverageTests(SimpleTestCase):
    def test_initial_state(self):
        state = RunningAverageState.initial(3)
        self.assertEqual(state.total_count, 0)
        assert_array_equal(state.matrix, np.eye(3))

    def test_count_grows_by_batch_size(self):
        state = RunningAverageState.initial(2)
        for size in (3, 1, 4):
            previous = state.total_count
            state = running_update(state, np.ones((size, 2)))
            self.assertEqual(state.total_count, previous + size)

    def test_mean_is_exact(self):
        rng = np.random.default_rng(3)
        batches = [rng.normal(size=(int(rng.integers(1, 9)), 4)) for _ in range(10)]
        state = RunningAverageState.initial(4)
        for batch in batches:
            state = running_update(state, batch)
        assert_allclose(state.mean, np.vstack(batches).mean(axis=0), atol=1e-12)

    def test_first_update_forgets_identity(self):
        batch = np.array([[1.0, 0.0], [-1.0, 0.0]])
        state = running_update(RunningAverageState.initial(2), batch)
        assert_allclose(state.matrix, np.diag([1.0, 0.0]))

    def test_converges_to_full_stream_covariance(self):
        rng = np.random.default_rng(4)
        dim = 6
        mixing = rng.normal(size=(dim, dim)) / np.sqrt(dim)
        state = RunningAverageState.initial(dim)
        seen = []
        for _ in range(40):
            batch = rng.normal(size=(16, dim)) @ mixing.T
            state = running_update(state, batch)
            seen.append(batch)
        self.assertGreaterEqual(state.total_count, 10 * dim)
        assert_allclose(state.matrix, np.cov(np.vstack(seen), rowvar=False), atol=0.05)

    def test_estimate_adds_jitter(self):
        state = RunningAverageState.initial(2)
        assert_allclose(state.estimate(1e-3).matrix, (1.0 + 1e-3) * np.eye(2))

    def test_snapshot_is_independent(self):
        state = running_update(RunningAverageState.initial(2), np.ones((2, 2)))
        snapshot = state.snapshot()
        state.matrix[0, 0] = 9.0
        self.assertNotEqual(snapshot.matrix[0, 0], 9.0)
