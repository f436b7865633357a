import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from rectification.exceptions import DimensionMismatchError, InvalidInputError
from rectification.losses import (
    ContrastiveParams,
    PairLabel,
    PrototypeSet,
    TripletParams,
    contrastive_grad,
    contrastive_loss,
    nearest_prototype,
    pair_similarity,
    pairwise_grad_decomposition,
    prototype_loss_and_grad,
    triplet_grad,
    triplet_loss,
)

STEP = 1e-5


def numerical_gradient(function, point):
    grads = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        shifted = point.copy()
        shifted[index] += STEP
        upper = function(shifted)
        shifted[index] -= 2 * STEP
        lower = function(shifted)
        grads[index] = (upper - lower) / (2 * STEP)
    return grads


def assert_gradients_match(test, analytic, numeric):
    scale = max(np.linalg.norm(analytic), 1.0)
    test.assertLessEqual(np.linalg.norm(analytic - numeric), 1e-5 * scale)


def random_pairs(rng, size, count):
    pairs = []
    while len(pairs) < count:
        i, j = rng.choice(size, size=2, replace=False)
        pairs.append(PairLabel(int(i), int(j), bool(rng.integers(2))))
    return pairs


class PairSimilarityTests(SimpleTestCase):
    def test_identical_points(self):
        self.assertEqual(pair_similarity([1.0, 2.0], [1.0, 2.0]), 0.0)

    def test_unit_offset(self):
        self.assertEqual(pair_similarity([1.0, 0.0], [0.0, 0.0]), 1.0)

    def test_matches_elementwise_sum(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=16), rng.normal(size=16)
        self.assertAlmostEqual(pair_similarity(a, b), sum((x - y) ** 2 for x, y in zip(a, b)), delta=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            pair_similarity([1.0], [1.0, 2.0])


class ContrastiveTests(SimpleTestCase):
    params = ContrastiveParams(margin=1.0)

    def test_positive_pair_contributes_distance(self):
        batch = np.array([[1.0, 0.0], [0.0, 0.0]])
        self.assertEqual(contrastive_loss(batch, [PairLabel(0, 1, True)], self.params), 1.0)

    def test_inactive_negative(self):
        batch = np.array([[2.0, 0.0], [0.0, 0.0]])
        pairs = [PairLabel(0, 1, False)]
        self.assertEqual(contrastive_loss(batch, pairs, self.params), 0.0)
        assert_array_equal(contrastive_grad(batch, pairs, self.params), np.zeros((2, 2)))

    def test_active_negative(self):
        batch = np.array([[np.sqrt(0.2), 0.0], [0.0, 0.0]])
        self.assertAlmostEqual(contrastive_loss(batch, [PairLabel(0, 1, False)], self.params), 0.8)

    def test_kink_takes_zero_subgradient(self):
        batch = np.array([[1.0, 0.0], [0.0, 0.0]])
        with self.assertLogs("rectification", level="WARNING"):
            grads = contrastive_grad(batch, [PairLabel(0, 1, False)], self.params)
        assert_array_equal(grads, np.zeros((2, 2)))

    def test_positive_pair_gradient(self):
        batch = np.array([[1.0, 0.0], [0.0, 0.0]])
        grads = contrastive_grad(batch, [PairLabel(0, 1, True)], self.params)
        assert_allclose(grads, [[2.0, 0.0], [-2.0, 0.0]])

    def test_empty_pairs(self):
        batch = np.ones((3, 2))
        self.assertEqual(contrastive_loss(batch, [], self.params), 0.0)
        assert_array_equal(contrastive_grad(batch, [], self.params), np.zeros((3, 2)))

    def test_invalid_index(self):
        with self.assertRaises(InvalidInputError):
            contrastive_loss(np.ones((2, 2)), [PairLabel(0, 5, True)], self.params)

    def test_pair_needs_distinct_indices(self):
        with self.assertRaises(InvalidInputError):
            PairLabel(1, 1, True)

    def test_loss_invariant_to_pair_order(self):
        rng = np.random.default_rng(1)
        batch = rng.normal(size=(6, 8))
        pairs = random_pairs(rng, 6, 10)
        self.assertAlmostEqual(
            contrastive_loss(batch, pairs, self.params),
            contrastive_loss(batch, pairs[::-1], self.params),
            places=12,
        )

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 100:
            batch = rng.normal(scale=0.4, size=(6, 8))
            pairs = random_pairs(rng, 6, 6)
            diffs = np.array([batch[p.query_index] - batch[p.sample_index] for p in pairs])
            if (np.abs(self.params.margin - np.einsum("ij,ij->i", diffs, diffs)) <= 1e-3).any():
                continue
            numeric = numerical_gradient(lambda b: contrastive_loss(b, pairs, self.params), batch)
            assert_gradients_match(self, contrastive_grad(batch, pairs, self.params), numeric)
            checked += 1

    def test_query_gradient_lies_in_span_of_differences(self):
        rng = np.random.default_rng(3)
        batch = rng.normal(scale=0.4, size=(7, 8))
        pairs = [PairLabel(0, j, j == 1) for j in range(1, 7)]
        gradient = contrastive_grad(batch, pairs, self.params)[0]
        span = (batch[0] - batch[1:]).T
        coefficients, *_ = np.linalg.lstsq(span, gradient, rcond=None)
        residual = np.linalg.norm(span @ coefficients - gradient)
        self.assertLessEqual(residual, 1e-10 * max(np.linalg.norm(gradient), 1e-300))


class PairwiseDecompositionTests(SimpleTestCase):
    def test_zero_coefficients(self):
        assert_array_equal(pairwise_grad_decomposition([1.0, 2.0], [[0.0, 1.0]], [0.0]), [0.0, 0.0])

    def test_matches_positive_pair_gradient(self):
        batch = np.array([[1.0, 2.0], [0.5, -1.0]])
        expected = contrastive_grad(batch, [PairLabel(0, 1, True)], ContrastiveParams())[0]
        assert_allclose(pairwise_grad_decomposition(batch[0], batch[1:], [2.0]), expected)

    def test_matches_explicit_sum(self):
        rng = np.random.default_rng(4)
        query, samples, alpha = rng.normal(size=4), rng.normal(size=(5, 4)), rng.normal(size=5)
        expected = sum(a * (query - s) for a, s in zip(alpha, samples))
        assert_allclose(pairwise_grad_decomposition(query, samples, alpha), expected, atol=1e-12)

    def test_rejects_non_finite_coefficients(self):
        with self.assertRaises(InvalidInputError):
            pairwise_grad_decomposition([1.0], [[0.0]], [np.inf])


class TripletTests(SimpleTestCase):
    params = TripletParams(margin=1.0)

    def test_satisfied_triplet_is_free(self):
        batch = np.array([[0.0, 0.0], [0.1, 0.0], [3.0, 0.0]])
        self.assertEqual(triplet_loss(batch, [(0, 1, 2)], self.params), 0.0)
        assert_array_equal(triplet_grad(batch, [(0, 1, 2)], self.params), np.zeros((3, 2)))

    def test_violated_triplet(self):
        batch = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        # 1 - 0.25 + 1
        self.assertAlmostEqual(triplet_loss(batch, [(0, 1, 2)], self.params), 1.75)

    def test_finite_differences(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 100:
            batch = rng.normal(scale=0.5, size=(6, 8))
            triplets = [tuple(int(i) for i in rng.choice(6, size=3, replace=False)) for _ in range(4)]
            a, p, n = np.array(triplets).T
            slack = (
                np.einsum("ij,ij->i", batch[a] - batch[p], batch[a] - batch[p])
                - np.einsum("ij,ij->i", batch[a] - batch[n], batch[a] - batch[n])
                + self.params.margin
            )
            if (np.abs(slack) <= 1e-3).any():
                continue
            numeric = numerical_gradient(lambda b: triplet_loss(b, triplets, self.params), batch)
            assert_gradients_match(self, triplet_grad(batch, triplets, self.params), numeric)
            checked += 1


class PrototypeLossTests(SimpleTestCase):
    def test_single_class_at_prototype(self):
        descriptors = np.array([[0.5, -0.5]])
        loss, descriptor_grads, prototype_grads = prototype_loss_and_grad(
            descriptors, [0], PrototypeSet(descriptors.copy())
        )
        self.assertEqual(loss, 0.0)
        assert_array_equal(descriptor_grads, np.zeros((1, 2)))
        assert_array_equal(prototype_grads, np.zeros((1, 2)))

    def test_equidistant_prototypes(self):
        prototypes = PrototypeSet(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        loss, _, _ = prototype_loss_and_grad(np.array([[0.0, 3.0]]), [1], prototypes)
        self.assertAlmostEqual(loss, np.log(2.0))

    def test_zero_initialized(self):
        prototypes = PrototypeSet.zeros(3, 4)
        self.assertEqual(prototypes.num_classes, 3)
        assert_array_equal(prototypes.vectors, np.zeros((3, 4)))

    def test_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            descriptors = rng.normal(size=(5, 8))
            labels = rng.integers(0, 3, size=5)
            vectors = rng.normal(size=(3, 8))
            temperature = float(rng.uniform(0.2, 1.5))
            _, descriptor_grads, prototype_grads = prototype_loss_and_grad(
                descriptors, labels, PrototypeSet(vectors), temperature
            )
            numeric_descriptors = numerical_gradient(
                lambda d: prototype_loss_and_grad(d, labels, PrototypeSet(vectors), temperature)[0], descriptors
            )
            numeric_prototypes = numerical_gradient(
                lambda v: prototype_loss_and_grad(descriptors, labels, PrototypeSet(v), temperature)[0], vectors
            )
            assert_gradients_match(self, descriptor_grads, numeric_descriptors)
            assert_gradients_match(self, prototype_grads, numeric_prototypes)

    def test_empty_batch(self):
        with self.assertRaises(InvalidInputError):
            prototype_loss_and_grad(np.zeros((0, 2)), [], PrototypeSet.zeros(2, 2))

    def test_nearest_prototype(self):
        prototypes = PrototypeSet(np.array([[0.0, 0.0], [10.0, 0.0]]))
        assert_array_equal(nearest_prototype(np.array([[1.0, 0.0], [9.0, 1.0]]), prototypes), [0, 1])
