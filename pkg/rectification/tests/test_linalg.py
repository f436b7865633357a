import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from rectification.exceptions import ConvergenceError, DimensionMismatchError, InvalidInputError
from rectification.linalg import eigh_sym, sym_sandwich


def random_spd(rng, dim, ridge=0.1):
    m = rng.normal(size=(dim, dim))
    return m.T @ m + ridge * np.eye(dim)


def random_orthonormal(rng, dim):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q


class EighSymTests(SimpleTestCase):
    def assert_valid_decomposition(self, a, decomposition, tolerance=1e-10):
        basis, eigenvalues = decomposition.basis, decomposition.eigenvalues
        self.assertLessEqual(np.abs(basis.T @ basis - np.eye(a.shape[0])).max(), 1e-9)
        self.assertTrue((np.diff(eigenvalues) <= 0).all())
        error = np.linalg.norm(decomposition.reconstruct() - a)
        self.assertLessEqual(error, tolerance * max(np.linalg.norm(a), 1e-300))

    def test_identity_has_unit_spectrum(self):
        decomposition = eigh_sym(np.eye(4))
        assert_allclose(decomposition.eigenvalues, np.ones(4))
        self.assert_valid_decomposition(np.eye(4), decomposition)

    def test_diagonal_matrix(self):
        decomposition = eigh_sym(np.diag([1.0, 3.0]))
        assert_allclose(decomposition.eigenvalues, [3.0, 1.0])
        assert_allclose(np.abs(decomposition.basis), [[0.0, 1.0], [1.0, 0.0]])

    def test_random_spd_reconstruction(self):
        rng = np.random.default_rng(0)
        a = random_spd(rng, 32)
        self.assert_valid_decomposition(a, eigh_sym(a))

    def test_matches_lapack_eigenvalues(self):
        rng = np.random.default_rng(1)
        a = random_spd(rng, 16)
        expected = np.sort(np.linalg.eigvalsh(a))[::-1]
        assert_allclose(eigh_sym(a).eigenvalues, expected, rtol=1e-10)

    def test_fifty_random_spd_matrices_up_to_128(self):
        rng = np.random.default_rng(2)
        for dim in rng.integers(1, 129, size=50):
            a = random_spd(rng, int(dim))
            self.assert_valid_decomposition(a, eigh_sym(a))

    def test_odd_dimension(self):
        rng = np.random.default_rng(3)
        a = random_spd(rng, 7)
        self.assert_valid_decomposition(a, eigh_sym(a))

    def test_spd_spectrum_is_nonnegative(self):
        rng = np.random.default_rng(4)
        low_rank = rng.normal(size=(12, 3))
        a = low_rank @ low_rank.T
        eigenvalues = eigh_sym(a).eigenvalues
        self.assertTrue((eigenvalues >= -1e-12 * eigenvalues[0]).all())

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        basis = eigh_sym(random_spd(rng, 10)).basis
        pivots = np.argmax(np.abs(basis), axis=0)
        self.assertTrue((basis[pivots, np.arange(10)] > 0).all())

    def test_deterministic(self):
        a = random_spd(np.random.default_rng(6), 20)
        first, second = eigh_sym(a), eigh_sym(a.copy())
        assert_array_equal(first.basis, second.basis)
        assert_array_equal(first.eigenvalues, second.eigenvalues)

    def test_repeated_eigenvalues_compare_by_projector(self):
        rng = np.random.default_rng(7)
        u = random_orthonormal(rng, 6)
        a = sym_sandwich(u, [5.0, 5.0, 5.0, 1.0, 1.0, 1.0])
        decomposition = eigh_sym(a)
        top = decomposition.basis[:, :3]
        assert_allclose(top @ top.T, u[:, :3] @ u[:, :3].T, atol=1e-10)

    def test_zero_matrix(self):
        decomposition = eigh_sym(np.zeros((3, 3)))
        assert_array_equal(decomposition.eigenvalues, np.zeros(3))

    def test_rejects_non_finite(self):
        a = np.eye(3)
        a[0, 0] = np.nan
        with self.assertRaises(InvalidInputError):
            eigh_sym(a)

    def test_rejects_asymmetric(self):
        with self.assertRaises(InvalidInputError):
            eigh_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_iteration_cap(self):
        a = random_spd(np.random.default_rng(8), 12)
        with self.assertRaises(ConvergenceError):
            eigh_sym(a, max_sweeps=1)


class SymSandwichTests(SimpleTestCase):
    def test_identity_basis(self):
        assert_allclose(sym_sandwich(np.eye(2), [2.0, 3.0]), np.diag([2.0, 3.0]))

    def test_isotropic_scales(self):
        angle = np.pi / 4
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        assert_allclose(sym_sandwich(rotation, [1.0, 1.0]), np.eye(2), atol=1e-15)

    def test_eigenvalues_recover_scales(self):
        rng = np.random.default_rng(9)
        u = random_orthonormal(rng, 8)
        scales = rng.uniform(0.1, 10.0, size=8)
        result = sym_sandwich(u, scales)
        assert_array_equal(result, result.T)
        assert_allclose(eigh_sym(result).eigenvalues, np.sort(scales)[::-1], rtol=1e-9)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            sym_sandwich(np.eye(3), [1.0, 2.0])

    def test_negative_scales_rejected(self):
        with self.assertRaises(InvalidInputError):
            sym_sandwich(np.eye(2), [1.0, -1.0])
