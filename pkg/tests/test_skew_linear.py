import numpy as np
import pytest

from impurity_kit.errors import NotAntisymmetric
from impurity_kit.skew_linear import (
    block_matrix,
    canonical_modes,
    pfaffian,
    spectral_gap,
)
from tests.conftest import random_antisymmetric, random_bath


def test_pfaffian_small_closed_forms():
    a = np.array([[0.0, 3.0], [-3.0, 0.0]])
    assert pfaffian(a) == pytest.approx(3.0)

    b = random_antisymmetric(4, np.random.default_rng(1))
    expected = b[0, 1] * b[2, 3] - b[0, 2] * b[1, 3] + b[0, 3] * b[1, 2]
    assert pfaffian(b) == pytest.approx(expected)


def test_pfaffian_edge_sizes():
    assert pfaffian(np.zeros((0, 0))) == 1
    assert pfaffian(np.zeros((3, 3))) == 0
    assert pfaffian(random_antisymmetric(5, np.random.default_rng(0))) == 0


def test_pfaffian_of_block_matrix_is_product():
    energies = [0.5, 2.0, -1.5, 3.0]
    assert pfaffian(block_matrix(energies)) == pytest.approx(np.prod(energies))


@pytest.mark.parametrize("dim", [6, 8, 12, 20, 30, 40])
def test_pfaffian_squared_is_determinant(dim, rng):
    a = random_antisymmetric(dim, rng) / np.sqrt(dim)
    det = np.linalg.det(a)
    assert abs(pfaffian(a) ** 2 - det) <= 1e-9 * max(1.0, abs(det))


def test_pfaffian_complex_squared_is_determinant(rng):
    a = random_antisymmetric(10, rng) + 1j * random_antisymmetric(10, rng)
    a /= np.sqrt(10)
    det = np.linalg.det(a)
    assert abs(pfaffian(a) ** 2 - det) <= 1e-9 * max(1.0, abs(det))


def test_pfaffian_transformation_rule(rng):
    # pf(B A B^T) = det(B) pf(A)
    a = random_antisymmetric(8, rng)
    b = rng.standard_normal((8, 8))
    assert pfaffian(b @ a @ b.T) == pytest.approx(np.linalg.det(b) * pfaffian(a))


def test_pfaffian_rejects_symmetric_input():
    with pytest.raises(NotAntisymmetric):
        pfaffian(np.eye(4))


def test_canonical_modes_block_diagonalize(rng):
    h = random_bath(6, rng, gap=0.1)
    modes = canonical_modes(h)

    assert np.all(np.diff(modes.energies) >= 0)
    np.testing.assert_allclose(modes.rotation @ modes.rotation.T, np.eye(12), atol=1e-12)
    np.testing.assert_allclose(
        modes.rotation @ h @ modes.rotation.T, block_matrix(modes.energies), atol=1e-10
    )
    np.testing.assert_allclose(modes.rebuild(), h, atol=1e-10)
    assert modes.zero_mode_count == 0


def test_canonical_modes_energies_are_singular_values(rng):
    h = random_antisymmetric(8, rng)
    modes = canonical_modes(h)
    singular = np.sort(np.linalg.svd(h, compute_uv=False))[::2]
    np.testing.assert_allclose(modes.energies, singular, atol=1e-10)


def test_canonical_modes_count_zero_modes():
    h = block_matrix([0.0, 0.7, 0.0])
    modes = canonical_modes(h)
    assert modes.zero_mode_count == 2
    np.testing.assert_allclose(modes.energies, [0.0, 0.0, 0.7], atol=1e-14)
    assert spectral_gap(modes) == pytest.approx(0.7)


def test_spectral_gap_of_zero_matrix_is_infinite():
    assert spectral_gap(canonical_modes(np.zeros((4, 4)))) == np.inf


def test_annihilators_obey_canonical_relations(rng):
    modes = canonical_modes(random_bath(4, rng))
    t = modes.annihilators
    # {b_j, b_k^dag} = 2 sum_p T_jp conj(T_kp)
    np.testing.assert_allclose(2 * t @ t.conj().T, np.eye(4), atol=1e-12)
    # {b_j, b_k} = 2 sum_p T_jp T_kp
    np.testing.assert_allclose(t @ t.T, np.zeros((4, 4)), atol=1e-12)
