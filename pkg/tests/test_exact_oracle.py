import numpy as np
import pytest

from impurity_kit.errors import DimensionTooLarge, OrthogonalToReference
from impurity_kit.exact_oracle import (
    bath_energy_tail,
    covariance_spectrum,
    energy_tail_bound,
    feasibility_inputs,
    gaussian_vector,
    ground_energy_exact,
    majorana_pauli,
    monomial_pauli,
    sdp_feasibility_residuals,
    state_vector,
    to_qubits,
)
from impurity_kit.gaussian import GaussianState, fock_covariance, ground_covariance, vacuum_covariance
from impurity_kit.model import ImpurityModel, anderson
from tests.conftest import quadratic_model, random_gapped_model

ANDERSON_SMALL = [(1.0, -10.00932), (8.0, -9.89010), (64.0, -9.81220)]
ANDERSON_LARGE = [(1.0, -20.25487), (8.0, -20.11633), (64.0, -20.02426)]


def test_majoranas_anticommute():
    n = 3
    ops = [majorana_pauli(p, n).matrix(n).toarray() for p in range(2 * n)]
    for p in range(2 * n):
        for q in range(2 * n):
            anti = ops[p] @ ops[q] + ops[q] @ ops[p]
            np.testing.assert_allclose(anti, 2.0 * (p == q) * np.eye(2**n), atol=1e-14)


def test_first_majorana_is_x():
    term = majorana_pauli(0, 3)
    assert term.label(3) == "XII"
    assert term.label_coeff() == 1


def test_quadratic_pair_is_minus_z():
    image = monomial_pauli((0, 1), 2)
    assert image.label(2) == "ZI"
    assert 1j * image.label_coeff() == -1


def test_anderson_impurity_has_four_pauli_terms():
    u = 3.0
    impurity = anderson(3, u).terms
    model = ImpurityModel(n=2, m=4, h=np.zeros((4, 4)), terms=impurity, shift=0.0)
    ham = to_qubits(model)
    labels = {t.label(2): t.label_coeff() for t in ham.terms}
    assert labels == pytest.approx(
        {"II": 0.25 * u, "ZI": -0.25 * u, "IZ": -0.25 * u, "ZZ": 0.25 * u}
    )


def test_quadratic_model_has_zero_ground_energy():
    energy, vec = ground_energy_exact(quadratic_model(5, seed=2))
    assert energy == pytest.approx(0.0, abs=1e-9)
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_ground_vector_is_an_eigenvector():
    model = random_gapped_model(4, seed=11)
    energy, vec = ground_energy_exact(model)
    residual = to_qubits(model).apply(vec) - energy * vec
    assert np.linalg.norm(residual) < 1e-9


def test_dense_and_lanczos_agree():
    model = random_gapped_model(10, seed=3)
    dense, _ = ground_energy_exact(model, "dense")
    lanczos, _ = ground_energy_exact(model, "lanczos")
    assert lanczos == pytest.approx(dense, abs=1e-6)


@pytest.mark.parametrize(("u", "expected"), ANDERSON_SMALL)
def test_anderson_golden_values(u, expected):
    energy, _ = ground_energy_exact(anderson(8, u), "dense")
    assert energy == pytest.approx(expected, abs=1e-4)


@pytest.mark.slow
@pytest.mark.parametrize(("u", "expected"), ANDERSON_LARGE)
def test_anderson_golden_values_sixteen_modes(u, expected):
    energy, _ = ground_energy_exact(anderson(16, u), "lanczos")
    assert energy == pytest.approx(expected, abs=1e-4)


def test_size_limits():
    with pytest.raises(DimensionTooLarge):
        ground_energy_exact(quadratic_model(13), "dense")
    with pytest.raises(DimensionTooLarge):
        ground_energy_exact(quadratic_model(21), "lanczos")


def test_state_vector_needs_an_anchor():
    reference = vacuum_covariance(2)
    state = GaussianState.anchored(fock_covariance([1, 1]), reference)
    with pytest.raises(OrthogonalToReference):
        state_vector(state, gaussian_vector(reference))


def test_covariance_spectrum_extremes():
    model = quadratic_model(4, seed=6)
    ground = gaussian_vector(ground_covariance(model.modes))
    np.testing.assert_allclose(covariance_spectrum(ground, model.modes), 0.0, atol=1e-9)
    full = gaussian_vector(-ground_covariance(model.modes))
    np.testing.assert_allclose(covariance_spectrum(full, model.modes), 1.0, atol=1e-9)


def test_covariance_spectrum_of_interacting_ground_state():
    model = random_gapped_model(6, seed=8)
    _, vec = ground_energy_exact(model)
    sigma = covariance_spectrum(vec, model.modes)
    assert np.all(np.diff(sigma) <= 1e-12)
    assert sigma[0] <= 1 + 1e-10
    assert sigma[-1] >= -1e-10


def test_feasibility_without_impurity():
    model = quadratic_model(4, seed=9)
    _, vec = ground_energy_exact(model)
    commutator, violation = sdp_feasibility_residuals(*feasibility_inputs(vec, model))
    assert commutator < 1e-9
    assert violation < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_ground_states_satisfy_feasibility_conditions(seed):
    model = random_gapped_model(6, seed=seed)
    _, vec = ground_energy_exact(model)
    commutator, violation = sdp_feasibility_residuals(*feasibility_inputs(vec, model))
    assert commutator < 1e-7
    assert violation < 1e-7


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100, 120))
def test_ground_state_structure_on_ten_modes(seed):
    model = random_gapped_model(10, m=4, seed=seed)
    _, vec = ground_energy_exact(model)
    commutator, violation = sdp_feasibility_residuals(*feasibility_inputs(vec, model))
    assert commutator < 1e-7
    assert violation < 1e-7
    sigma = covariance_spectrum(vec, model.modes)
    assert np.all(np.diff(sigma) <= 1e-12)
    assert sigma[(model.n + 1) // 2 - 1] < 0.1


def test_bath_energy_tail_vanishes_without_impurity():
    model = quadratic_model(4, seed=10)
    _, vec = ground_energy_exact(model)
    for tau in (0.0, 0.5, 3.0):
        assert bath_energy_tail(vec, model, tau) < 1e-9


def test_bath_energy_tail_within_bound():
    model = random_gapped_model(6, seed=12)
    _, vec = ground_energy_exact(model)
    top = float(model.modes.energies.sum())
    assert bath_energy_tail(vec, model, top + 0.1) < 1e-9
    assert bath_energy_tail(vec, model, 0.0) <= 1.0 + 1e-12
    tau = 8 * np.e * 4 + 1.0
    assert bath_energy_tail(vec, model, tau) <= energy_tail_bound(tau, 4)


def test_energy_tail_bound_is_trivial_below_threshold():
    assert energy_tail_bound(10.0, 4) == 1.0
    assert energy_tail_bound(1000.0, 4) < 1e-10
