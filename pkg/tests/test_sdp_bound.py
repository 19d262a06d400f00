import json
from functools import reduce

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from impurity_kit.errors import (
    BudgetExceeded,
    DimensionMismatch,
    NotOrthogonal,
    RepresentationFailure,
)
from impurity_kit.exact_oracle import ground_energy_exact, majorana_pauli
from impurity_kit.gaussian import (
    GaussianState,
    Superposition,
    covariance_of_superposition,
    fock_covariance,
    random_covariance,
    vacuum_covariance,
)
from impurity_kit.model import ImpurityModel, ImpurityTerm
from impurity_kit.sdp_bound import (
    DualCertificate,
    MonomialSpace,
    OperatorBasis,
    build_program,
    conservative_certificate,
    export_sdpa,
    hamiltonian_vector,
    localize,
    program_from_sdpa,
    read_sdpa,
    verify_certificate,
)
from impurity_kit.skew_linear import block_matrix
from tests.conftest import dense_hamiltonian, exact_energy, random_bath, random_gapped_model


def dense_operators(basis):
    """Dense matrices of every ``C_p`` of ``basis``."""
    n = basis.n
    majoranas = np.array([majorana_pauli(p, n).matrix(n).toarray() for p in range(2 * n)])
    # f_j = sum_p R_pj c_p
    f = np.einsum("pj,pab->jab", basis.rotation, majoranas)
    d = np.einsum("ij,jab->iab", basis.d_forms, f)
    return [reduce(np.matmul, [d[i] for i in label]) for label in basis.labels]


def operator_sum(weights, ops):
    return sum(
        weights[p, q] * ops[p].conj().T @ ops[q]
        for p in range(len(ops))
        for q in range(len(ops))
        if weights[p, q] != 0
    )


@pytest.fixture(scope="module")
def interacting():
    """Quartic impurity on four modes, localized on one extra bath mode."""
    model = random_gapped_model(4, m=4, seed=21)
    rotation = special_ortho_group.rvs(8, random_state=np.random.default_rng(5))
    return model, build_program(model, rotation, k=1)


@pytest.fixture
def quadratic():
    rng = np.random.default_rng(3)
    model = ImpurityModel(
        n=3, m=2, h=random_bath(3, rng), terms=(ImpurityTerm((0, 1), 0.3j),)
    )
    rotation = special_ortho_group.rvs(6, random_state=rng)
    return model, build_program(model, rotation, k=0)


def test_monomial_space_size():
    assert len(MonomialSpace(8)) == MonomialSpace.size(8) == 256 - 8 - 1
    assert len(MonomialSpace(4)) == 16


def test_operator_basis_labels():
    basis = OperatorBasis.build(np.eye(8), m=4, k=1)
    assert basis.size == 8 + 20
    assert basis.labels[0] == (4,)
    assert basis.labels[8] == (0, 1, 2)


def test_program_reproduces_hamiltonian(interacting):
    model, program = interacting
    ops = dense_operators(program.basis)
    np.testing.assert_allclose(operator_sum(program.h1, ops), dense_hamiltonian(model), atol=1e-8)
    np.testing.assert_allclose(operator_sum(program.i1, ops), np.eye(16), atol=1e-10)


def test_dependencies_vanish(interacting):
    _, program = interacting
    assert program.kernel_dim > 0
    ops = dense_operators(program.basis)
    for kernel in program.kernel[:5]:
        np.testing.assert_allclose(kernel, kernel.conj().T)
        np.testing.assert_allclose(operator_sum(kernel, ops), 0.0, atol=1e-8)


def test_ground_state_moments_are_feasible(interacting):
    model, program = interacting
    e_g, vec = ground_energy_exact(model)
    ops = dense_operators(program.basis)
    images = np.array([op @ vec for op in ops])
    moments = images.conj() @ images.T
    assert np.linalg.eigvalsh(moments).min() >= -1e-10
    assert np.sum(program.i1 * moments).real == pytest.approx(1.0)
    assert np.sum(program.h1 * moments).real == pytest.approx(e_g, abs=1e-8)
    for kernel in program.kernel[:5]:
        assert abs(np.sum(kernel * moments)) < 1e-8


def test_conservative_certificate(interacting):
    model, program = interacting
    cert = conservative_certificate(program)
    valid, margin = verify_certificate(program, cert)
    assert valid
    assert margin >= 0.0
    assert cert.y0 <= exact_energy(model) + 1e-9

    raised = DualCertificate(cert.y0 + 1.0, cert.y)
    valid, margin = verify_certificate(program, raised)
    assert not valid
    assert margin < 0.0


def test_certificate_length_must_match(quadratic):
    _, program = quadratic
    with pytest.raises(DimensionMismatch):
        verify_certificate(program, DualCertificate(0.0, (1.0,)))


def test_quadratic_program_dependencies(quadratic):
    _, program = quadratic
    # f_p f_p = 1 and f_p f_q + f_q f_p = 0 are the only relations
    assert program.size == 6
    assert program.kernel_dim == 5 + 15


def test_sdpa_round_trip(quadratic, tmp_path):
    _, program = quadratic
    path = tmp_path / "program.dat-s"
    export_sdpa(program, path)
    problem = read_sdpa(path)
    assert problem.block_sizes == [12]
    np.testing.assert_array_equal(problem.c, [2.0] + [0.0] * program.kernel_dim)

    restored = program_from_sdpa(problem)
    np.testing.assert_array_equal(restored.h1, program.h1)
    np.testing.assert_array_equal(restored.i1, program.i1)
    np.testing.assert_array_equal(restored.kernel, program.kernel)


def test_certificate_documents(tmp_path):
    cert = DualCertificate.from_sdpa_solution(np.array([1.5, -2.0, 0.25]))
    assert cert == DualCertificate(-1.5, (2.0, -0.25))
    path = tmp_path / "cert.json"
    cert.dump(path)
    assert json.loads(path.read_text()) == {"y0": -1.5, "y": [2.0, -0.25]}
    assert DualCertificate.load(path) == cert


def test_build_program_validates_inputs(quadratic):
    model, _ = quadratic
    with pytest.raises(DimensionMismatch):
        build_program(model, np.eye(4), k=0)
    with pytest.raises(NotOrthogonal):
        build_program(model, 2.0 * np.eye(6), k=0)
    with pytest.raises(ValueError, match="k must lie"):
        build_program(model, np.eye(6), k=3)
    with pytest.raises(BudgetExceeded):
        build_program(model, np.eye(6), k=0, memory_budget_mb=0)


def test_terms_above_the_degree_cap():
    model = ImpurityModel(
        n=4, m=8, h=np.zeros((8, 8)), terms=(ImpurityTerm(tuple(range(8)), 1.0 + 0j),)
    )
    with pytest.raises(RepresentationFailure):
        hamiltonian_vector(model, np.eye(8), MonomialSpace(8))


def test_localize_gaussian_state(rng):
    cov = random_covariance(4, rng)
    psi = Superposition(np.ones(1, dtype=complex), (GaussianState.anchored(cov, cov),))
    result = localize(psi)
    assert result.k == 0
    np.testing.assert_allclose(result.singular_values, 1.0, atol=1e-9)


def test_localize_counts_excited_modes(rng):
    # (|00000> + |11110>) / sqrt(2): four modes carry the excitation
    reference = random_covariance(5, rng)
    states = (
        GaussianState.anchored(vacuum_covariance(5), reference),
        GaussianState.anchored(fock_covariance([1, 1, 1, 1, 0]), reference),
    )
    psi = Superposition(np.ones(2, dtype=complex) / np.sqrt(2), states)
    result = localize(psi)
    assert result.k == 4
    np.testing.assert_allclose(result.singular_values, [0, 0, 0, 0, 1], atol=1e-9)
    cov = covariance_of_superposition(psi)
    np.testing.assert_allclose(
        result.rotation.T @ cov @ result.rotation,
        block_matrix(result.singular_values),
        atol=1e-9,
    )
