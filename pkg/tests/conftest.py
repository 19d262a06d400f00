from itertools import combinations
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from impurity_kit.exact_oracle import ground_energy_exact, to_qubits
from impurity_kit.model import ImpurityModel, ImpurityTerm
from impurity_kit.skew_linear import block_matrix

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


def random_antisymmetric(dim, rng):
    x = rng.standard_normal((dim, dim))
    return x - x.T


def random_bath(n, rng, gap=0.2, top=1.0):
    """Antisymmetric ``h`` with single-particle energies uniform in ``[gap, top]``."""
    energies = np.sort(rng.uniform(gap, top, n))
    r = special_ortho_group.rvs(2 * n, random_state=rng)
    h = r.T @ block_matrix(energies) @ r
    return 0.5 * (h - h.T)


def random_gapped_model(n, m=4, seed=0, gap=0.2, interaction=0.5):
    """Gapped bath with ``||h|| <= 1`` and random quadratic plus quartic impurity terms."""
    rng = np.random.default_rng(seed)
    h = random_bath(n, rng, gap)
    terms = [
        ImpurityTerm(mask, complex(interaction * rng.standard_normal()))
        for mask in combinations(range(m), 4)
    ]
    terms.extend(
        ImpurityTerm(mask, 0.2j * rng.standard_normal()) for mask in combinations(range(m), 2)
    )
    return ImpurityModel(n=n, m=m, h=h, terms=tuple(terms))


def quadratic_model(n, seed=0, gap=0.2):
    rng = np.random.default_rng(seed)
    return ImpurityModel(n=n, m=0, h=random_bath(n, rng, gap))


def dense_hamiltonian(model):
    return to_qubits(model).sparse().toarray()


def exact_energy(model):
    return ground_energy_exact(model, "dense")[0]
