import json

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from impurity_kit.errors import InvalidModel
from impurity_kit.exact_oracle import gaussian_vector, ground_energy_exact
from impurity_kit.gaussian import ground_covariance, random_covariance
from impurity_kit.model import (
    ImpurityModel,
    ImpurityTerm,
    anderson,
    block_tridiagonalize,
    decouple,
    dump,
    load,
    truncate,
)
from impurity_kit.skew_linear import block_matrix, canonical_modes
from tests.conftest import (
    dense_hamiltonian,
    exact_energy,
    quadratic_model,
    random_bath,
    random_gapped_model,
)


def test_load_small_model(data_dir):
    model = load(data_dir / "two_mode_model.json")
    assert model.n == 2
    assert model.m == 2
    assert model.h[0, 1] == 1.0
    assert model.h[1, 0] == -1.0
    assert model.terms == (ImpurityTerm((0, 1), 0.5j),)


def test_model_round_trip(tmp_path):
    model = random_gapped_model(3, seed=4)
    path = tmp_path / "model.json"
    dump(model, path)
    restored = load(path)
    np.testing.assert_allclose(restored.h, model.h)
    assert restored.m == model.m
    assert restored.shift == pytest.approx(model.shift)
    assert [t.mask for t in restored.terms] == [t.mask for t in model.terms]


@pytest.mark.parametrize(
    ("doc", "field"),
    [
        ({"n": "two"}, "n"),
        ({"n": 0}, "n"),
        ({"n": 2, "h": [[1, 1, 0.5]]}, "h[0]"),
        ({"n": 2, "h": [[1, 5, 0.5]]}, "h[0]"),
        ({"n": 2, "h": [[1, "x"]]}, "h[0]"),
        ({"n": 2, "impurity": [{"mask": [1, 2, 3], "re": 1.0}]}, "impurity[0].mask"),
        ({"n": 2, "impurity": [{"mask": [1, 1], "im": 1.0}]}, "impurity[0].mask"),
        ({"n": 2, "impurity": [{"mask": [1, 2], "re": 1.0}]}, "impurity[0].re"),
        ({"n": 2, "impurity": [{"mask": [1, 2, 3, 4], "im": 1.0}]}, "impurity[0].im"),
        ({"n": 2, "impurity": [{"mask": [1, 2], "im": "big"}]}, "impurity[0].im"),
        ({"n": 2, "m": 3}, "m"),
        ({"n": 2, "m": 2, "impurity": [{"mask": [1, 4], "im": 1.0}]}, "impurity[0].mask"),
        ({"n": 2, "h": [[1, 2, 5.0]], "norm_check": True}, "h"),
        ({"n": 2, "shift": "zero"}, "shift"),
    ],
)
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(InvalidModel) as excinfo:
        ImpurityModel.from_dict(doc)
    assert excinfo.value.field == field


def test_impurity_size_inferred_from_masks():
    doc = {"n": 3, "impurity": [{"mask": [1, 3], "im": 0.5}]}
    assert ImpurityModel.from_dict(doc).m == 4


def test_default_shift_zeroes_bath_ground_energy(rng):
    model = quadratic_model(4, seed=1)
    assert model.shift == pytest.approx(model.e0)
    assert exact_energy(model) == pytest.approx(0.0, abs=1e-9)


def test_norm_flag(rng):
    assert ImpurityModel(n=3, m=0, h=random_bath(3, rng), norm_check=True).norm_ok
    assert not ImpurityModel(n=2, m=0, h=block_matrix([0.5, 1.5])).norm_ok


def test_anderson_terms():
    model = anderson(8, 2.0)
    assert model.shift == 0.0
    assert model.m == 4
    assert {t.mask: t.coeff for t in model.terms} == {
        (0, 1): 0.5j,
        (2, 3): 0.5j,
        (0, 1, 2, 3): -0.5,
        (): 0.5,
    }
    np.testing.assert_allclose(model.h, -model.h.T)
    assert model.h[15, 0] == 2.0


def test_anderson_rejects_bad_parameters():
    with pytest.raises(InvalidModel):
        anderson(2, 1.0)
    with pytest.raises(InvalidModel):
        anderson(8, -1.0)


def test_anderson_free_case_from_canonical_modes():
    model = anderson(5, 0.0)
    assert exact_energy(model) == pytest.approx(-model.e0, abs=1e-9)


def test_normal_form_energy_matches_dense(rng):
    model = random_gapped_model(3, seed=2)
    cov = random_covariance(3, rng)
    vec = gaussian_vector(cov)
    expected = np.vdot(vec, dense_hamiltonian(model) @ vec).real
    assert model.normal_form().gaussian_energy(cov) == pytest.approx(expected, abs=1e-9)


def test_ground_covariance_has_zero_bath_energy(rng):
    model = quadratic_model(4, seed=3)
    cov = ground_covariance(model.modes)
    assert model.normal_form().gaussian_energy(cov) == pytest.approx(0.0, abs=1e-10)


def test_truncate_raises_low_energies():
    h = block_matrix([0.001, 0.01, 0.5])
    model = ImpurityModel(n=3, m=2, h=h, terms=(ImpurityTerm((0, 1), 0.1j),))
    cut = truncate(model, 0.1)
    np.testing.assert_allclose(cut.modes.energies, [0.05, 0.05, 0.5])
    assert cut.bath_offset == pytest.approx(model.bath_offset)
    assert truncate(cut, 0.1) is cut


def test_truncate_only_raises_the_ground_energy():
    model = random_gapped_model(4, seed=5, gap=0.001)
    cut = truncate(model, 0.2)
    raised = float(np.sum(cut.modes.energies - model.modes.energies))
    shift = exact_energy(cut) - exact_energy(model)
    assert -1e-9 <= shift <= raised + 1e-9


def low_energy_bath_model(seed):
    model = random_gapped_model(6, seed=seed)
    rng = np.random.default_rng(seed)
    energies = np.concatenate([[0.001], rng.uniform(0.001, 0.2, 5)])
    return model.with_energies(np.sort(energies))


@pytest.mark.parametrize("gamma", [0.1, 0.3])
@pytest.mark.parametrize("seed", range(20))
def test_truncation_moves_the_ground_energy_by_at_most_gamma(seed, gamma):
    model = low_energy_bath_model(seed)
    cut = truncate(model, gamma)
    assert cut is not model
    shift = exact_energy(cut) - exact_energy(model)
    assert -1e-9 <= shift <= gamma + 1e-9


def test_truncate_rejects_nonpositive_gamma():
    with pytest.raises(ValueError, match="gamma"):
        truncate(anderson(4, 1.0), 0.0)


def test_decouple_degenerate_bath(rng):
    # three modes at one energy; an m = 2 impurity sees at most two of them
    r = special_ortho_group.rvs(6, random_state=rng)
    h = r.T @ block_matrix([0.5, 0.5, 0.5]) @ r
    h = 0.5 * (h - h.T)
    model = ImpurityModel(n=3, m=2, h=h, terms=(ImpurityTerm((0, 1), 0.3j),))
    frame = decouple(model, group_tolerance=1e-9)

    assert frame.groups == ((0, 1, 2),)
    assert len(frame.coupled) <= 2
    assert len(frame.decoupled) >= 1
    np.testing.assert_allclose(frame.rotation @ frame.rotation.conj().T, np.eye(3), atol=1e-12)
    for j in frame.decoupled:
        np.testing.assert_allclose(frame.forms[j, :2], 0.0, atol=1e-12)


def test_decouple_without_impurity():
    model = quadratic_model(3)
    frame = decouple(model)
    assert frame.coupled == ()
    assert frame.decoupled == (0, 1, 2)


def free_spectrum(h):
    """All levels of ``(i/4) sum h_pq c_p c_q``."""
    levels = np.zeros(1)
    for energy in canonical_modes(h).energies:
        levels = np.concatenate([levels - energy / 2, levels + energy / 2])
    return levels


def split_bath_model(seed):
    """Impurity on a three-mode bath plus two modes it never reaches."""
    rng = np.random.default_rng(seed)
    h = np.zeros((10, 10))
    h[:6, :6] = random_bath(3, rng)
    h[6:, 6:] = random_bath(2, rng)
    terms = (
        ImpurityTerm((0, 1, 2, 3), 0.5 + 0j),
        ImpurityTerm((0, 2), 0.3j),
    )
    return ImpurityModel(n=5, m=4, h=h, terms=terms)


@pytest.mark.parametrize(
    "model", [anderson(6, 8.0), random_gapped_model(5, seed=3), split_bath_model(4)]
)
def test_block_tridiagonal_mapping_keeps_spectrum(model):
    chain = block_tridiagonalize(model)
    dim = 2 * model.n
    np.testing.assert_allclose(chain.basis.T @ chain.basis, np.eye(dim), atol=1e-10)
    np.testing.assert_allclose(
        chain.basis.T @ model.h @ chain.basis, chain.transformed, atol=1e-10
    )
    original = np.linalg.eigvalsh(dense_hamiltonian(model))
    chain_levels = np.linalg.eigvalsh(dense_hamiltonian(chain.chain_model))
    rest_levels = free_spectrum(chain.h_rest) if chain.h_rest.size else np.zeros(1)
    mapped = np.sort(np.add.outer(chain_levels, rest_levels).ravel())
    np.testing.assert_allclose(original, mapped, atol=1e-8)


def test_split_bath_leaves_a_remainder():
    chain = block_tridiagonalize(split_bath_model(4))
    assert chain.h_rest.shape == (4, 4)
    assert chain.rest_energy == pytest.approx(free_spectrum(chain.h_rest).min())


def test_block_tridiagonal_mapping_ground_energy():
    model = random_gapped_model(5, seed=7)
    chain = block_tridiagonalize(model)
    assert sum(chain.block_sizes) <= 10
    expected = ground_energy_exact(model, "dense")[0]
    mapped = ground_energy_exact(chain.chain_model, "dense")[0] + chain.rest_energy
    assert mapped == pytest.approx(expected, abs=1e-8)


def test_to_dict_is_json_ready():
    doc = anderson(3, 1.0).to_dict()
    assert json.loads(json.dumps(doc))["n"] == 3
