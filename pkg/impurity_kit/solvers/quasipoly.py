"""Subspace diagonalization with a guaranteed precision.

The bath energies are truncated from below and rounded up to a uniform grid
of spacing ``gamma / s_star``. On the grid every degeneracy group couples to
the impurity through at most ``m`` modes. The deformed Hamiltonian is then
diagonalized exactly in the span of Fock states of the coupled modes with at
most ``s_star`` excitations and every decoupled mode empty. Both deformations
raise the Hamiltonian, so the result is an upper bound within ``gamma`` of
the ground energy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
import scipy.linalg
import scipy.sparse
from numpy.typing import NDArray

from impurity_kit.errors import BudgetExceeded
from impurity_kit.gaussian import (
    GaussianState,
    Superposition,
    fock_covariance,
    parity,
    random_covariance,
    transition,
    vacuum_contraction,
)
from impurity_kit.model import (
    DecoupledFrame,
    ImpurityModel,
    decouple,
    decouple_groups,
    truncate,
)
from impurity_kit.solvers.common import BaseSolver, SolverRegistry, SolverResult

if TYPE_CHECKING:
    from impurity_kit.model import ImpurityTerm

logger = logging.getLogger(__name__)

DEFAULT_DIM_CAP = 20_000
# tolerance when rounding an energy that already sits on the grid
GRID_SLACK = 1e-9

AssemblyMethod = Literal["fock", "wick"]


@dataclass(frozen=True)
class QuasipolyConfig:
    gamma: float = 0.1
    s_star: int | None = None
    dim_cap: int = DEFAULT_DIM_CAP
    method: AssemblyMethod = "fock"
    seed: int = 0
    max_doublings: int = 6


@dataclass(frozen=True, eq=False)
class DeformedModel:
    """Model whose bath energies sit on the grid ``{k gamma / s_star : k >= 1}``."""

    base: ImpurityModel
    gamma: float
    s_star: int
    grid_index: NDArray[np.int64]
    model: ImpurityModel

    @property
    def spacing(self) -> float:
        return self.gamma / self.s_star

    @property
    def grid_energies(self) -> NDArray[np.float64]:
        return self.model.modes.energies


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Fock states of the coupled modes with bounded excitation number.

    ``occupations[k]`` lists positions in ``coupled_modes`` that are occupied,
    ordered by excitation number, then lexicographically. State ``k`` is
    ``beta^dag_{i_1} ... beta^dag_{i_w} |vac>`` with ``i_1 < ... < i_w``.
    """

    coupled_modes: tuple[int, ...]
    occupations: tuple[tuple[int, ...], ...]
    frame: DecoupledFrame
    max_weight: int

    @property
    def dim(self) -> int:
        return len(self.occupations)

    @property
    def bitstrings(self) -> NDArray[np.int64]:
        out = np.zeros((self.dim, len(self.coupled_modes)), dtype=np.int64)
        for k, occupied in enumerate(self.occupations):
            out[k, list(occupied)] = 1
        return out

    @property
    def weights(self) -> NDArray[np.int64]:
        counts = [len(occupied) for occupied in self.occupations]
        return np.array(counts, dtype=np.int64)


def subspace_dimension(coupled: int, max_weight: int) -> int:
    return sum(math.comb(coupled, w) for w in range(min(max_weight, coupled) + 1))


def deform(model: ImpurityModel, gamma: float, s_star: int) -> DeformedModel:
    """Round every bath energy up to the next grid point.

    Raises:
        ValueError: Unless ``0 < gamma <= 1/2`` and ``s_star >= 1``.
    """
    if not 0.0 < gamma <= 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2], got {gamma}")
    if s_star < 1:
        raise ValueError(f"s_star must be at least 1, got {s_star}")
    spacing = gamma / s_star
    energies = model.modes.energies
    index = np.ceil(energies / spacing - GRID_SLACK).astype(np.int64)
    # the slack must never move a level below its original energy
    index += index * spacing < energies
    index = np.maximum(1, index)
    deformed = model.with_energies(index * spacing)
    return DeformedModel(model, gamma, s_star, index, deformed)


def build_subspace(
    deformed: DeformedModel,
    dim_cap: int = DEFAULT_DIM_CAP,
    max_weight: int | None = None,
) -> SubspaceBasis:
    """Decouple each grid level and enumerate the low-excitation Fock states.

    Raises:
        BudgetExceeded: If the dimension exceeds ``dim_cap``.
    """
    weight = deformed.s_star if max_weight is None else max_weight
    model = deformed.model
    if model.terms:
        levels = np.unique(deformed.grid_index)
        groups = [
            tuple(np.flatnonzero(deformed.grid_index == k).tolist()) for k in levels
        ]
        frame = decouple_groups(model.modes, model.m, groups)
    else:
        frame = decouple(model)
    coupled = frame.coupled
    dim = subspace_dimension(len(coupled), weight)
    if dim > dim_cap:
        raise BudgetExceeded(
            f"subspace dimension {dim} ({len(coupled)} coupled modes, "
            f"{weight} excitations) exceeds the cap {dim_cap}"
        )
    occupations = tuple(
        combo
        for w in range(min(weight, len(coupled)) + 1)
        for combo in combinations(range(len(coupled)), w)
    )
    logger.info("subspace: %d coupled modes, dimension %d", len(coupled), dim)
    return SubspaceBasis(coupled, occupations, frame, weight)


class _FockSpace:
    """Occupation basis of ``modes`` fermions with at most ``max_weight`` excitations.

    The states come in the order of ``SubspaceBasis.occupations``, so a basis
    with a smaller weight cap is a prefix of this one.
    """

    def __init__(self, modes: int, max_weight: int):
        self.modes = modes
        self.states = [
            sum(1 << i for i in combo)
            for w in range(min(max_weight, modes) + 1)
            for combo in combinations(range(modes), w)
        ]
        self.index = {state: k for k, state in enumerate(self.states)}

    @property
    def dim(self) -> int:
        return len(self.states)

    def creation(self, i: int) -> scipy.sparse.csr_matrix:
        bit = 1 << i
        below = bit - 1
        rows, cols, values = [], [], []
        for k, state in enumerate(self.states):
            target = self.index.get(state | bit)
            if state & bit or target is None:
                continue
            rows.append(target)
            cols.append(k)
            values.append(-1.0 if bin(state & below).count("1") % 2 else 1.0)
        shape = (self.dim, self.dim)
        return scipy.sparse.csr_matrix((values, (rows, cols)), shape=shape)

    def majoranas(self, forms: NDArray[np.complex128]) -> list[scipy.sparse.csr_matrix]:
        """Matrices of ``c_p = sum_i 2 conj(W_ip) beta_i + 2 W_ip beta_i^dag``."""
        creators = [self.creation(i) for i in range(self.modes)]
        out = []
        for p in range(forms.shape[1]):
            op = scipy.sparse.csr_matrix((self.dim, self.dim), dtype=np.complex128)
            for i, creator in enumerate(creators):
                w = forms[i, p]
                if w != 0:
                    op = op + 2.0 * np.conj(w) * creator.T + 2.0 * w * creator
            out.append(op.tocsr())
        return out


def _coupled_forms(basis: SubspaceBasis) -> NDArray[np.complex128]:
    return basis.frame.forms[list(basis.coupled_modes)]


def _impurity_fock(
    terms: tuple[ImpurityTerm, ...], basis: SubspaceBasis
) -> NDArray[np.complex128]:
    dim = basis.dim
    out = np.zeros((dim, dim), dtype=np.complex128)
    if not terms:
        return out
    top = max(term.weight for term in terms)
    space = _FockSpace(len(basis.coupled_modes), basis.max_weight + top)
    support = max((term.mask[-1] + 1 for term in terms if term.mask), default=0)
    majoranas = space.majoranas(_coupled_forms(basis)[:, :support])
    columns = scipy.sparse.eye(space.dim, dim, dtype=np.complex128, format="csr")
    for term in terms:
        block = columns
        for p in reversed(term.mask):
            block = majoranas[p] @ block
        out += term.coeff * block[:dim].toarray()
    return out


def _impurity_wick(
    terms: tuple[ImpurityTerm, ...], basis: SubspaceBasis
) -> NDArray[np.complex128]:
    dim = basis.dim
    forms = _coupled_forms(basis)
    vacuum = ground_covariance_of(basis)
    eye = np.eye(forms.shape[1])
    out = np.zeros((dim, dim), dtype=np.complex128)
    for a, bra in enumerate(basis.occupations):
        for b, ket in enumerate(basis.occupations):
            for term in terms:
                gap = len(bra) - len(ket)
                if abs(gap) > term.weight or (gap - term.weight) % 2:
                    continue
                rows = [forms[i] for i in reversed(bra)]
                rows.extend(eye[p] for p in term.mask)
                rows.extend(np.conj(forms[i]) for i in ket)
                if not rows:
                    out[a, b] += term.coeff
                    continue
                out[a, b] += term.coeff * vacuum_contraction(np.array(rows), vacuum)
    return out


def ground_covariance_of(basis: SubspaceBasis) -> NDArray[np.float64]:
    """Covariance of the common vacuum of all ``beta`` modes."""
    return mode_covariance(basis.frame, np.zeros(len(basis.frame.energies), dtype=int))


def frame_rotation(frame: DecoupledFrame) -> NDArray[np.float64]:
    """Orthogonal ``R'`` with ``beta_i = (e_{2i} + i e_{2i+1}) / 2``, ``e = R' c``."""
    n = len(frame.energies)
    out = np.empty((2 * n, 2 * n))
    out[0::2] = 2.0 * frame.forms.real
    out[1::2] = 2.0 * frame.forms.imag
    return out


def mode_covariance(
    frame: DecoupledFrame, occupations: NDArray[np.int64]
) -> NDArray[np.float64]:
    """Covariance of the Fock state of the ``beta`` modes with the given occupations."""
    r = frame_rotation(frame)
    return r.T @ fock_covariance(occupations) @ r


def one_body_matrix(
    basis: SubspaceBasis, energies: NDArray[np.float64]
) -> NDArray[np.complex128]:
    """``sum_j energies_j b_j^dag b_j`` in the subspace, in the ``beta`` frame."""
    rotation = basis.frame.rotation
    coupled = list(basis.coupled_modes)
    kmat = (rotation @ np.diag(energies) @ rotation.conj().T)[np.ix_(coupled, coupled)]
    space = _FockSpace(len(coupled), basis.max_weight)
    creators = [space.creation(i) for i in range(len(coupled))]
    dim = basis.dim
    out = np.zeros((dim, dim), dtype=np.complex128)
    for i, j in zip(*np.nonzero(np.abs(kmat) > 1e-15), strict=True):
        out += kmat[i, j] * (creators[i] @ creators[j].T)[:dim, :dim].toarray()
    return out


def impurity_matrix(
    deformed: DeformedModel, basis: SubspaceBasis, method: AssemblyMethod = "fock"
) -> NDArray[np.complex128]:
    """Matrix of the impurity Hamiltonian in the subspace."""
    terms = deformed.model.terms
    if method == "fock":
        return _impurity_fock(terms, basis)
    if method == "wick":
        return _impurity_wick(terms, basis)
    raise ValueError(f"unknown assembly method {method!r}")


def assemble(
    deformed: DeformedModel, basis: SubspaceBasis, method: AssemblyMethod = "fock"
) -> NDArray[np.complex128]:
    """Matrix of ``H' - bath_offset`` in the subspace.

    The bath part is diagonal, ``sum_j eps'_j z_j``. Impurity elements come
    either from sparse Fock-space operators or from vacuum Wick contractions
    of the linear forms ``beta_i``, ``c_p`` and ``beta_i^dag``.
    """
    energies = basis.frame.energies[list(basis.coupled_modes)]
    bath = basis.bitstrings @ energies
    impurity = impurity_matrix(deformed, basis, method)
    return np.diag(bath).astype(np.complex128) + impurity


@dataclass(frozen=True, eq=False)
class _Attempt:
    deformed: DeformedModel
    basis: SubspaceBasis
    impurity: NDArray[np.complex128]
    energy: float
    vector: NDArray[np.complex128]
    # 0 for an even number of excitations above the vacuum, 1 for odd
    sector: int


def _lowest_in_sectors(
    matrix: NDArray[np.complex128], weights: NDArray[np.int64]
) -> tuple[float, NDArray[np.complex128], int]:
    best: tuple[float, NDArray[np.complex128], int] | None = None
    for flip in (0, 1):
        idx = np.flatnonzero(weights % 2 == flip)
        if not idx.size:
            continue
        block = matrix[np.ix_(idx, idx)]
        values, vectors = scipy.linalg.eigh(block, subset_by_index=[0, 0])
        if best is None or values[0] < best[0]:
            full = np.zeros(len(matrix), dtype=np.complex128)
            full[idx] = vectors[:, 0]
            best = (float(values[0]), full, flip)
    assert best is not None
    return best


def _attempt(
    truncated: ImpurityModel, gamma: float, s_star: int, config: QuasipolyConfig
) -> _Attempt:
    deformed = deform(truncated, gamma, s_star)
    basis = build_subspace(deformed, config.dim_cap)
    impurity = impurity_matrix(deformed, basis, config.method)
    bath = basis.bitstrings @ basis.frame.energies[list(basis.coupled_modes)]
    value, vector, flip = _lowest_in_sectors(np.diag(bath) + impurity, basis.weights)
    energy = truncated.bath_offset + value
    logger.debug("s_star=%d dim=%d E=%.10f", s_star, basis.dim, energy)
    return _Attempt(deformed, basis, impurity, energy, vector, flip)


def _superposition(attempt: _Attempt, rng: np.random.Generator) -> Superposition:
    """Express the subspace eigenvector through anchored Fock-Gaussian states.

    A random Gaussian state ``E`` of the vacuum parity fixes the phases:
    ``<E|F_z|vac>`` is a Wick contraction, ``F_z`` the product of the Majorana
    forms ``beta_i + beta_i^dag`` of the occupied modes. For an odd sector the
    reference is ``c_1 |E>`` and ``c_1`` enters the contraction first.
    """
    basis = attempt.basis
    frame = basis.frame
    n = len(frame.energies)
    vacuum = ground_covariance_of(basis)
    sign = parity(vacuum)
    e_cov = random_covariance(n, rng, sign)
    vacuum_state = GaussianState.anchored(vacuum, e_cov)
    while not vacuum_state.is_anchored:
        e_cov = random_covariance(n, rng, sign)
        vacuum_state = GaussianState.anchored(vacuum, e_cov)
    pair = transition(GaussianState(e_cov, 1 + 0j, e_cov), vacuum_state)

    reference = e_cov
    prefix: list[NDArray[np.float64]] = []
    if attempt.sector:
        # c_1 (.) c_1 keeps c_1 and flips every other Majorana
        flip = -np.eye(2 * n)
        flip[0, 0] = 1.0
        reference = flip @ e_cov @ flip.T
        prefix = [np.eye(2 * n)[0]]
    hermitian_forms = 2.0 * _coupled_forms(basis).real

    states = []
    coefficients = []
    for k in np.flatnonzero(np.abs(attempt.vector) > 1e-14):
        occupied = basis.occupations[k]
        rows = prefix + [hermitian_forms[i] for i in occupied]
        anchor = pair.contraction(np.array(rows)) if rows else pair.overlap
        occupation = np.zeros(n, dtype=int)
        occupation[[basis.coupled_modes[i] for i in occupied]] = 1
        cov = mode_covariance(frame, occupation)
        states.append(GaussianState(cov, complex(anchor), reference))
        coefficients.append(attempt.vector[k])
    return Superposition(np.array(coefficients, dtype=np.complex128), tuple(states))


def solve(
    model: ImpurityModel, gamma: float, config: QuasipolyConfig | None = None
) -> SolverResult:
    """Energy ``E`` with ``e_g <= E <= e_g + gamma`` and a low-energy state.

    Without a fixed ``s_star`` the excitation cutoff starts at ``m`` and
    doubles until two consecutive energies agree within ``gamma / 4`` or the
    dimension cap is reached. The report carries ``psi_energy``, the energy
    of the returned state under the undeformed Hamiltonian.

    Raises:
        ValueError: Unless ``0 < gamma <= 1/2``.
        BudgetExceeded: If the first subspace already exceeds the cap.
    """
    config = config or QuasipolyConfig(gamma=gamma)
    if not 0.0 < gamma <= 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2], got {gamma}")
    half = gamma / 2.0
    truncated = truncate(model, half)

    s_star = config.s_star or max(model.m, 1)
    best = _attempt(truncated, half, s_star, config)
    capped = False
    if config.s_star is None:
        for _ in range(config.max_doublings):
            try:
                current = _attempt(truncated, half, 2 * s_star, config)
            except BudgetExceeded as e:
                logger.warning("keeping s_star=%d: %s", s_star, e)
                capped = True
                break
            s_star *= 2
            converged = abs(current.energy - best.energy) <= gamma / 4.0
            best = current
            if converged:
                break

    vector = best.vector
    undeformed = one_body_matrix(best.basis, model.modes.energies) + best.impurity
    psi_energy = float(np.real(np.vdot(vector, undeformed @ vector)))
    psi_energy += model.bath_offset
    psi = _superposition(best, np.random.default_rng(config.seed))
    report: dict[str, Any] = {
        "s_star": s_star,
        "dim": best.basis.dim,
        "gamma": gamma,
        "spacing": best.deformed.spacing,
        "coupled": len(best.basis.coupled_modes),
        "parity": parity(ground_covariance_of(best.basis)) * (-1) ** best.sector,
        "psi_energy": psi_energy,
        "capped": capped,
    }
    logger.info(
        "quasipoly: E=%.10f with s_star=%d, dim=%d", best.energy, s_star, best.basis.dim
    )
    return SolverResult(best.energy, psi, report)


@SolverRegistry.register
class QuasipolySolver(BaseSolver):
    """Deformed-bath subspace diagonalization with precision ``gamma``."""

    def __init__(
        self,
        gamma: float = 0.1,
        s_star: int | None = None,
        dim_cap: int = DEFAULT_DIM_CAP,
        method: AssemblyMethod = "fock",
        seed: int = 0,
    ):
        self.config = QuasipolyConfig(gamma, s_star, dim_cap, method, seed)

    def solve(self, model: ImpurityModel) -> SolverResult:
        return solve(model, self.config.gamma, self.config)
