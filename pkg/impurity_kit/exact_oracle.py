"""Exact diagonalization on the Jordan-Wigner qubit image of a model.

Majorana ``c_{2j}`` (0-based) maps to ``Z_0 ... Z_{j-1} X_j`` and ``c_{2j+1}``
to ``Z_0 ... Z_{j-1} Y_j``. Qubit ``j`` is bit ``n - 1 - j`` of a basis index,
so the index of ``(a_1^dag)^{x_1} ... (a_n^dag)^{x_n} |0^n>`` reads ``x_1 ... x_n``
in binary. Pauli strings are stored as ``coeff * X^x Z^z`` with bitmasks in
the same convention.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Literal

import numpy as np
import scipy.linalg
import scipy.sparse
from numpy.typing import NDArray
from scipy.sparse.linalg import LinearOperator, eigsh

from impurity_kit.errors import DimensionTooLarge, OrthogonalToReference
from impurity_kit.gaussian import parity

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from impurity_kit.gaussian import GaussianState, Superposition
    from impurity_kit.model import ImpurityModel
    from impurity_kit.skew_linear import CanonicalModes

logger = logging.getLogger(__name__)

DENSE_MAX_MODES = 12
LANCZOS_MAX_MODES = 20
# sectors up to this size are diagonalized densely even by the Lanczos path
SMALL_SECTOR = 256
DEFAULT_MEMORY_BUDGET_MB = 512

Method = Literal["dense", "lanczos"]

_LETTERS = {
    (False, False): "I",
    (True, False): "X",
    (False, True): "Z",
    (True, True): "Y",
}


def bit_parity(values: NDArray[np.int64]) -> NDArray[np.int64]:
    """Parity of the set bits of every entry."""
    v = np.array(values, dtype=np.int64, copy=True)
    for shift in (32, 16, 8, 4, 2, 1):
        v ^= v >> shift
    return v & 1


@dataclass(frozen=True)
class PauliTerm:
    x: int
    z: int
    coeff: complex

    def times(self, other: PauliTerm) -> PauliTerm:
        # Z^z1 X^x2 = (-1)^{|z1 & x2|} X^x2 Z^z1
        sign = -1 if bin(self.z & other.x).count("1") % 2 else 1
        coeff = sign * self.coeff * other.coeff
        return PauliTerm(self.x ^ other.x, self.z ^ other.z, coeff)

    def label(self, n: int) -> str:
        """Pauli string such as ``"ZZXI"``, qubit 0 first.

        ``Y`` absorbs a factor ``i``; see ``label_coeff``.
        """
        bits = [1 << (n - 1 - j) for j in range(n)]
        return "".join(_LETTERS[bool(self.x & b), bool(self.z & b)] for b in bits)

    def label_coeff(self) -> complex:
        """Coefficient of the string returned by ``label`` (``XZ = -iY``)."""
        return self.coeff * (-1j) ** bin(self.x & self.z).count("1")

    def apply(self, vec: NDArray[np.complex128]) -> NDArray[np.complex128]:
        idx = np.arange(len(vec), dtype=np.int64)
        out = np.empty_like(vec, dtype=np.complex128)
        out[idx ^ self.x] = self.coeff * (1 - 2 * bit_parity(idx & self.z)) * vec
        return out

    def matrix(self, n: int) -> scipy.sparse.csr_matrix:
        idx = np.arange(2**n, dtype=np.int64)
        values = self.coeff * (1 - 2 * bit_parity(idx & self.z))
        shape = (2**n, 2**n)
        return scipy.sparse.csr_matrix((values, (idx ^ self.x, idx)), shape=shape)


def majorana_pauli(p: int, n: int) -> PauliTerm:
    """Jordan-Wigner image of the 0-based Majorana ``c_p``."""
    if not 0 <= p < 2 * n:
        raise ValueError(f"Majorana index {p} outside 0..{2 * n - 1}")
    j = p // 2
    prefix = sum(1 << (n - 1 - k) for k in range(j))
    bit = 1 << (n - 1 - j)
    if p % 2 == 0:
        return PauliTerm(bit, prefix, 1 + 0j)
    return PauliTerm(bit, prefix | bit, 1j)


def monomial_pauli(mask: Sequence[int], n: int) -> PauliTerm:
    """Image of ``c(x)``, the ordered product of the masked Majoranas."""
    out = PauliTerm(0, 0, 1 + 0j)
    for p in mask:
        out = out.times(majorana_pauli(p, n))
    return out


@dataclass(frozen=True, eq=False)
class QubitHamiltonian:
    n: int
    terms: tuple[PauliTerm, ...]

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[PauliTerm]) -> QubitHamiltonian:
        merged: dict[tuple[int, int], complex] = defaultdict(complex)
        for term in terms:
            merged[term.x, term.z] += term.coeff
        kept = tuple(
            PauliTerm(x, z, c) for (x, z), c in sorted(merged.items()) if abs(c) > 1e-15
        )
        return cls(n, kept)

    @cached_property
    def grouped(self) -> dict[int, tuple[NDArray[np.int64], NDArray[np.complex128]]]:
        """Terms keyed by their X pattern: ``x -> (z masks, coefficients)``."""
        groups: dict[int, list[PauliTerm]] = defaultdict(list)
        for term in self.terms:
            groups[term.x].append(term)
        return {
            x: (
                np.array([t.z for t in ts], dtype=np.int64),
                np.array([t.coeff for t in ts], dtype=np.complex128),
            )
            for x, ts in groups.items()
        }

    def apply(self, vec: NDArray[np.complex128]) -> NDArray[np.complex128]:
        out = np.zeros(len(vec), dtype=np.complex128)
        for term in self.terms:
            out += term.apply(vec)
        return out

    def sparse(self) -> scipy.sparse.csr_matrix:
        dim = 2**self.n
        out = scipy.sparse.csr_matrix((dim, dim), dtype=np.complex128)
        for term in self.terms:
            out = out + term.matrix(self.n)
        return out

    def sector(
        self, sign: int, memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB
    ) -> SectorOperator:
        return SectorOperator(self, sign, memory_budget_mb)


def sector_states(n: int, sign: int) -> NDArray[np.int64]:
    """Basis indices of parity ``sign`` (+1 even occupation, -1 odd)."""
    idx = np.arange(2**n, dtype=np.int64)
    return idx[bit_parity(idx) == (0 if sign > 0 else 1)]


class SectorOperator(LinearOperator):
    """Hamiltonian restricted to one fermionic parity sector.

    Phase vectors are cached per X pattern while they fit in the memory
    budget and recomputed on every product otherwise.
    """

    def __init__(self, ham: QubitHamiltonian, sign: int, memory_budget_mb: int):
        self.ham = ham
        self.sign = sign
        self.states = sector_states(ham.n, sign)
        positions = np.full(2**ham.n, -1, dtype=np.int64)
        positions[self.states] = np.arange(len(self.states))
        dim = len(self.states)
        self.targets: dict[int, NDArray[np.int64]] = {}
        for x in ham.grouped:
            if bin(x).count("1") % 2:
                raise ValueError("Hamiltonian does not conserve fermionic parity")
            self.targets[x] = positions[self.states ^ x]
        needed = len(ham.grouped) * dim * 16 / 2**20
        self.cache: dict[int, NDArray[np.complex128]] | None = None
        if needed <= memory_budget_mb:
            self.cache = {x: self._phases(x) for x in ham.grouped}
        else:
            logger.debug("phase cache needs %.0f MB, computing on the fly", needed)
        super().__init__(dtype=np.complex128, shape=(dim, dim))

    def _phases(self, x: int) -> NDArray[np.complex128]:
        zs, coeffs = self.ham.grouped[x]
        out = np.zeros(len(self.states), dtype=np.complex128)
        for z, c in zip(zs, coeffs, strict=True):
            out += c * (1 - 2 * bit_parity(self.states & z))
        return out

    def _matvec(self, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        v = np.asarray(v).reshape(-1)
        out = np.zeros(self.shape[0], dtype=np.complex128)
        for x, targets in self.targets.items():
            phases = self.cache[x] if self.cache is not None else self._phases(x)
            out[targets] += phases * v
        return out

    def _rmatvec(self, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        return self._matvec(v)

    def dense(self) -> NDArray[np.complex128]:
        dim = self.shape[0]
        out = np.zeros((dim, dim), dtype=np.complex128)
        cols = np.arange(dim)
        for x, targets in self.targets.items():
            out[targets, cols] += self._phases(x)
        return out

    def embed(self, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        full = np.zeros(2**self.ham.n, dtype=np.complex128)
        full[self.states] = v
        return full


def to_qubits(model: ImpurityModel) -> QubitHamiltonian:
    """Jordan-Wigner image of the full Hamiltonian, shift included."""
    assert model.shift is not None
    terms = [PauliTerm(0, 0, complex(model.shift))]
    terms.extend(_quadratic_terms(model.h, model.n))
    for term in model.terms:
        image = monomial_pauli(term.mask, model.n)
        terms.append(PauliTerm(image.x, image.z, term.coeff * image.coeff))
    return QubitHamiltonian.from_terms(model.n, terms)


def _quadratic_terms(h: NDArray, n: int) -> list[PauliTerm]:
    # (i/4) sum_{p != q} h_pq c_p c_q = (i/2) sum_{p < q} h_pq c_p c_q
    out = []
    rows, cols = np.nonzero(np.triu(h, k=1))
    for p, q in zip(rows.tolist(), cols.tolist(), strict=True):
        image = monomial_pauli((p, q), n)
        out.append(PauliTerm(image.x, image.z, 0.5j * h[p, q] * image.coeff))
    return out


def quadratic_qubits(h: NDArray, constant: float = 0.0) -> QubitHamiltonian:
    """``constant + (i/4) sum h_pq c_p c_q``."""
    n = len(h) // 2
    terms = [PauliTerm(0, 0, complex(constant)), *_quadratic_terms(h, n)]
    return QubitHamiltonian.from_terms(n, terms)


def _lowest(op: SectorOperator, dense: bool) -> tuple[float, NDArray[np.complex128]]:
    if dense or op.shape[0] <= SMALL_SECTOR:
        values, vectors = scipy.linalg.eigh(op.dense(), subset_by_index=[0, 0])
        return float(values[0]), vectors[:, 0]
    values, vectors = eigsh(op, k=1, which="SA", tol=1e-12)
    return float(values[0]), vectors[:, 0]


def lowest_eigenpair(
    ham: QubitHamiltonian,
    method: Method = "dense",
    sectors: Sequence[int] = (1, -1),
    memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB,
) -> tuple[float, NDArray[np.complex128]]:
    """Smallest eigenvalue over the given parity sectors.

    The eigenvector is returned in the full ``2^n`` space.
    """
    limit = DENSE_MAX_MODES if method == "dense" else LANCZOS_MAX_MODES
    if ham.n > limit:
        raise DimensionTooLarge(
            f"{method} diagonalization supports n <= {limit}, got {ham.n}"
        )
    best: tuple[float, NDArray[np.complex128]] | None = None
    for sign in sectors:
        op = ham.sector(sign, memory_budget_mb)
        energy, vector = _lowest(op, dense=method == "dense")
        logger.debug("sector %+d: lowest eigenvalue %.12f", sign, energy)
        if best is None or energy < best[0]:
            best = (energy, op.embed(vector))
    assert best is not None
    energy, vector = best
    return energy, vector / np.linalg.norm(vector)


def ground_energy_exact(
    model: ImpurityModel,
    method: Method = "dense",
    memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB,
) -> tuple[float, NDArray[np.complex128]]:
    """Ground energy and a normalized ground state vector of ``model``.

    Raises:
        DimensionTooLarge: Beyond 12 modes (dense) or 20 modes (lanczos).
    """
    return lowest_eigenpair(to_qubits(model), method, memory_budget_mb=memory_budget_mb)


def gaussian_vector(cov: NDArray[np.float64]) -> NDArray[np.complex128]:
    """State vector with covariance ``cov``, phase fixed by its largest amplitude.

    The state is the unique ground state of ``(i/4) sum M_pq c_p c_q``.
    """
    n = len(cov) // 2
    ham = quadratic_qubits(np.asarray(cov))
    _, vector = lowest_eigenpair(ham, "lanczos", sectors=(parity(cov),))
    pivot = vector[np.argmax(np.abs(vector))]
    vector = vector * (abs(pivot) / pivot)
    logger.debug("built Gaussian state vector on %d modes", n)
    return vector


def state_vector(
    state: GaussianState, reference_vector: NDArray[np.complex128]
) -> NDArray[np.complex128]:
    """Vector of ``state`` whose phase reproduces ``<reference|state> = anchor``."""
    if not state.is_anchored:
        raise OrthogonalToReference("an unanchored state has no phase")
    vector = gaussian_vector(state.cov)
    current = np.vdot(reference_vector, vector)
    return vector * (state.anchor / current) * abs(current) / abs(state.anchor)


def superposition_vector(psi: Superposition) -> NDArray[np.complex128]:
    reference = gaussian_vector(psi.reference)
    out = np.zeros(2**psi.n, dtype=np.complex128)
    for x, state in zip(psi.coefficients, psi.states, strict=True):
        if x != 0:
            out += x * state_vector(state, reference)
    return out


def apply_majorana_form(
    form: NDArray[np.complex128], vec: NDArray[np.complex128]
) -> NDArray[np.complex128]:
    """``(sum_p form_p c_p) vec``."""
    n = int(math.log2(len(vec)))
    out = np.zeros(len(vec), dtype=np.complex128)
    for p in np.flatnonzero(form):
        out += form[p] * majorana_pauli(int(p), n).apply(vec)
    return out


def two_point_matrix(vec: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """``G_pq = <vec|c_p c_q|vec>``."""
    n = int(math.log2(len(vec)))
    images = np.array([majorana_pauli(p, n).apply(vec) for p in range(2 * n)])
    return images.conj() @ images.T


def vector_covariance(vec: NDArray[np.complex128]) -> NDArray[np.float64]:
    g = two_point_matrix(vec / np.linalg.norm(vec))
    cov = np.real(-0.5j * (g - g.T))
    return 0.5 * (cov - cov.T)


def mode_covariance(
    vec: NDArray[np.complex128], modes: CanonicalModes
) -> NDArray[np.complex128]:
    """``C_jk = <vec|b_j^dag b_k|vec>`` in the canonical modes."""
    t = modes.annihilators
    return t.conj() @ two_point_matrix(vec) @ t.T


def covariance_spectrum(
    vec: NDArray[np.complex128], modes: CanonicalModes
) -> NDArray[np.float64]:
    """Eigenvalues of the mode covariance matrix, in decreasing order."""
    c = mode_covariance(vec, modes)
    return np.sort(np.linalg.eigvalsh(0.5 * (c + c.conj().T)))[::-1]


def feasibility_inputs(
    vec: NDArray[np.complex128], model: ImpurityModel
) -> tuple[NDArray[np.complex128], NDArray[np.float64], NDArray[np.complex128]]:
    """``(C, E, Lambda)`` for a state of ``model``.

    ``Lambda`` projects onto the mode combinations ``sum_j x_j b_j`` that
    avoid the impurity Majoranas.
    """
    modes = model.modes
    c = mode_covariance(vec, modes)
    e = np.diag(modes.energies)
    if model.m == 0:
        return c, e, np.eye(model.n, dtype=np.complex128)
    avoid = scipy.linalg.null_space(modes.annihilators[:, : model.m].T)
    return c, e, avoid @ avoid.conj().T


def sdp_feasibility_residuals(
    c: NDArray[np.complex128], e: NDArray[np.float64], projector: NDArray[np.complex128]
) -> tuple[float, float]:
    """Commutator residual and semidefinite violation of the ground-state conditions.

    Returns:
        ``||L (CE - EC) L||`` and ``max(0, lambda_max((LCEL + h.c.) / 2))``.
    """
    ce = c @ e
    commutator = projector @ (ce - e @ c) @ projector
    restricted = projector @ ce @ projector
    top = float(np.linalg.eigvalsh(0.5 * (restricted + restricted.conj().T)).max())
    return float(np.linalg.norm(commutator, 2)), max(0.0, top)


def bath_energy_tail(
    vec: NDArray[np.complex128], model: ImpurityModel, tau: float
) -> float:
    """Norm of the part of ``vec`` above bath energy ``tau``.

    Raises:
        DimensionTooLarge: For more than 12 modes.
    """
    if model.n > DENSE_MAX_MODES:
        raise DimensionTooLarge(
            f"bath spectral projector supports n <= {DENSE_MAX_MODES}"
        )
    bath = quadratic_qubits(model.h, model.e0)
    weight = 0.0
    for sign in (1, -1):
        op = bath.sector(sign)
        part = vec[op.states]
        if not np.any(part):
            continue
        values, vectors = scipy.linalg.eigh(op.dense())
        above = vectors[:, values > tau + 1e-9]
        weight += float(np.sum(np.abs(above.conj().T @ part) ** 2))
    return math.sqrt(weight)


def energy_tail_bound(tau: float, m: int) -> float:
    """``2 exp(-(tau/4) ln(tau / 8em))`` for ``tau >= 8em``, else the trivial 1."""
    floor = 8.0 * math.e * m
    if tau < floor:
        return 1.0
    return min(1.0, 2.0 * math.exp(-(tau / 4.0) * math.log(tau / floor)))
