"""Fermionic Gaussian states.

A pure Gaussian state on ``n`` modes is fixed up to phase by its covariance
matrix ``M_pq = (-i/2) <[c_p, c_q]>``, a real antisymmetric ``2n x 2n``
matrix with ``M @ M = -I``. The phase is carried as an anchor: the inner
product ``<phi_0|phi>`` with a reference Gaussian state ``phi_0`` shared by
every state that takes part in a computation.

Majorana masks are tuples of 0-based indices; ``c(x)`` is the product of the
selected Majoranas in ascending order.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.stats import special_ortho_group

from impurity_kit.errors import (
    DimensionMismatch,
    NotOrthogonal,
    OddWeightMask,
    OrthogonalToReference,
    SingularTriple,
    ZeroNorm,
)
from impurity_kit.skew_linear import CanonicalModes, block_matrix, pfaffian

logger = logging.getLogger(__name__)

ORTHOGONALITY_THRESHOLD = 1e-10
TRIPLE_FLOOR = 1e-14
PURITY_TOL = 1e-10
# reciprocal condition number below which M1 + M2 is treated as singular
RCOND_FLOOR = 1e-12

Mask = tuple[int, ...]
CovarianceLike = Union["GaussianState", NDArray[np.float64]]  # noqa: UP007


def as_mask(indices: Iterable[int]) -> Mask:
    """Sorted tuple of distinct Majorana indices."""
    mask = tuple(sorted(int(i) for i in indices))
    if len(set(mask)) != len(mask):
        raise ValueError(f"repeated Majorana index in mask {mask}")
    return mask


def vacuum_covariance(n: int) -> NDArray[np.float64]:
    """Covariance matrix of the vacuum ``|0^n>``."""
    return block_matrix(np.ones(n))


def fock_covariance(occupations: ArrayLike) -> NDArray[np.float64]:
    """Covariance matrix of the Fock state ``|y>``."""
    y = np.asarray(occupations, dtype=int)
    return block_matrix(1.0 - 2.0 * y)


def ground_covariance(modes: CanonicalModes) -> NDArray[np.float64]:
    """Covariance matrix of the canonical-mode vacuum (ground state of H0)."""
    return modes.rotation.T @ vacuum_covariance(modes.n) @ modes.rotation


def rotate(m: NDArray[np.float64], r: NDArray[np.float64]) -> NDArray[np.float64]:
    """Return ``R M R^T``.

    Raises:
        NotOrthogonal: If ``R R^T`` deviates from the identity by more than 1e-10.
    """
    r = np.asarray(r, dtype=np.float64)
    deviation = float(np.abs(r @ r.T - np.eye(len(r))).max())
    if deviation > 1e-10:
        raise NotOrthogonal(f"|R R^T - I| = {deviation:.3e}")
    return r @ m @ r.T


def is_pure(m: NDArray[np.float64], tol: float = PURITY_TOL) -> bool:
    return bool(np.abs(m @ m + np.eye(len(m))).max() <= tol)


def parity(m: NDArray[np.float64]) -> int:
    """Fermionic parity ``pf(M)`` of a pure state, rounded to +1 or -1."""
    return 1 if pfaffian(m, check=False).real >= 0 else -1


def purify(m: NDArray[np.float64]) -> NDArray[np.float64]:
    """Nearest pure covariance matrix (orthogonal polar factor of ``M``)."""
    u, _, vt = np.linalg.svd(m)
    q = u @ vt
    return 0.5 * (q - q.T)


def random_covariance(
    n: int, rng: np.random.Generator, sign: int = 1
) -> NDArray[np.float64]:
    """Haar-random pure covariance matrix of parity ``sign``."""
    base = vacuum_covariance(n)
    if sign < 0:
        base = fock_covariance([1] + [0] * (n - 1))
    r = special_ortho_group.rvs(2 * n, random_state=rng)
    return r @ base @ r.T


def _covariance(state: CovarianceLike) -> NDArray[np.float64]:
    return state.cov if isinstance(state, GaussianState) else np.asarray(state)


def _parity(state: CovarianceLike) -> int:
    return state.parity if isinstance(state, GaussianState) else parity(state)


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Pure Gaussian state with phase.

    ``anchor`` is ``<reference|state>``. An anchor of exactly zero marks a
    state orthogonal to its reference; such a state has no phase and cannot
    enter phase-sensitive inner products until it is re-anchored.
    """

    cov: NDArray[np.float64]
    anchor: complex
    reference: NDArray[np.float64]

    @classmethod
    def anchored(
        cls, cov: NDArray[np.float64], reference: NDArray[np.float64]
    ) -> GaussianState:
        """State whose phase makes ``<reference|state>`` real and nonnegative."""
        mag2 = overlap_mag2(cov, reference)
        anchor = np.sqrt(mag2) if mag2 > ORTHOGONALITY_THRESHOLD else 0.0
        return cls(cov=np.asarray(cov), anchor=complex(anchor), reference=reference)

    @property
    def n(self) -> int:
        return len(self.cov) // 2

    @cached_property
    def parity(self) -> int:
        return parity(self.cov)

    @property
    def is_anchored(self) -> bool:
        return self.anchor != 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "cov": self.cov.tolist(),
            "anchor": [self.anchor.real, self.anchor.imag],
        }

    @classmethod
    def from_dict(
        cls, doc: dict[str, Any], reference: NDArray[np.float64]
    ) -> GaussianState:
        re, im = doc["anchor"]
        return cls(
            cov=np.asarray(doc["cov"], dtype=np.float64),
            anchor=complex(re, im),
            reference=reference,
        )


def overlap_mag2(first: CovarianceLike, second: CovarianceLike) -> float:
    """``|<phi_1|phi_2>|^2 = sigma 2^-n pf(M_1 + M_2)``, zero across parities."""
    m1, m2 = _covariance(first), _covariance(second)
    if m1.shape != m2.shape:
        raise DimensionMismatch(f"covariance shapes {m1.shape} and {m2.shape}")
    sign = _parity(first)
    if sign != _parity(second):
        return 0.0
    n = len(m1) // 2
    value = sign * pfaffian(m1 + m2, check=False).real / 2.0**n
    return float(min(max(value, 0.0), 1.0))


def transition_delta(
    m1: NDArray[np.float64], m2: NDArray[np.float64]
) -> NDArray[np.complex128] | None:
    """``Delta = (-2I + iM_1 - iM_2)(M_1 + M_2)^{-1}``.

    Returns None when ``M_1 + M_2`` is singular to working precision.
    """
    total = m1 + m2
    lu, piv = scipy.linalg.lu_factor(total, check_finite=False)
    anorm = float(np.abs(total).sum(axis=0).max())
    rcond, info = scipy.linalg.lapack.dgecon(lu, anorm)
    if info != 0 or rcond < RCOND_FLOOR:
        return None
    eye = np.eye(len(m1))
    numerator = -2.0 * eye + 1j * (m1 - m2)
    # Delta = X S^{-1}  <=>  S^T Delta^T = X^T
    delta = scipy.linalg.lu_solve((lu, piv), numerator.T, trans=1).T
    return 0.5 * (delta - delta.T)


def wick_matrix(
    m0: NDArray[np.float64],
    m1: NDArray[np.float64],
    m2: NDArray[np.float64],
    mask: Sequence[int] = (),
) -> NDArray[np.complex128]:
    """Antisymmetric matrix of size ``6n + |x|`` whose Pfaffian gives
    ``<phi_0|phi_1><phi_1|c(x)|phi_2><phi_2|phi_0>`` up to ``sigma 4^-n i^n``."""
    dim = len(m0)
    idx = list(mask)
    w = len(idx)
    eye = np.eye(dim)
    keep = np.ones(dim)
    keep[idx] = 0.0
    select = eye[idx]

    out = np.zeros((3 * dim + w, 3 * dim + w), dtype=np.complex128)
    a, b, c = slice(0, dim), slice(dim, 2 * dim), slice(2 * dim, 3 * dim)
    d = slice(3 * dim, 3 * dim + w)
    out[a, a] = 1j * m0
    out[a, b] = -eye
    out[a, c] = eye
    out[b, a] = eye
    out[b, b] = 1j * m1
    out[b, c] = -eye
    out[c, a] = -eye
    out[c, b] = eye
    out[c, c] = 1j * (keep[:, None] * m2 * keep[None, :])
    if w:
        out[c, d] = select.T + 1j * (keep[:, None] * m2)[:, idx]
        out[d, c] = -select + 1j * (m2[idx, :] * keep[None, :])
        out[d, d] = 1j * m2[np.ix_(idx, idx)]
    return out


def triple_product(
    m0: NDArray[np.float64],
    m1: NDArray[np.float64],
    m2: NDArray[np.float64],
    mask: Sequence[int] = (),
) -> complex:
    """``<phi_0|phi_1><phi_1|c(x)|phi_2><phi_2|phi_0>`` for a common parity."""
    sign = parity(m0)
    if parity(m1) != sign or parity(m2) != sign:
        return 0j
    n = len(m0) // 2
    value = pfaffian(wick_matrix(m0, m1, m2, mask), check=False)
    return complex(sign * 4.0**-n * 1j**n * value)


def _check_pair(bra: GaussianState, ket: GaussianState) -> None:
    if bra.cov.shape != ket.cov.shape:
        raise DimensionMismatch(f"mode counts {bra.n} and {ket.n} differ")
    if bra.reference is not ket.reference and not np.array_equal(
        bra.reference, ket.reference
    ):
        raise ValueError("states are anchored against different references")


@dataclass(frozen=True, eq=False)
class Transition:
    """Matrix elements ``<bra| . |ket>`` of Majorana products.

    ``delta`` is present when the pair is far from orthogonal; elements then
    follow from ``pf(i Delta[x]^*)``. Otherwise the ``6n + |x|`` Wick matrix is
    used together with the anchors.
    """

    bra: GaussianState
    ket: GaussianState
    overlap: complex
    delta: NDArray[np.complex128] | None

    def element(self, mask: Sequence[int]) -> complex:
        if len(mask) % 2:
            raise OddWeightMask(f"mask {tuple(mask)} has odd weight")
        if not mask:
            return self.overlap
        if self.bra.parity != self.ket.parity:
            return 0j
        if self.delta is not None:
            idx = list(mask)
            sub = 1j * np.conj(self.delta[np.ix_(idx, idx)])
            return self.overlap * pfaffian(sub, check=False)
        _require_anchor(self.bra)
        _require_anchor(self.ket)
        triple = triple_product(self.bra.reference, self.bra.cov, self.ket.cov, mask)
        return triple / (self.bra.anchor * np.conj(self.ket.anchor))

    def two_point(self) -> NDArray[np.complex128]:
        """Matrix ``<bra|c_p c_q|ket>`` (overlap included)."""
        dim = len(self.bra.cov)
        if self.delta is not None:
            return self.overlap * (np.eye(dim) + 1j * np.conj(self.delta))
        out = self.overlap * np.eye(dim, dtype=np.complex128)
        if self.bra.parity != self.ket.parity:
            return out
        for p in range(dim):
            for q in range(p + 1, dim):
                out[p, q] = self.element((p, q))
                out[q, p] = -out[p, q]
        return out

    def contraction(self, forms: NDArray[np.complex128]) -> complex:
        """``<bra|L_1 ... L_k|ket>`` for linear forms ``L_i = sum_p f_ip c_p``."""
        if self.delta is None:
            raise SingularTriple("transition contraction needs a non-orthogonal pair")
        two_point = np.eye(len(self.delta)) + 1j * np.conj(self.delta)
        return self.overlap * contraction(forms, two_point)


def _require_anchor(state: GaussianState) -> None:
    if not state.is_anchored:
        raise OrthogonalToReference(
            "state is orthogonal to its reference; re-anchor it first"
        )


def transition(bra: GaussianState, ket: GaussianState) -> Transition:
    """Overlap and contraction data for the pair ``(bra, ket)``.

    Raises:
        OrthogonalToReference: If a phase is needed from an unanchored state.
        SingularTriple: If the triple product vanishes for a non-orthogonal pair.
    """
    _check_pair(bra, ket)
    if bra.parity != ket.parity:
        return Transition(bra, ket, 0j, None)
    mag2 = overlap_mag2(bra, ket)
    delta = (
        transition_delta(bra.cov, ket.cov) if mag2 > ORTHOGONALITY_THRESHOLD else None
    )
    _require_anchor(bra)
    _require_anchor(ket)
    if delta is not None:
        n = bra.n
        triple = (
            4.0**-n
            * pfaffian(bra.cov + ket.cov, check=False)
            * pfaffian(delta + bra.reference, check=False)
        )
    else:
        triple = triple_product(bra.reference, bra.cov, ket.cov)
    if abs(triple) < TRIPLE_FLOOR and mag2 > ORTHOGONALITY_THRESHOLD:
        raise SingularTriple(
            f"triple product {abs(triple):.2e} vanishes while |<1|2>|^2 = {mag2:.2e}"
        )
    value = triple / (bra.anchor * np.conj(ket.anchor))
    return Transition(bra, ket, complex(value), delta)


def overlap(bra: GaussianState, ket: GaussianState) -> complex:
    """``<bra|ket>`` including phase."""
    return transition(bra, ket).overlap


def matrix_element(
    bra: GaussianState, ket: GaussianState, mask: Sequence[int]
) -> complex:
    """``<bra|c(x)|ket>`` for an even-weight mask."""
    if len(mask) % 2:
        raise OddWeightMask(f"mask {tuple(mask)} has odd weight")
    return transition(bra, ket).element(as_mask(mask))


def contraction(
    forms: NDArray[np.complex128], two_point: NDArray[np.complex128]
) -> complex:
    """Wick contraction ``pf(Gamma)``, ``Gamma_ij = f_i K f_j^T`` for ``i < j``."""
    forms = np.atleast_2d(np.asarray(forms))
    count = len(forms)
    if count % 2:
        return 0j
    if count == 0:
        return 1 + 0j
    gamma = forms @ two_point @ forms.T
    upper = np.triu(gamma, k=1)
    return pfaffian(upper - upper.T, check=False)


def vacuum_contraction(
    forms: NDArray[np.complex128], ref_cov: NDArray[np.float64]
) -> complex:
    """``<phi|L_1 L_2 ... L_k|phi>`` for the Gaussian state ``ref_cov``."""
    return contraction(forms, np.eye(len(ref_cov)) + 1j * ref_cov)


@dataclass(frozen=True, eq=False)
class Superposition:
    """``psi = sum_a x_a phi_a`` over Gaussian states sharing one reference."""

    coefficients: NDArray[np.complex128]
    states: tuple[GaussianState, ...]

    def __post_init__(self) -> None:
        if not self.states:
            raise ValueError("a superposition needs at least one state")
        if len(self.coefficients) != len(self.states):
            raise DimensionMismatch(
                f"{len(self.coefficients)} coefficients for {len(self.states)} states"
            )
        if len({state.n for state in self.states}) != 1:
            raise DimensionMismatch("states have different mode counts")

    @property
    def chi(self) -> int:
        return len(self.states)

    @property
    def n(self) -> int:
        return self.states[0].n

    @property
    def reference(self) -> NDArray[np.float64]:
        return self.states[0].reference

    def gram(self) -> NDArray[np.complex128]:
        """Matrix ``G_ab = <phi_a|phi_b>``."""
        out = np.eye(self.chi, dtype=np.complex128)
        for a in range(self.chi):
            for b in range(a + 1, self.chi):
                out[a, b] = overlap(self.states[a], self.states[b])
                out[b, a] = np.conj(out[a, b])
        return out

    def norm2(self) -> float:
        x = self.coefficients
        if not np.any(x):
            return 0.0
        return float(np.real(np.conj(x) @ self.gram() @ x))

    def normalized(self) -> Superposition:
        norm2 = self.norm2()
        if norm2 <= 1e-20:
            raise ZeroNorm("cannot normalize a zero vector")
        return Superposition(self.coefficients / np.sqrt(norm2), self.states)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "reference": self.reference.tolist(),
            "coefficients": [[x.real, x.imag] for x in self.coefficients],
            "states": [state.to_dict() for state in self.states],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> Superposition:
        reference = np.asarray(doc["reference"], dtype=np.float64)
        states = tuple(GaussianState.from_dict(s, reference) for s in doc["states"])
        coefficients = np.array([complex(re, im) for re, im in doc["coefficients"]])
        return cls(coefficients, states)


def covariance_of_superposition(psi: Superposition) -> NDArray[np.float64]:
    """Covariance matrix of the normalized state ``psi``.

    Raises:
        ZeroNorm: If ``|psi| <= 1e-10``.
    """
    dim = 2 * psi.n
    norm2 = 0.0
    moments = np.zeros((dim, dim), dtype=np.complex128)
    x = psi.coefficients
    for a in range(psi.chi):
        for b in range(a, psi.chi):
            weight = np.conj(x[a]) * x[b]
            if weight == 0:
                continue
            pair = transition(psi.states[a], psi.states[b])
            block = weight * pair.two_point()
            if a == b:
                moments += block
                norm2 += float(np.real(weight * pair.overlap))
            else:
                # <b|c_p c_q|a> = conj(<a|c_q c_p|b>)
                moments += block + np.conj(block).T
                norm2 += 2.0 * float(np.real(weight * pair.overlap))
    if norm2 <= 1e-20:
        raise ZeroNorm(f"|psi|^2 = {norm2:.3e}")
    moments /= norm2
    cov = np.real(-0.5j * (moments - moments.T))
    return 0.5 * (cov - cov.T)


def reanchor(psi: Superposition, new_reference: NDArray[np.float64]) -> Superposition:
    """Rewrite every anchor of ``psi`` against ``new_reference``.

    The phase of the new reference itself is fixed by making its overlap with
    the old reference real and positive.
    """
    pivot = GaussianState.anchored(new_reference, psi.reference)
    if not pivot.is_anchored:
        raise OrthogonalToReference("new reference is orthogonal to the old one")
    states = []
    for state in psi.states:
        if state.parity != pivot.parity:
            states.append(GaussianState(state.cov, 0j, new_reference))
            continue
        states.append(GaussianState(state.cov, overlap(pivot, state), new_reference))
    logger.debug("re-anchored %d states", len(states))
    return Superposition(psi.coefficients.copy(), tuple(states))
