"""Quantum impurity models.

``H = shift + (i/4) sum_pq h_pq c_p c_q + sum_x g_x c(x)`` on ``n`` fermionic
modes (``2n`` Majoranas). The interacting part ``sum_x g_x c(x)`` acts on the
first ``m`` Majoranas only. By default ``shift = ||h||_1 / 4`` so that the
bath Hamiltonian alone has zero ground energy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from impurity_kit.errors import InvalidModel, NotAntisymmetric
from impurity_kit.gaussian import Mask, as_mask
from impurity_kit.skew_linear import (
    ANTISYMMETRY_RTOL,
    CanonicalModes,
    canonical_modes,
    check_antisymmetric,
    pfaffian,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from impurity_kit.gaussian import Transition

logger = logging.getLogger(__name__)

HERMITICITY_TOL = 1e-12
GROUP_TOLERANCE = 1e-12
# singular values of the impurity couplings below this count as zero
COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class ImpurityTerm:
    mask: Mask
    coeff: complex

    @property
    def weight(self) -> int:
        return len(self.mask)


@dataclass(frozen=True, eq=False)
class ImpurityModel:
    n: int
    m: int
    h: NDArray[np.float64]
    terms: tuple[ImpurityTerm, ...] = ()
    shift: float | None = None
    norm_check: bool = False
    # canonical modes known in advance (truncated and deformed models keep the frame)
    frame: CanonicalModes | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "terms", tuple(self.terms))
        _validate(self)
        if self.shift is None:
            object.__setattr__(self, "shift", self.e0)

    @cached_property
    def modes(self) -> CanonicalModes:
        return self.frame if self.frame is not None else canonical_modes(self.h)

    @property
    def e0(self) -> float:
        """``||h||_1 / 4``, minus the ground energy of the bare bath term."""
        return float(self.modes.energies.sum()) / 2.0

    @property
    def bath_offset(self) -> float:
        """Ground energy of ``shift + (i/4) sum h_pq c_p c_q``."""
        assert self.shift is not None
        return self.shift - self.e0

    @property
    def norm_ok(self) -> bool:
        """Whether the operator norm of ``h`` is at most one."""
        return float(self.modes.energies.max(initial=0.0)) <= 1.0 + 1e-12

    def with_energies(self, energies: ArrayLike) -> ImpurityModel:
        """Same frame and impurity, new single-particle energies.

        The ground energy of the bath part is preserved, so the difference of
        the two Hamiltonians is ``sum_j (eps'_j - eps_j) b_j^dag b_j``.
        """
        values = np.asarray(energies, dtype=np.float64)
        frame = CanonicalModes(
            energies=values,
            rotation=self.modes.rotation,
            zero_mode_count=int(np.count_nonzero(values == 0.0)),
        )
        return ImpurityModel(
            n=self.n,
            m=self.m,
            h=frame.rebuild(),
            terms=self.terms,
            shift=self.bath_offset + float(values.sum()) / 2.0,
            norm_check=False,
            frame=frame,
        )

    def normal_form(self) -> NormalForm:
        return NormalForm.from_model(self)

    def to_dict(self) -> dict[str, Any]:
        upper = [
            [p + 1, q + 1, float(self.h[p, q])]
            for p in range(2 * self.n)
            for q in range(p + 1, 2 * self.n)
            if self.h[p, q] != 0.0
        ]
        return {
            "n": self.n,
            "m": self.m,
            "h": upper,
            "impurity": [
                {
                    "mask": [i + 1 for i in term.mask],
                    "re": float(term.coeff.real),
                    "im": float(term.coeff.imag),
                }
                for term in self.terms
            ],
            "norm_check": self.norm_check,
            "shift": self.shift,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> ImpurityModel:
        """Parse a model document; failures name the offending field.

        Raises:
            InvalidModel: On any malformed or inconsistent field.
        """
        n = _require_int(doc, "n")
        if n < 1:
            raise InvalidModel("n", f"must be positive, got {n}")
        h = np.zeros((2 * n, 2 * n))
        for k, entry in enumerate(doc.get("h", [])):
            try:
                p, q, value = int(entry[0]), int(entry[1]), float(entry[2])
            except (TypeError, ValueError, IndexError) as e:
                raise InvalidModel(f"h[{k}]", "expected [p, q, value]") from e
            if not 1 <= p < q <= 2 * n:
                raise InvalidModel(f"h[{k}]", f"need 1 <= p < q <= {2 * n}")
            h[p - 1, q - 1] = value
            h[q - 1, p - 1] = -value

        terms = []
        for k, entry in enumerate(doc.get("impurity", [])):
            try:
                mask = as_mask(i - 1 for i in entry["mask"])
            except (KeyError, TypeError, ValueError) as e:
                raise InvalidModel(f"impurity[{k}].mask", str(e)) from e
            for part in ("re", "im"):
                if not isinstance(entry.get(part, 0.0), int | float):
                    raise InvalidModel(f"impurity[{k}].{part}", "expected a number")
            terms.append(
                ImpurityTerm(mask, complex(entry.get("re", 0.0), entry.get("im", 0.0)))
            )

        if "m" in doc:
            m = _require_int(doc, "m")
        else:
            top = max((max(t.mask) + 1 for t in terms if t.mask), default=0)
            m = top + top % 2

        shift = doc.get("shift")
        if shift is not None and not isinstance(shift, int | float):
            raise InvalidModel("shift", "expected a number")
        return cls(
            n=n,
            m=m,
            h=h,
            terms=tuple(terms),
            shift=None if shift is None else float(shift),
            norm_check=bool(doc.get("norm_check", False)),
        )


def _require_int(doc: dict[str, Any], key: str) -> int:
    value = doc.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidModel(key, f"expected an integer, got {value!r}")
    return value


def _validate(model: ImpurityModel) -> None:
    if model.h.shape != (2 * model.n, 2 * model.n):
        expected = (2 * model.n, 2 * model.n)
        raise InvalidModel("h", f"expected shape {expected}, got {model.h.shape}")
    try:
        check_antisymmetric(model.h, ANTISYMMETRY_RTOL)
    except NotAntisymmetric as e:
        raise InvalidModel("h", str(e)) from e
    if model.m % 2 or not 0 <= model.m <= 2 * model.n:
        raise InvalidModel(
            "m", f"must be even and within [0, {2 * model.n}], got {model.m}"
        )
    for k, term in enumerate(model.terms):
        path = f"impurity[{k}]"
        if term.weight % 2:
            raise InvalidModel(f"{path}.mask", f"odd weight {term.weight}")
        if term.mask and (term.mask[0] < 0 or term.mask[-1] >= model.m):
            raise InvalidModel(
                f"{path}.mask", f"support must lie within 1..{model.m}"
            )
        scale = max(1.0, abs(term.coeff))
        if term.weight % 4 == 0 and abs(term.coeff.imag) > HERMITICITY_TOL * scale:
            raise InvalidModel(
                f"{path}.im", "coefficient of a weight 0 mod 4 mask must be real"
            )
        if term.weight % 4 == 2 and abs(term.coeff.real) > HERMITICITY_TOL * scale:
            raise InvalidModel(
                f"{path}.re", "coefficient of a weight 2 mod 4 mask must be imaginary"
            )
    if model.norm_check and not model.norm_ok:
        raise InvalidModel("h", "operator norm exceeds 1 while norm_check is set")


def load(path: Path) -> ImpurityModel:
    with path.open() as f:
        return ImpurityModel.from_dict(json.load(f))


def dump(model: ImpurityModel, path: Path) -> None:
    with path.open("w") as f:
        json.dump(model.to_dict(), f, indent=2)
        f.write("\n")


@dataclass(frozen=True, eq=False)
class NormalForm:
    """``H = constant + (i/4) sum A_pq c_p c_q + sum_{|x| >= 4} g_x c(x)``.

    Quadratic impurity terms are folded into ``A`` and the mask-0 term into
    ``constant``.
    """

    constant: float
    quadratic: NDArray[np.float64]
    higher: tuple[ImpurityTerm, ...]

    @classmethod
    def from_model(cls, model: ImpurityModel) -> NormalForm:
        assert model.shift is not None
        constant = model.shift
        quadratic = model.h.copy()
        higher = []
        for term in model.terms:
            if term.weight == 0:
                constant += term.coeff.real
            elif term.weight == 2:
                p, q = term.mask
                # g c_p c_q = (i/4)(2 Im g)(c_p c_q - c_q c_p)
                quadratic[p, q] += 2.0 * term.coeff.imag
                quadratic[q, p] -= 2.0 * term.coeff.imag
            else:
                higher.append(term)
        return cls(constant, quadratic, tuple(higher))

    def conjugated_by_first(self) -> NormalForm:
        """Normal form of ``c_1 H c_1`` (odd-parity sector of ``H``)."""
        quadratic = self.quadratic.copy()
        quadratic[0, :] *= -1.0
        quadratic[:, 0] *= -1.0
        higher = tuple(
            ImpurityTerm(t.mask, -t.coeff) if 0 in t.mask else t for t in self.higher
        )
        return NormalForm(self.constant, quadratic, higher)

    def gaussian_energy(self, cov: NDArray[np.float64]) -> float:
        """``<phi|H|phi>`` for a pure Gaussian state with covariance ``cov``."""
        energy = self.constant + 0.25 * float(np.trace(self.quadratic @ cov))
        for term in self.higher:
            idx = list(term.mask)
            value = term.coeff * pfaffian(1j * cov[np.ix_(idx, idx)], check=False)
            energy += value.real
        return energy

    def transition_energy(self, pair: Transition) -> complex:
        """``<bra|H|ket>`` through the pair's Wick data."""
        if pair.bra.parity != pair.ket.parity:
            return 0j
        if pair.delta is not None:
            delta_star = np.conj(pair.delta)
            value = self.constant + 0.25 * np.sum(self.quadratic.T * delta_star)
            for term in self.higher:
                idx = list(term.mask)
                block = delta_star[np.ix_(idx, idx)]
                value += term.coeff * pfaffian(1j * block, check=False)
            return complex(pair.overlap * value)
        two_point = pair.two_point()
        value = self.constant * pair.overlap
        value += 0.25j * np.sum(self.quadratic * two_point)
        for term in self.higher:
            value += term.coeff * pair.element(term.mask)
        return complex(value)


def anderson(n: int, u: float) -> ImpurityModel:
    """Single-impurity Anderson model on a periodic critical Majorana chain.

    ``H_imp = U a_1^dag a_1 a_2^dag a_2 = (U/4)(-c1 c2 c3 c4 + i c1 c2 + i c3 c4 + 1)``
    and ``H_0 = i sum_j c_j c_{j+1}``, ``c_{2n+1} = c_1``, with no energy shift.
    """
    if n < 3:
        raise InvalidModel("n", f"the Anderson chain needs n >= 3, got {n}")
    if u < 0:
        raise InvalidModel("U", f"interaction must be nonnegative, got {u}")
    dim = 2 * n
    h = np.zeros((dim, dim))
    for j in range(dim):
        k = (j + 1) % dim
        h[j, k] += 2.0
        h[k, j] -= 2.0
    terms = (
        ImpurityTerm((0, 1), 0.25j * u),
        ImpurityTerm((2, 3), 0.25j * u),
        ImpurityTerm((0, 1, 2, 3), complex(-0.25 * u)),
        ImpurityTerm((), complex(0.25 * u)),
    )
    return ImpurityModel(n=n, m=4, h=h, terms=terms, shift=0.0)


def truncate(model: ImpurityModel, gamma: float) -> ImpurityModel:
    """Raise every single-particle energy below ``gamma / m`` to ``gamma / m``."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    floor = gamma / max(model.m, 1)
    energies = model.modes.energies
    if np.all(energies >= floor):
        return model
    return model.with_energies(np.maximum(energies, floor))


@dataclass(frozen=True, eq=False)
class DecoupledFrame:
    """Mode rotation that isolates the bath modes seen by the impurity.

    ``forms[i]`` holds the Majorana coefficients of the new annihilator
    ``beta_i = sum_j rotation[i, j] b_j = sum_p forms[i, p] c_p``. Modes in
    ``coupled`` have nonzero weight on ``c_1 .. c_m``; the others commute with
    every even operator on the impurity.
    """

    rotation: NDArray[np.complex128]
    forms: NDArray[np.complex128]
    energies: NDArray[np.float64]
    coupled: tuple[int, ...]
    decoupled: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]


def energy_groups(
    energies: NDArray[np.float64], tolerance: float = GROUP_TOLERANCE
) -> tuple[tuple[int, ...], ...]:
    """Partition sorted energies into runs that agree within ``tolerance``."""
    groups: list[list[int]] = []
    for j, energy in enumerate(energies):
        if groups and energy - energies[groups[-1][0]] <= tolerance:
            groups[-1].append(j)
        else:
            groups.append([j])
    return tuple(tuple(g) for g in groups)


def decouple_groups(
    modes: CanonicalModes,
    m: int,
    groups: Sequence[Sequence[int]],
    coupling_tol: float = COUPLING_TOL,
) -> DecoupledFrame:
    """Decouple bath modes within each degeneracy group.

    Per group the couplings ``T[Q, :m]`` of the canonical annihilators to the
    impurity Majoranas are brought to echelon form by the unitary ``W^dag`` of
    their singular value decomposition; at most ``m`` rows stay nonzero.
    """
    t = modes.annihilators
    n = modes.n
    rotation = np.zeros((n, n), dtype=np.complex128)
    coupled: list[int] = []
    for group in groups:
        idx = list(group)
        block = t[idx, :m]
        if m == 0 or not np.any(block):
            rotation[np.ix_(idx, idx)] = np.eye(len(idx))
            continue
        w, s, _ = scipy.linalg.svd(block, full_matrices=True)
        rotation[np.ix_(idx, idx)] = w.conj().T
        rank = int(np.count_nonzero(s > coupling_tol * max(1.0, float(s[0]))))
        coupled.extend(idx[:rank])
    coupled_set = set(coupled)
    return DecoupledFrame(
        rotation=rotation,
        forms=rotation @ t,
        energies=modes.energies.copy(),
        coupled=tuple(sorted(coupled_set)),
        decoupled=tuple(j for j in range(n) if j not in coupled_set),
        groups=tuple(tuple(g) for g in groups),
    )


def decouple(
    model: ImpurityModel, group_tolerance: float = GROUP_TOLERANCE
) -> DecoupledFrame:
    """Decoupled frame of ``model`` with groups of energies equal within tolerance."""
    if not model.terms:
        n = model.n
        return DecoupledFrame(
            rotation=np.eye(n, dtype=np.complex128),
            forms=model.modes.annihilators.copy(),
            energies=model.modes.energies.copy(),
            coupled=(),
            decoupled=tuple(range(n)),
            groups=energy_groups(model.modes.energies, group_tolerance),
        )
    groups = energy_groups(model.modes.energies, group_tolerance)
    return decouple_groups(model.modes, model.m, groups)


@dataclass(frozen=True, eq=False)
class ChainMapping:
    """Block-tridiagonal form of the bath seen from the impurity.

    ``basis`` is orthogonal; its first ``m`` columns are the impurity
    Majoranas. The chain part ``h_chain`` spans the first ``sum(block_sizes)``
    columns (plus one zero mode of the rest when that count is odd).
    """

    basis: NDArray[np.float64]
    h_chain: NDArray[np.float64]
    h_rest: NDArray[np.float64]
    block_sizes: tuple[int, ...]
    sites: tuple[int, ...]
    padding: int
    chain_model: ImpurityModel
    rest_energy: float

    @property
    def transformed(self) -> NDArray[np.float64]:
        """``h`` in the new basis, ``h_chain`` (+) ``h_rest``."""
        return scipy.linalg.block_diag(self.h_chain, self.h_rest)


def block_tridiagonalize(model: ImpurityModel, tol: float = 1e-10) -> ChainMapping:
    """Krylov chain mapping of the bath starting from the impurity Majoranas.

    The ground energy of ``model`` equals ``chain_model`` ground energy plus
    ``rest_energy``.
    """
    h = model.h
    dim = 2 * model.n
    m = max(model.m, 2)
    blocks = [np.eye(dim)[:, :m]]
    sizes = [m]
    while True:
        basis = np.hstack(blocks)
        if basis.shape[1] >= dim:
            break
        candidate = h @ blocks[-1]
        for _ in range(2):
            candidate -= basis @ (basis.T @ candidate)
        u, s, _ = np.linalg.svd(candidate, full_matrices=False)
        rank = int(np.count_nonzero(s > tol * max(1.0, float(np.abs(h).max()))))
        if rank == 0:
            break
        blocks.append(u[:, :rank])
        sizes.append(rank)
    krylov = np.hstack(blocks)

    if krylov.shape[1] < dim:
        rest = scipy.linalg.null_space(krylov.T)
    else:
        rest = np.zeros((dim, 0))
    if krylov.shape[1] % 2:
        # an odd-sized antisymmetric remainder has a zero mode; it joins the chain
        zero = scipy.linalg.null_space(rest.T @ h @ rest)[:, :1]
        krylov = np.hstack([krylov, rest @ zero])
        rest = rest @ scipy.linalg.null_space(zero.T)
        logger.debug("moved one zero mode of the remainder into the chain")
    basis = np.hstack([krylov, rest])
    transformed = basis.T @ h @ basis
    length = krylov.shape[1]
    h_chain = transformed[:length, :length]
    h_rest = transformed[length:, length:]
    h_chain = 0.5 * (h_chain - h_chain.T)
    h_rest = 0.5 * (h_rest - h_rest.T)

    qubits = length // 2
    sites = tuple(min(m, qubits - start) for start in range(0, qubits, m))
    padding = m * len(sites) - qubits
    chain_model = ImpurityModel(
        n=qubits, m=model.m, h=h_chain, terms=model.terms, shift=model.shift
    )
    rest_energy = 0.0
    if h_rest.size:
        rest_energy = -float(np.linalg.svd(h_rest, compute_uv=False).sum()) / 4.0
    return ChainMapping(
        basis=basis,
        h_chain=h_chain,
        h_rest=h_rest,
        block_sizes=tuple(sizes),
        sites=sites,
        padding=padding,
        chain_model=chain_model,
        rest_energy=rest_energy,
    )
