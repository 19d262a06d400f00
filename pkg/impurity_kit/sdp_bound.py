"""Semidefinite lower bounds on the ground energy.

Operators are handled symbolically as polynomials in a rotated set of
Majoranas ``f_j = sum_p R_pj c_p``. The SDP variable is indexed by the list

    C = [f_1, ..., f_2n] + [d(x) : x a 3-subset of d_1 ... d_{m+2k}]

with ``d_1..d_m = c_1..c_m`` and ``d_{m+j} = f_j``. Only construction,
export in SDPA format and certificate verification live here; the program
itself is solved elsewhere.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import scipy.linalg
import scipy.sparse
from numpy.typing import NDArray

from impurity_kit.errors import (
    BudgetExceeded,
    DimensionMismatch,
    NotOrthogonal,
    RepresentationFailure,
)
from impurity_kit.gaussian import covariance_of_superposition
from impurity_kit.skew_linear import canonical_modes

if TYPE_CHECKING:
    from impurity_kit.gaussian import Superposition
    from impurity_kit.model import ImpurityModel

logger = logging.getLogger(__name__)

DEFAULT_LOCALIZATION_EPS = 1e-4
DEFAULT_MEMORY_BUDGET_MB = 512
REPRESENTATION_TOL = 1e-10
# products C_p^dag C_q hold at most six Majoranas
MAX_DEGREE = 6


def _popcount(values: NDArray[np.int64]) -> NDArray[np.int64]:
    raw = np.ascontiguousarray(values, dtype=np.uint64).view(np.uint8)
    bits = np.unpackbits(raw.reshape(len(values), 8), axis=1)
    return bits.sum(axis=1).astype(np.int64)


class MonomialSpace:
    """Ascending Majorana monomials ``f(x)`` with ``|x| <= max_degree``.

    Monomials are bit masks (bit ``j`` for ``f_j``) sorted as integers.
    """

    def __init__(self, modes: int, max_degree: int = MAX_DEGREE):
        self.modes = modes
        self.max_degree = min(max_degree, modes)
        masks = [
            sum(1 << j for j in subset)
            for weight in range(self.max_degree + 1)
            for subset in itertools.combinations(range(modes), weight)
        ]
        self.masks = np.array(sorted(masks), dtype=np.int64)

    @staticmethod
    def size(modes: int, max_degree: int = MAX_DEGREE) -> int:
        return sum(math.comb(modes, w) for w in range(min(max_degree, modes) + 1))

    def __len__(self) -> int:
        return len(self.masks)

    @cached_property
    def _generators(self) -> list[scipy.sparse.csr_matrix]:
        """Left multiplication by ``f_j``: ``f_j f(x) = (-1)^{#(x < j)} f(x ^ j)``."""
        dim = len(self.masks)
        columns = np.arange(dim)
        out = []
        for j in range(self.modes):
            target = self.masks ^ (1 << j)
            rows = np.searchsorted(self.masks, target)
            valid = rows < dim
            valid[valid] = self.masks[rows[valid]] == target[valid]
            below = _popcount(self.masks & ((1 << j) - 1))
            signs = np.where(below % 2, -1.0, 1.0)
            out.append(
                scipy.sparse.csr_matrix(
                    (signs[valid], (rows[valid], columns[valid])), shape=(dim, dim)
                )
            )
        return out

    def left(self, form: NDArray[np.float64]) -> scipy.sparse.csr_matrix:
        """Left multiplication by the linear form ``sum_j form_j f_j``."""
        out = scipy.sparse.csr_matrix((len(self.masks), len(self.masks)))
        for j in np.flatnonzero(form):
            out = out + form[j] * self._generators[j]
        return out

    def multipliers(self, forms: NDArray[np.float64]) -> list[scipy.sparse.csr_matrix]:
        return [self.left(form) for form in forms]

    def unit(self) -> NDArray[np.complex128]:
        out = np.zeros(len(self.masks), dtype=np.complex128)
        out[0] = 1.0
        return out

    @staticmethod
    def product(
        multipliers: list[scipy.sparse.csr_matrix], vec: NDArray[np.complex128]
    ) -> NDArray[np.complex128]:
        """``L_1 L_2 ... L_r vec`` for the left multipliers ``L_i``."""
        for op in multipliers[::-1]:
            vec = op @ vec
        return vec


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    """Operators ``C_p``, each a product of linear forms in the ``f`` frame.

    ``rotation`` has the rotated Majoranas ``f_j`` as columns in the ``c``
    frame, so row ``p`` of ``rotation`` expresses ``c_p`` in the ``f`` frame.
    """

    rotation: NDArray[np.float64]
    m: int
    k: int
    labels: tuple[tuple[int, ...], ...]

    @classmethod
    def build(cls, rotation: NDArray[np.float64], m: int, k: int) -> OperatorBasis:
        dim = len(rotation)
        labels = [(m + j,) for j in range(dim)]
        labels.extend(itertools.combinations(range(m + 2 * k), 3))
        return cls(np.asarray(rotation, dtype=np.float64), m, k, tuple(labels))

    @property
    def n(self) -> int:
        return len(self.rotation) // 2

    @property
    def size(self) -> int:
        """``N = 2n + binom(m + 2k, 3)``."""
        return len(self.labels)

    @cached_property
    def d_forms(self) -> NDArray[np.float64]:
        """Rows ``d_1 .. d_{m+2n}`` in the ``f`` frame."""
        return np.vstack([self.rotation[: self.m], np.eye(len(self.rotation))])


@dataclass(frozen=True, eq=False)
class Localization:
    rotation: NDArray[np.float64]
    k: int
    singular_values: NDArray[np.float64]


def localize(psi: Superposition, eps: float = DEFAULT_LOCALIZATION_EPS) -> Localization:
    """Rotation that block-diagonalizes the covariance of ``psi``.

    In the rotated frame the covariance is ``(+) [[0, s_j], [-s_j, 0]]`` with
    ``s_j`` ascending; ``k`` counts the blocks with ``s_j < 1 - eps``.

    Raises:
        ZeroNorm: If ``psi`` vanishes.
    """
    cov = covariance_of_superposition(psi)
    modes = canonical_modes(cov, zero_threshold=0.0)
    values = modes.energies
    k = int(np.count_nonzero(values < 1.0 - eps))
    logger.info("localized excitations on %d of %d modes", k, psi.n)
    return Localization(modes.rotation.T, k, values)


@dataclass(frozen=True, eq=False)
class SdpProgram:
    """``min tr(H1 X)`` over ``X >= 0`` with ``tr(I1 X) = 1`` and ``tr(K X) = 0``."""

    h1: NDArray[np.complex128]
    i1: NDArray[np.complex128]
    kernel: NDArray[np.complex128]
    basis: OperatorBasis | None = None

    @property
    def size(self) -> int:
        return len(self.h1)

    @property
    def kernel_dim(self) -> int:
        return len(self.kernel)


def _hermitian_columns(products: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Columns for the real parameters of a Hermitian ``K``.

    Order: ``K_pp`` for every ``p``, then ``Re K_pq`` and ``Im K_pq`` for ``p < q``.
    """
    size = products.shape[1]
    columns = [products[:, p, p] for p in range(size)]
    for p, q in itertools.combinations(range(size), 2):
        columns.append(products[:, p, q] + products[:, q, p])
        columns.append(1j * (products[:, p, q] - products[:, q, p]))
    return np.column_stack(columns)


def _hermitian_from(params: NDArray[np.float64], size: int) -> NDArray[np.complex128]:
    out = np.diag(params[:size]).astype(np.complex128)
    for i, (p, q) in enumerate(itertools.combinations(range(size), 2)):
        value = complex(params[size + 2 * i], params[size + 2 * i + 1])
        out[p, q] = value
        out[q, p] = np.conj(value)
    return out


def hamiltonian_vector(
    model: ImpurityModel, rotation: NDArray[np.float64], space: MonomialSpace
) -> NDArray[np.complex128]:
    """Monomial coefficients of ``H`` in the ``f`` frame.

    Raises:
        RepresentationFailure: If an impurity term exceeds the degree cap.
    """
    assert model.shift is not None
    lefts = space.multipliers(rotation)
    singles = [op @ space.unit() for op in lefts]
    out = model.shift * space.unit()
    for p, q in itertools.combinations(range(2 * model.n), 2):
        if model.h[p, q] != 0.0:
            out += 0.5j * model.h[p, q] * (lefts[p] @ singles[q])
    for term in model.terms:
        if term.weight > space.max_degree:
            raise RepresentationFailure(
                f"impurity term {term.mask} has weight above {space.max_degree}"
            )
        chain = [lefts[p] for p in term.mask]
        out += term.coeff * space.product(chain, space.unit())
    return out


def operator_products(
    basis: OperatorBasis, space: MonomialSpace
) -> NDArray[np.complex128]:
    """Tensor ``V[:, p, q]`` of monomial coefficients of ``C_p^dag C_q``."""
    lefts = space.multipliers(basis.d_forms)
    columns = np.column_stack(
        [
            space.product([lefts[d] for d in label], space.unit())
            for label in basis.labels
        ]
    )
    out = np.empty((len(space), basis.size, basis.size), dtype=np.complex128)
    for p, label in enumerate(basis.labels):
        # C_p^dag = L_r ... L_1 with real forms, so L_1 acts first
        block = columns
        for d in label:
            block = lefts[d] @ block
        out[:, p, :] = block
    return out


def build_program(
    model: ImpurityModel,
    rotation: NDArray[np.float64],
    k: int,
    memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB,
    tol: float = REPRESENTATION_TOL,
) -> SdpProgram:
    """Assemble ``H1``, ``I1`` and a basis of the linear dependencies.

    Raises:
        BudgetExceeded: If the monomial tensors do not fit in the budget.
        RepresentationFailure: If ``H`` is not a combination of ``C_p^dag C_q``.
        NotOrthogonal: If ``rotation`` is not orthogonal.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    dim = 2 * model.n
    if rotation.shape != (dim, dim):
        raise DimensionMismatch(
            f"rotation shape {rotation.shape}, expected {(dim, dim)}"
        )
    deviation = float(np.abs(rotation @ rotation.T - np.eye(dim)).max())
    if deviation > 1e-10:
        raise NotOrthogonal(f"|R R^T - I| = {deviation:.3e}")
    if not 0 <= k <= model.n - model.m // 2:
        raise ValueError(f"k must lie in [0, {model.n - model.m // 2}], got {k}")

    basis = OperatorBasis.build(rotation, model.m, k)
    size = basis.size
    monomials = MonomialSpace.size(dim)
    # product tensor plus the real constraint matrix
    needed = monomials * size * size * 48
    if needed > memory_budget_mb * 2**20:
        raise BudgetExceeded(
            f"SDP with N={size} over {monomials} monomials needs "
            f"{needed / 2**20:.0f} MB, budget {memory_budget_mb} MB"
        )

    space = MonomialSpace(dim)
    products = operator_products(basis, space)
    complex_map = _hermitian_columns(products)
    real_map = np.vstack([complex_map.real, complex_map.imag])
    target = hamiltonian_vector(model, rotation, space)
    rhs = np.concatenate([target.real, target.imag])

    used = np.flatnonzero(np.abs(real_map).max(axis=1) > 0.0)
    outside = np.setdiff1d(np.flatnonzero(rhs), used)
    if len(outside):
        raise RepresentationFailure(
            f"H has {len(outside)} monomial components outside the span of C_p^dag C_q"
        )
    params, *_ = scipy.linalg.lstsq(real_map[used], rhs[used])
    residual = float(np.linalg.norm(real_map @ params - rhs))
    if residual > tol * max(1.0, float(np.linalg.norm(rhs))):
        raise RepresentationFailure(f"H representation residual {residual:.3e}")

    null = scipy.linalg.null_space(real_map[used])
    kernel = np.array([_hermitian_from(col, size) for col in null.T])
    if not len(kernel):
        kernel = np.zeros((0, size, size), dtype=np.complex128)
    logger.info(
        "SDP assembled: N=%d, %d dependencies, %d monomials",
        size,
        len(kernel),
        len(used),
    )
    return SdpProgram(
        h1=_hermitian_from(params, size),
        i1=np.eye(size, dtype=np.complex128) / size,
        kernel=kernel,
        basis=basis,
    )


def embed(matrix: NDArray[np.complex128]) -> NDArray[np.float64]:
    """Real symmetric image ``[[Re, -Im], [Im, Re]]`` of a Hermitian matrix."""
    re, im = matrix.real, matrix.imag
    return np.block([[re, -im], [im, re]])


def unembed(matrix: NDArray[np.float64]) -> NDArray[np.complex128]:
    size = len(matrix) // 2
    return matrix[:size, :size] + 1j * matrix[size:, :size]


def export_sdpa(program: SdpProgram, path: Path) -> None:
    """Write the program in sparse SDPA format.

    The SDPA dual ``max F0.Y, Fi.Y = c_i`` carries ``F0 = -H1``, ``F1 = I1``
    and ``F_{1+a} = K^a`` in the real embedding, which doubles traces, so
    ``c = (2, 0, ..., 0)``. A solution ``x`` of the SDPA primal maps to the
    certificate ``y0 = -x_1``, ``y_a = -x_{1+a}``.
    """
    matrices = [-program.h1, program.i1, *program.kernel]
    size = 2 * program.size
    lines = [
        f'"impurity_kit SDP: N={program.size}, dependencies={program.kernel_dim}',
        str(len(matrices) - 1),
        "1",
        str(size),
        " ".join(["2"] + ["0"] * program.kernel_dim),
    ]
    for number, matrix in enumerate(matrices):
        real = embed(matrix)
        rows, cols = np.nonzero(np.triu(real))
        for i, j in zip(rows, cols, strict=True):
            lines.append(f"{number} 1 {i + 1} {j + 1} {real[i, j]:.17g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class SdpaProblem:
    c: NDArray[np.float64]
    matrices: list[NDArray[np.float64]]
    block_sizes: list[int]


def read_sdpa(path: Path) -> SdpaProblem:
    """Parse a single-block sparse SDPA file, filling in the lower triangles."""
    lines = [
        line
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and line[0] not in '"*'
    ]
    count = int(lines[0].split()[0])
    blocks = int(lines[1].split()[0])
    block_sizes = [abs(int(v)) for v in lines[2].replace(",", " ").split()]
    if len(block_sizes) != blocks:
        raise ValueError(
            f"{path}: {blocks} blocks declared, {len(block_sizes)} sizes given"
        )
    c = np.array([float(v) for v in lines[3].replace(",", " ").split()])
    dim = sum(block_sizes)
    matrices = [np.zeros((dim, dim)) for _ in range(count + 1)]
    for line in lines[4:]:
        number, _, i, j, value = line.split()
        a, b = int(i) - 1, int(j) - 1
        matrices[int(number)][a, b] = float(value)
        matrices[int(number)][b, a] = float(value)
    return SdpaProblem(c, matrices, block_sizes)


def program_from_sdpa(problem: SdpaProblem) -> SdpProgram:
    """Inverse of ``export_sdpa``."""
    h1 = -unembed(problem.matrices[0])
    i1 = unembed(problem.matrices[1])
    kernel = np.array([unembed(f) for f in problem.matrices[2:]])
    if not len(kernel):
        kernel = np.zeros((0, len(h1), len(h1)), dtype=np.complex128)
    return SdpProgram(h1, i1, kernel)


@dataclass(frozen=True)
class DualCertificate:
    y0: float
    y: tuple[float, ...] = ()

    @classmethod
    def from_sdpa_solution(cls, x: NDArray[np.float64]) -> DualCertificate:
        return cls(-float(x[0]), tuple(-float(v) for v in x[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"y0": self.y0, "y": list(self.y)}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> DualCertificate:
        return cls(float(doc["y0"]), tuple(float(v) for v in doc.get("y", [])))

    @classmethod
    def load(cls, path: Path) -> DualCertificate:
        with path.open(encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def dump(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def verify_certificate(
    program: SdpProgram, cert: DualCertificate, tol: float = 0.0
) -> tuple[bool, float]:
    """Check ``y0 I1 + sum_a y_a K^a <= H1``.

    Returns:
        Validity and the smallest eigenvalue of ``H1 - y0 I1 - sum_a y_a K^a``.
        A valid certificate proves that the ground energy is at least ``y0``.

    Raises:
        DimensionMismatch: If ``len(y)`` differs from the number of dependencies.
    """
    if len(cert.y) != program.kernel_dim:
        raise DimensionMismatch(
            f"certificate has {len(cert.y)} multipliers"
            f" for {program.kernel_dim} dependencies"
        )
    slack = program.h1 - cert.y0 * program.i1
    if cert.y:
        slack = slack - np.tensordot(np.asarray(cert.y), program.kernel, axes=1)
    margin = float(np.linalg.eigvalsh(0.5 * (slack + slack.conj().T)).min())
    return margin >= -tol, margin


def conservative_certificate(program: SdpProgram) -> DualCertificate:
    """Valid certificate with ``y = 0``.

    ``y0`` is the lowest generalized eigenvalue of the pencil ``(H1, I1)``. A
    little room is left below the eigenvalue so that rounding cannot
    invalidate the certificate at zero tolerance.
    """
    low = float(scipy.linalg.eigh(program.h1, program.i1, eigvals_only=True).min())
    scale = max(1.0, abs(low))
    y0 = low - 1e-9 * scale
    return DualCertificate(y0, (0.0,) * program.kernel_dim)
