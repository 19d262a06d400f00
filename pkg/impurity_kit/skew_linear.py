"""Skew-symmetric matrix primitives.

Pfaffians of real and complex antisymmetric matrices and the canonical-mode
decomposition of a real antisymmetric bath matrix ``h``::

    R h R^T = (+)_j [[0, eps_j], [-eps_j, 0]],   0 <= eps_1 <= ... <= eps_n
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from impurity_kit.errors import NotAntisymmetric

ANTISYMMETRY_RTOL = 1e-12
ZERO_ENERGY_THRESHOLD = 1e-12


def check_antisymmetric(a: NDArray, rtol: float = ANTISYMMETRY_RTOL) -> None:
    """Raise ``NotAntisymmetric`` unless ``a == -a.T`` to relative tolerance."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotAntisymmetric(f"expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        return
    scale = max(1.0, float(np.abs(a).max()))
    deviation = float(np.abs(a + a.T).max())
    if deviation > rtol * scale:
        raise NotAntisymmetric(
            f"|A + A^T| = {deviation:.3e} exceeds tolerance {rtol * scale:.3e}"
        )


def pfaffian(a: ArrayLike, *, check: bool = True) -> complex:
    """Pfaffian of an antisymmetric matrix.

    Parlett-Reid reduction to tridiagonal form with partial pivoting. The
    sign is exact: every row/column interchange flips it. Matrices of odd
    size have Pfaffian 0 and the empty matrix has Pfaffian 1.

    Args:
        a: Real or complex antisymmetric matrix (``A = -A^T``, no conjugation).
        check: Verify antisymmetry first.

    Returns:
        The Pfaffian as a complex number.

    Raises:
        NotAntisymmetric: If ``check`` is set and ``a`` is not antisymmetric.
    """
    matrix = np.asarray(a)
    if check:
        check_antisymmetric(matrix)
    dim = matrix.shape[0]
    if dim % 2:
        return 0j
    if dim == 0:
        return 1 + 0j
    if dim == 2:
        return complex(matrix[0, 1])
    if dim == 4:
        return complex(
            matrix[0, 1] * matrix[2, 3]
            - matrix[0, 2] * matrix[1, 3]
            + matrix[0, 3] * matrix[1, 2]
        )

    work = np.array(matrix, dtype=np.result_type(matrix.dtype, np.float64))
    value = work.dtype.type(1)
    for k in range(0, dim - 1, 2):
        pivot = k + 1 + int(np.abs(work[k + 1 :, k]).argmax())
        if pivot != k + 1:
            work[[k + 1, pivot], :] = work[[pivot, k + 1], :]
            work[:, [k + 1, pivot]] = work[:, [pivot, k + 1]]
            value = -value
        if work[k + 1, k] == 0:
            return 0j
        value = value * work[k, k + 1]
        if k + 2 < dim:
            tau = work[k, k + 2 :] / work[k, k + 1]
            column = work[k + 2 :, k + 1].copy()
            work[k + 2 :, k + 2 :] += np.outer(tau, column) - np.outer(column, tau)
    return complex(value)


def block_matrix(energies: ArrayLike) -> NDArray[np.float64]:
    """Direct sum of the 2x2 blocks ``[[0, e], [-e, 0]]``."""
    values = np.asarray(energies, dtype=np.float64)
    out = np.zeros((2 * len(values), 2 * len(values)))
    idx = np.arange(len(values))
    out[2 * idx, 2 * idx + 1] = values
    out[2 * idx + 1, 2 * idx] = -values
    return out


@dataclass(frozen=True, eq=False)
class CanonicalModes:
    """Single-particle energies and the orthogonal frame that diagonalizes h.

    Row pair ``(2j, 2j+1)`` of ``rotation`` holds the Majorana coefficients of
    the canonical mode ``b_j = (e_{2j} + i e_{2j+1}) / 2`` with
    ``e = rotation @ c``.
    """

    energies: NDArray[np.float64]
    rotation: NDArray[np.float64]
    zero_mode_count: int

    @property
    def n(self) -> int:
        return len(self.energies)

    def rebuild(self, energies: ArrayLike | None = None) -> NDArray[np.float64]:
        """Return ``R^T B(energies) R``, the bath matrix in the original frame."""
        values = self.energies if energies is None else np.asarray(energies)
        return self.rotation.T @ block_matrix(values) @ self.rotation

    @cached_property
    def annihilators(self) -> NDArray[np.complex128]:
        """Matrix ``T`` with ``b_j = sum_p T[j, p] c_p``."""
        return 0.5 * (self.rotation[0::2] + 1j * self.rotation[1::2])


def canonical_modes(
    h: ArrayLike, zero_threshold: float = ZERO_ENERGY_THRESHOLD
) -> CanonicalModes:
    """Canonical-mode decomposition of a real antisymmetric matrix.

    Raises:
        NotAntisymmetric: If ``h`` is not antisymmetric.
    """
    matrix = np.asarray(h, dtype=np.float64)
    check_antisymmetric(matrix)
    dim = matrix.shape[0]
    if dim % 2:
        raise NotAntisymmetric(f"bath matrix must have even size, got {dim}")

    schur_form, vectors = scipy.linalg.schur(matrix, output="real")

    # (energy, first schur index, first row, second row)
    blocks: list[tuple[float, int, NDArray, NDArray]] = []
    loose: list[int] = []
    i = 0
    while i < dim:
        if i + 1 < dim and schur_form[i + 1, i] != 0.0:
            upper, lower = schur_form[i, i + 1], schur_form[i + 1, i]
            energy = math.sqrt(abs(upper * lower))
            if energy < zero_threshold:
                energy = 0.0
            first, second = vectors[:, i], vectors[:, i + 1]
            if upper < 0:
                first, second = second, first
            blocks.append((energy, i, first, second))
            i += 2
        else:
            loose.append(i)
            i += 1
    for a, b in zip(loose[0::2], loose[1::2], strict=True):
        blocks.append((0.0, a, vectors[:, a], vectors[:, b]))

    # ascending energy, ties by position in the Schur form
    blocks.sort(key=lambda block: (block[0], block[1]))

    energies = np.array([block[0] for block in blocks])
    rotation = np.empty((dim, dim))
    for j, (_, _, first, second) in enumerate(blocks):
        rotation[2 * j] = first
        rotation[2 * j + 1] = second
    return CanonicalModes(
        energies=energies,
        rotation=rotation,
        zero_mode_count=int(np.count_nonzero(energies == 0.0)),
    )


def spectral_gap(modes: CanonicalModes) -> float:
    """Smallest nonzero single-particle energy, ``math.inf`` if there is none."""
    nonzero = modes.energies[modes.energies > 0.0]
    return float(nonzero.min()) if nonzero.size else math.inf
