"""Zolotarev rational approximation of sqrt(x) on [omega, 1].

    sqrt(x) ~ x P_d(x) / Q_d(x),
    P_d(x) = M prod_{j=1..d} (x + lambda_{2j}),
    Q_d(x) = prod_{j=1..d} (x + lambda_{2j-1}),
    lambda_j = omega * (sn(u_j | mu) / cn(u_j | mu))^2,  u_j = j K(mu) / (2d + 1),

with modulus ``mu = sqrt(1 - omega)``. Elliptic functions come from the
arithmetic-geometric mean and the descending Landen transformation.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from impurity_kit.errors import GapOutOfRange, ModulusOutOfRange

AGM_TOL = 1e-15
# the Landen recursion converges quadratically; 16 levels is far beyond double precision
MAX_LANDEN_STEPS = 16


def _check_modulus(mu: float) -> None:
    if not 0.0 <= mu < 1.0:
        raise ModulusOutOfRange(f"modulus must lie in [0, 1), got {mu}")


def elliptic_K(mu: float) -> float:  # noqa: N802
    """Complete elliptic integral of the first kind ``K(mu)``, modulus convention."""
    _check_modulus(mu)
    a, b = 1.0, math.sqrt(1.0 - mu * mu)
    while abs(a - b) > AGM_TOL * a:
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (a + b)


def jacobi_sn_cn(u: float, mu: float) -> tuple[float, float]:
    """Jacobi elliptic functions ``sn(u|mu)`` and ``cn(u|mu)``."""
    _check_modulus(mu)
    if u < 0:
        raise ValueError(f"argument must be nonnegative, got {u}")
    if mu == 0.0:
        return math.sin(u), math.cos(u)

    a = [1.0]
    c = [mu]
    b = math.sqrt(1.0 - mu * mu)
    while abs(c[-1] / a[-1]) > AGM_TOL and len(a) <= MAX_LANDEN_STEPS:
        ai = a[-1]
        c.append(0.5 * (ai - b))
        a.append(0.5 * (ai + b))
        b = math.sqrt(ai * b)

    steps = len(a) - 1
    phi = 2.0**steps * a[-1] * u
    for i in range(steps, 0, -1):
        phi = 0.5 * (math.asin(c[i] * math.sin(phi) / a[i]) + phi)
    return math.sin(phi), math.cos(phi)


@dataclass(frozen=True)
class ZolotarevApprox:
    omega: float
    degree: int
    roots: tuple[float, ...]
    scale: float

    def ratio(self, x: ArrayLike) -> NDArray[np.float64]:
        # prod (x + lambda_{2j}) / (x + lambda_{2j-1}) in factored form
        values = np.asarray(x, dtype=np.float64)
        out = np.ones_like(values)
        for j in range(self.degree):
            out *= (values + self.roots[2 * j + 1]) / (values + self.roots[2 * j])
        return out

    def evaluate(self, x: ArrayLike) -> NDArray[np.float64]:
        """``x P_d(x) / Q_d(x)``."""
        values = np.asarray(x, dtype=np.float64)
        return values * self.scale * self.ratio(values)

    def relative_error(self, x: ArrayLike) -> NDArray[np.float64]:
        """``x^{-1/2} |sqrt(x) - x P_d(x) / Q_d(x)|``."""
        values = np.asarray(x, dtype=np.float64)
        return np.abs(1.0 - self.scale * np.sqrt(values) * self.ratio(values))


def build(omega: float, degree: int) -> ZolotarevApprox:
    """Degree-``d`` Zolotarev approximant for the gap ``omega``.

    Raises:
        GapOutOfRange: Unless ``0 < omega <= 1``.
    """
    if not 0.0 < omega <= 1.0:
        raise GapOutOfRange(f"gap must lie in (0, 1], got {omega}")
    if degree < 1:
        raise ValueError(f"degree must be at least 1, got {degree}")
    mu = math.sqrt(1.0 - omega)
    quarter = elliptic_K(mu)
    roots = []
    for j in range(1, 2 * degree + 1):
        sn, cn = jacobi_sn_cn(j * quarter / (2 * degree + 1), mu)
        roots.append(omega * (sn / cn) ** 2)

    partial = ZolotarevApprox(omega, degree, tuple(roots), 1.0)
    # equalize the error at both ends of the interval
    g_one = float(partial.ratio(1.0))
    g_omega = math.sqrt(omega) * float(partial.ratio(omega))
    return ZolotarevApprox(omega, degree, tuple(roots), 2.0 / (g_one + g_omega))


def worst_case_error(approx: ZolotarevApprox, grid_points: int = 10_000) -> float:
    """Maximum relative error on a log-spaced grid over ``[omega, 1]``."""
    if grid_points < 1000:
        raise ValueError(f"grid_points must be at least 1000, got {grid_points}")
    grid = np.geomspace(approx.omega, 1.0, grid_points)
    return float(approx.relative_error(grid).max())


def error_bound(omega: float, degree: int) -> float:
    """``2 exp(-d / ln(2 / omega))``."""
    return 2.0 * math.exp(-degree / math.log(2.0 / omega))


def sharp_error_bound(omega: float, degree: int) -> float:
    """``2 exp(-d pi^2 / ln(256 / omega))``."""
    return 2.0 * math.exp(-degree * math.pi**2 / math.log(256.0 / omega))


def error_table(
    omegas: Iterable[float], degrees: Iterable[int], grid_points: int = 10_000
) -> list[tuple[float, int, float]]:
    """Rows ``(omega, d, r)`` of the worst-case error curves."""
    degree_list = list(degrees)
    return [
        (omega, d, worst_case_error(build(omega, d), grid_points))
        for omega in omegas
        for d in degree_list
    ]
