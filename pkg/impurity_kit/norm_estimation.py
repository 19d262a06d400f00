"""Monte Carlo estimate of the squared norm of a Gaussian superposition.

Samples are Fock states with Majoranas permuted uniformly at random,
``|theta> = U_pi |y>``. Their ensemble average of ``|theta><theta|`` is
``I / 2^n``, so ``X = 2^n |<theta|psi>|^2`` is an unbiased estimate of
``<psi|psi>`` whose cost is linear in the number of terms of ``psi``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from impurity_kit.errors import OrthogonalToReference, SingularTriple
from impurity_kit.gaussian import (
    GaussianState,
    Superposition,
    fock_covariance,
    overlap,
    parity,
    random_covariance,
    reanchor,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    eps: float = 0.1
    p_fail: float = 0.1
    # overrides the sample count derived from eps and p_fail
    samples: int | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.p_fail < 1.0:
            raise ValueError(f"p_fail must lie in (0, 1), got {self.p_fail}")
        if self.samples is not None and self.samples < 1:
            raise ValueError(f"samples must be positive, got {self.samples}")

    def sample_count(self, n: int) -> int:
        """``L = ceil(2 sqrt(n) / (eps^2 p_fail))`` unless fixed explicitly."""
        if self.samples is not None:
            return self.samples
        return math.ceil(2.0 * math.sqrt(n) / (self.eps**2 * self.p_fail))


@dataclass(frozen=True)
class NormEstimate:
    value: float
    samples: int
    variance: float
    eps: float
    p_fail: float
    seed: int


def theta_covariance(
    permutation: NDArray[np.int64], occupations: NDArray[np.int64]
) -> NDArray[np.float64]:
    """``R M_y R^T`` for the permutation matrix ``R_ij = [j == pi(i)]``."""
    base = fock_covariance(occupations)
    return base[np.ix_(permutation, permutation)]


def sample_theta(
    n: int, rng: np.random.Generator, reference: NDArray[np.float64] | None = None
) -> GaussianState:
    """Draw ``|theta>`` and fix its phase against ``reference``.

    Without a reference the state is its own reference.
    """
    permutation = rng.permutation(2 * n)
    occupations = rng.integers(0, 2, size=n)
    cov = theta_covariance(permutation, occupations)
    return GaussianState.anchored(cov, cov if reference is None else reference)


def parity_sectors(
    psi: Superposition, rng: np.random.Generator
) -> dict[int, Superposition]:
    """Split ``psi`` into its even and odd parts.

    The two parts are orthogonal, so ``|psi|^2`` is the sum of their norms.
    Each part is anchored against a random reference of its own parity. A
    state without a phase (orthogonal to the old reference) is only accepted
    when it is alone in its sector.

    Raises:
        OrthogonalToReference: If a sector holds several states and one of
            them has no phase.
    """
    sectors: dict[int, Superposition] = {}
    for sign in (1, -1):
        picked = [
            a
            for a, state in enumerate(psi.states)
            if state.parity == sign and psi.coefficients[a] != 0
        ]
        if not picked:
            continue
        states = tuple(psi.states[a] for a in picked)
        phased = all(
            state.is_anchored and state.parity == parity(state.reference)
            for state in states
        )
        if not phased:
            if len(states) > 1:
                raise OrthogonalToReference(
                    f"{len(states)} states of parity {sign:+d} include one "
                    "orthogonal to the reference; their relative phases are lost"
                )
            states = (GaussianState(states[0].cov, 1 + 0j, states[0].cov),)
        part = Superposition(psi.coefficients[picked], states)
        try:
            # a generic reference keeps the permuted Fock states away from
            # orthogonality
            part = reanchor(part, random_covariance(psi.n, rng, sign))
        except SingularTriple:
            logger.warning("keeping the original reference for parity %+d", sign)
        sectors[sign] = part
    return sectors


def _sample(
    sectors: dict[int, Superposition], n: int, rng: np.random.Generator
) -> float:
    theta = sample_theta(n, rng)
    psi = sectors.get(theta.parity)
    if psi is None:
        return 0.0
    theta = GaussianState.anchored(theta.cov, psi.reference)
    if not theta.is_anchored:
        logger.warning("sample orthogonal to the reference; re-anchoring")
        psi = reanchor(psi, random_covariance(n, rng, theta.parity))
        theta = GaussianState.anchored(theta.cov, psi.reference)
    amplitude = 0j
    for x, state in zip(psi.coefficients, psi.states, strict=True):
        amplitude += x * overlap(theta, state)
    return 2.0**n * abs(amplitude) ** 2


def sample_values(psi: Superposition, config: EstimatorConfig) -> NDArray[np.float64]:
    """Independent draws of ``X = 2^n |<theta|psi>|^2``.

    Every draw uses its own random stream spawned from ``config.seed``. Only
    the parity sector of ``theta`` contributes to its draw.
    """
    count = config.sample_count(psi.n)
    if not np.any(psi.coefficients):
        return np.zeros(count)
    root = np.random.SeedSequence(config.seed)
    anchor_stream, sample_root = root.spawn(2)
    sectors = parity_sectors(psi, np.random.default_rng(anchor_stream))
    streams = sample_root.spawn(count)

    def draw(i: int) -> float:
        return _sample(sectors, psi.n, np.random.default_rng(streams[i]))

    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        samples = pool.map(draw, range(count))
        return np.fromiter(samples, dtype=np.float64, count=count)


def estimate_norm2(psi: Superposition, config: EstimatorConfig | None = None) -> float:
    """Estimate ``xi`` of ``|psi|^2``.

    ``(1 - eps)|psi|^2 <= xi <= (1 + eps)|psi|^2`` with probability at least
    ``1 - p_fail``.
    """
    return estimate(psi, config).value


def estimate(psi: Superposition, config: EstimatorConfig | None = None) -> NormEstimate:
    config = config or EstimatorConfig()
    values = sample_values(psi, config)
    variance = float(values.var(ddof=1)) if len(values) > 1 else 0.0
    logger.info("norm estimate from %d samples: %.6g", len(values), values.mean())
    return NormEstimate(
        value=float(values.mean()),
        samples=len(values),
        variance=variance,
        eps=config.eps,
        p_fail=config.p_fail,
        seed=config.seed,
    )
