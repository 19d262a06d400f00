"""Rank-chi variational minimization over superpositions of Gaussian states.

Each Gaussian state is ``M_a = R_a M_vac R_a^T`` with ``R_a`` in ``SO(2n)``.
For fixed covariances the best superposition solves the generalized
eigenvalue problem ``F x = lambda G x`` with ``G_ab = <phi_a|phi_b>`` and
``F_ab = <phi_a|H|phi_b>``. The rotations follow a greedy random walk whose
step size adapts to the fraction of accepted proposals.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.stats import special_ortho_group

from impurity_kit.errors import DegenerateGram, DimensionMismatch, SingularTriple
from impurity_kit.gaussian import (
    GaussianState,
    Superposition,
    random_covariance,
    transition,
    vacuum_covariance,
)
from impurity_kit.model import ImpurityModel, NormalForm
from impurity_kit.solvers.common import BaseSolver, SolverRegistry, SolverResult

logger = logging.getLogger(__name__)

GRAM_FLOOR = 1e-10
THETA_MAX = math.pi
REFERENCE_DRAWS = 8

ParityChoice = Literal["both", "even", "odd"]


@dataclass(frozen=True)
class WalkConfig:
    steps: int = 10_000
    restarts: int = 1
    theta0: float = 0.3
    epsilon: float = 0.2
    f0: float = 0.1
    window: int = 100
    seed: int = 0
    threads: int = 1
    parity: ParityChoice = "both"
    # re-orthogonalize the rotations every so many steps
    purify_every: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.f0 < 1.0:
            raise ValueError(f"f0 must lie in (0, 1), got {self.f0}")
        if self.steps < 0 or self.restarts < 1 or self.window < 1:
            raise ValueError("steps >= 0, restarts >= 1 and window >= 1 are required")
        if self.parity not in ("both", "even", "odd"):
            raise ValueError(f"parity must be both, even or odd, got {self.parity!r}")


@dataclass(frozen=True, eq=False)
class VariationalAnsatz:
    """``chi`` even Gaussian states anchored to one reference.

    For ``sector == -1`` the states describe ``c_1 |phi_a>``; the walk then
    runs on the even states against ``c_1 H c_1``.
    """

    rotations: tuple[NDArray[np.float64], ...]
    reference: NDArray[np.float64]
    sector: int = 1

    @property
    def chi(self) -> int:
        return len(self.rotations)

    @property
    def n(self) -> int:
        return len(self.reference) // 2

    def covariances(self) -> list[NDArray[np.float64]]:
        base = vacuum_covariance(self.n)
        return [r @ base @ r.T for r in self.rotations]

    def states(self) -> list[GaussianState]:
        """States with anchors ``g_a = |<phi_0|phi_a>| >= 0``."""
        return [GaussianState.anchored(m, self.reference) for m in self.covariances()]

    def superposition(self, coefficients: NDArray[np.complex128]) -> Superposition:
        """The physical state ``sum_a x_a phi_a`` in the ansatz sector."""
        states = self.states()
        if self.sector < 0:
            flip = -np.eye(2 * self.n)
            flip[0, 0] = 1.0
            reference = flip @ self.reference @ flip.T
            states = [
                GaussianState(flip @ s.cov @ flip.T, s.anchor, reference)
                for s in states
            ]
        x = np.asarray(coefficients, dtype=np.complex128)
        return Superposition(x, tuple(states))


def _form(model: ImpurityModel | NormalForm) -> NormalForm:
    return model if isinstance(model, NormalForm) else model.normal_form()


def energy_rank1(cov: NDArray[np.float64], model: ImpurityModel | NormalForm) -> float:
    """``<phi|H|phi>`` for the Gaussian state with covariance ``cov``."""
    return _form(model).gaussian_energy(cov)


def _reduced_eigen(
    gram: NDArray[np.complex128],
    energy: NDArray[np.complex128],
    floor: float = GRAM_FLOOR,
) -> tuple[float, NDArray[np.complex128]]:
    values, vectors = np.linalg.eigh(gram)
    keep = values > floor
    if not np.any(keep):
        raise DegenerateGram(
            f"largest Gram eigenvalue {values.max():.3e} below {floor}"
        )
    basis = vectors[:, keep] / np.sqrt(values[keep])
    reduced = basis.conj().T @ energy @ basis
    hermitian = 0.5 * (reduced + reduced.conj().T)
    low, vec = scipy.linalg.eigh(hermitian, subset_by_index=[0, 0])
    return float(low[0]), basis @ vec[:, 0]


class _Evaluator:
    """Gram and energy matrices of an ansatz, updated one state at a time."""

    def __init__(
        self,
        form: NormalForm,
        covs: list[NDArray[np.float64]],
        reference: NDArray[np.float64],
    ):
        self.form = form
        self.reference = reference
        self.covs = list(covs)
        self.states = [GaussianState.anchored(m, reference) for m in self.covs]
        chi = len(covs)
        self.gram = np.eye(chi, dtype=np.complex128)
        self.energy = np.zeros((chi, chi), dtype=np.complex128)
        for a in range(chi):
            self.gram[a], self.energy[a] = self._row(a, self.states[a], self.covs[a])
            self.gram[:, a] = self.gram[a].conj()
            self.energy[:, a] = self.energy[a].conj()

    def _row(
        self, a: int, state: GaussianState, cov: NDArray[np.float64]
    ) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
        chi = len(self.covs)
        gram_row = np.zeros(chi, dtype=np.complex128)
        energy_row = np.zeros(chi, dtype=np.complex128)
        for b in range(chi):
            if b == a:
                gram_row[b] = 1.0
                energy_row[b] = self.form.gaussian_energy(cov)
                continue
            pair = transition(state, self.states[b])
            gram_row[b] = pair.overlap
            energy_row[b] = self.form.transition_energy(pair)
        return gram_row, energy_row

    def value(self) -> tuple[float, NDArray[np.complex128]]:
        if len(self.covs) == 1:
            return float(self.energy[0, 0].real), np.ones(1, dtype=np.complex128)
        return _reduced_eigen(self.gram, self.energy)

    def propose(self, a: int, cov: NDArray[np.float64]) -> tuple[float, Any]:
        """Objective with state ``a`` replaced; the token commits the change."""
        if len(self.covs) == 1:
            value = self.form.gaussian_energy(cov)
            return value, (a, cov, None, np.ones((1, 1)), np.full((1, 1), value))
        state = GaussianState.anchored(cov, self.reference)
        gram_row, energy_row = self._row(a, state, cov)
        gram = self.gram.copy()
        energy = self.energy.copy()
        gram[a], energy[a] = gram_row, energy_row
        gram[:, a], energy[:, a] = gram_row.conj(), energy_row.conj()
        value, _ = _reduced_eigen(gram, energy)
        return value, (a, cov, state, gram, energy)

    def commit(self, token: Any) -> None:
        a, cov, state, gram, energy = token
        self.covs[a] = cov
        if state is not None:
            self.states[a] = state
        self.gram, self.energy = gram, energy


def objective(
    ansatz: VariationalAnsatz, model: ImpurityModel | NormalForm
) -> tuple[float, NDArray[np.complex128]]:
    """Rayleigh-Ritz energy of the ansatz span and the optimal coefficients.

    Raises:
        DegenerateGram: If every Gram eigenvalue is below the floor.
        SingularTriple: If a phase cannot be fixed against the reference.
    """
    form = _form(model)
    if ansatz.sector < 0:
        form = form.conjugated_by_first()
    return _Evaluator(form, ansatz.covariances(), ansatz.reference).value()


@dataclass(frozen=True, eq=False)
class VariationalResult:
    energy: float
    ansatz: VariationalAnsatz
    coefficients: NDArray[np.complex128]
    # (step, energy, theta) at the start and after every accepted step
    trace: list[tuple[int, float, float]]
    restart_energies: list[float] = field(default_factory=list)

    @property
    def sector(self) -> int:
        return self.ansatz.sector

    def state(self) -> Superposition:
        return self.ansatz.superposition(self.coefficients)


def _random_generator(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    x = rng.standard_normal((2 * n, 2 * n))
    a = x - x.T
    return a / np.linalg.norm(a, 2)


def _polar(r: NDArray[np.float64]) -> NDArray[np.float64]:
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def _walk(
    form: NormalForm,
    n: int,
    chi: int,
    sector: int,
    config: WalkConfig,
    rng: np.random.Generator,
    start: VariationalAnsatz | None = None,
) -> VariationalResult:
    rotations: list[NDArray[np.float64]] = []
    if start is None:
        reference = random_covariance(n, rng, 1)
    else:
        reference = start.reference
        rotations = list(start.rotations[:chi])
    rotations += [
        special_ortho_group.rvs(2 * n, random_state=rng)
        for _ in range(chi - len(rotations))
    ]
    base = vacuum_covariance(n)

    def fresh(ref: NDArray[np.float64]) -> tuple[_Evaluator, NDArray[np.float64]]:
        for _ in range(REFERENCE_DRAWS):
            try:
                covs = [r @ base @ r.T for r in rotations]
                return _Evaluator(form, covs, ref), ref
            except SingularTriple:
                logger.warning("reference unusable for the ansatz; drawing another")
                ref = random_covariance(n, rng, 1)
        raise SingularTriple(f"no usable reference in {REFERENCE_DRAWS} draws")

    evaluator, reference = fresh(reference)
    energy, _ = evaluator.value()
    theta = config.theta0
    trace = [(0, energy, theta)]
    successes = 0
    for step in range(1, config.steps + 1):
        a = int(rng.integers(chi))
        angle = rng.uniform(0.0, theta)
        proposal = scipy.linalg.expm(angle * _random_generator(n, rng)) @ rotations[a]
        cov = proposal @ base @ proposal.T
        try:
            candidate, token = evaluator.propose(a, cov)
        except SingularTriple:
            logger.warning("re-anchoring the walk at step %d", step)
            evaluator, reference = fresh(random_covariance(n, rng, 1))
            candidate = math.inf
        except DegenerateGram:
            candidate = math.inf
        if candidate < energy:
            evaluator.commit(token)
            rotations[a] = proposal
            energy = candidate
            successes += 1
            trace.append((step, energy, theta))
            logger.debug("step %d accepted: E=%.12f theta=%.3e", step, energy, theta)
        if step % config.window == 0:
            rate = successes / config.window
            if rate >= config.f0:
                theta *= 1.0 + config.epsilon
            else:
                theta *= 1.0 - config.epsilon
            theta = min(theta, THETA_MAX)
            successes = 0
        if config.purify_every and step % config.purify_every == 0:
            rotations = [_polar(r) for r in rotations]
            evaluator, reference = fresh(reference)
            energy, _ = evaluator.value()

    energy, coefficients = evaluator.value()
    ansatz = VariationalAnsatz(tuple(rotations), reference, sector)
    return VariationalResult(energy, ansatz, coefficients, trace)


def minimize(
    model: ImpurityModel,
    chi: int,
    config: WalkConfig | None = None,
    start: VariationalAnsatz | None = None,
) -> VariationalResult:
    """Best energy over independent restarts of the greedy walk.

    Every restart runs on its own random stream spawned from ``config.seed``,
    so the result does not depend on ``config.threads``. A ``start`` ansatz
    fixes the sector and the reference. Its rotations open every walk and
    random ones fill the remaining ranks, so with ``chi >= start.chi`` the
    result is never above the objective of ``start``.
    """
    config = config or WalkConfig()
    if chi < 1:
        raise ValueError(f"chi must be at least 1, got {chi}")
    form = model.normal_form()
    sectors = {"both": (1, -1), "even": (1,), "odd": (-1,)}[config.parity]
    if start is not None:
        if start.n != model.n:
            raise DimensionMismatch(f"start has {start.n} modes, model has {model.n}")
        sectors = (start.sector,)
    forms = {1: form, -1: form.conjugated_by_first()}
    tasks = [(sector, r) for r in range(config.restarts) for sector in sectors]
    streams = np.random.SeedSequence(config.seed).spawn(len(tasks))

    def run(task: int) -> VariationalResult:
        sector, _ = tasks[task]
        rng = np.random.default_rng(streams[task])
        return _walk(forms[sector], model.n, chi, sector, config, rng, start)

    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        results = list(pool.map(run, range(len(tasks))))
    best = min(results, key=lambda result: result.energy)
    energies = [result.energy for result in results]
    logger.info("chi=%d: best E=%.12f over %d walks", chi, best.energy, len(results))
    return VariationalResult(
        best.energy, best.ansatz, best.coefficients, best.trace, energies
    )


@SolverRegistry.register
class VariationalSolver(BaseSolver):
    """Greedy random walk over rank-chi Gaussian superpositions."""

    def __init__(
        self,
        chi: int = 2,
        steps: int = 10_000,
        restarts: int = 1,
        theta0: float = 0.3,
        epsilon: float = 0.2,
        f0: float = 0.1,
        window: int = 100,
        seed: int = 0,
        threads: int = 1,
        parity: ParityChoice = "both",
    ):
        self.chi = chi
        self.config = WalkConfig(
            steps=steps,
            restarts=restarts,
            theta0=theta0,
            epsilon=epsilon,
            f0=f0,
            window=window,
            seed=seed,
            threads=threads,
            parity=parity,
        )

    def solve(self, model: ImpurityModel) -> SolverResult:
        result = minimize(model, self.chi, self.config)
        report = {
            "chi": self.chi,
            "restarts": self.config.restarts,
            "steps": self.config.steps,
            "seed": self.config.seed,
            "parity": result.sector,
            "restart_energies": result.restart_energies,
            "trace": result.trace,
        }
        return SolverResult(result.energy, result.state(), report)
