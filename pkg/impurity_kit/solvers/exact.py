from __future__ import annotations

from typing import TYPE_CHECKING

from impurity_kit.exact_oracle import (
    DEFAULT_MEMORY_BUDGET_MB,
    Method,
    ground_energy_exact,
)
from impurity_kit.solvers.common import BaseSolver, SolverRegistry, SolverResult

if TYPE_CHECKING:
    from impurity_kit.model import ImpurityModel


@SolverRegistry.register
class ExactSolver(BaseSolver):
    """Exact diagonalization of the Jordan-Wigner image."""

    def __init__(
        self,
        method: Method | None = None,
        memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB,
    ):
        self.method = method
        self.memory_budget_mb = memory_budget_mb

    def solve(self, model: ImpurityModel) -> SolverResult:
        method: Method = self.method or ("dense" if model.n <= 10 else "lanczos")
        energy, vector = ground_energy_exact(model, method, self.memory_budget_mb)
        return SolverResult(energy, vector, {"method": method, "n": model.n})
