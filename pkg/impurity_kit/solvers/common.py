from __future__ import annotations

import importlib
import inspect
import logging
import pkgutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, ClassVar

if TYPE_CHECKING:
    import numpy as np
    from numpy.typing import NDArray

    from impurity_kit.gaussian import Superposition
    from impurity_kit.model import ImpurityModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverResult:
    energy: float
    state: Superposition | NDArray[np.complex128] | None
    report: dict[str, Any] = field(default_factory=dict)


class BaseSolver:
    """Ground-energy solver for an impurity model."""

    def solve(self, model: ImpurityModel) -> SolverResult:
        raise NotImplementedError


class SolverRegistry:
    _solvers: ClassVar[dict[str, type[BaseSolver]]] = {}
    _discovered: ClassVar[bool] = False

    @classmethod
    def register(cls, solver_class: type[BaseSolver]) -> type[BaseSolver]:
        """Register a solver class under its lowercase name without the suffix."""
        name = solver_class.__name__
        if name.endswith("Solver"):
            name = name[: -len("Solver")]
        cls._solvers[name.lower()] = solver_class
        return solver_class

    @classmethod
    def get_solver_classes(cls) -> dict[str, type[BaseSolver]]:
        cls.discover_solvers()
        return cls._solvers.copy()

    @classmethod
    def names(cls) -> list[str]:
        return sorted(cls.get_solver_classes())

    @classmethod
    def create(cls, name: str, options: dict[str, Any] | None = None) -> BaseSolver:
        """Instantiate a solver, passing only the options its constructor accepts.

        Raises:
            KeyError: If no solver is registered under ``name``.
        """
        solver_class = cls.get_solver_classes().get(name)
        if solver_class is None:
            available = ", ".join(cls.names())
            raise KeyError(f"unknown solver {name!r}; available: {available}")
        params = inspect.signature(solver_class.__init__).parameters
        options = options or {}
        accepted = {key: value for key, value in options.items() if key in params}
        ignored = set(options) - set(accepted)
        if ignored:
            logger.debug("solver %s ignores options %s", name, sorted(ignored))
        return solver_class(**accepted)

    @classmethod
    def discover_solvers(cls, solvers_package: str = "impurity_kit.solvers") -> None:
        """Import every module of the solvers package to run the registrations."""
        if cls._discovered:
            return
        cls._discovered = True

        package_parts = solvers_package.split(".")
        base_package = importlib.import_module(package_parts[0])
        if base_package.__file__ is None:
            return
        package_path = Path(base_package.__file__).parent.joinpath(*package_parts[1:])

        for _, module_name, is_pkg in pkgutil.iter_modules([str(package_path)]):
            if is_pkg or module_name in ("__init__", "common"):
                continue
            module_path = f"{solvers_package}.{module_name}"
            try:
                importlib.import_module(module_path)
            except ImportError as e:
                logger.warning("could not import %s: %s", module_path, e)
