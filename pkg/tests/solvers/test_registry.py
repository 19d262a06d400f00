import pytest

from impurity_kit.solvers.common import BaseSolver, SolverRegistry
from impurity_kit.solvers.exact import ExactSolver
from impurity_kit.solvers.quasipoly import QuasipolySolver
from impurity_kit.solvers.variational import VariationalSolver
from tests.conftest import exact_energy, random_gapped_model


def test_discovery_finds_every_solver():
    assert SolverRegistry.names() == ["exact", "quasipoly", "variational"]
    classes = SolverRegistry.get_solver_classes()
    assert classes["exact"] is ExactSolver
    assert classes["quasipoly"] is QuasipolySolver
    assert classes["variational"] is VariationalSolver
    assert all(issubclass(cls, BaseSolver) for cls in classes.values())


def test_create_filters_unknown_options():
    solver = SolverRegistry.create("quasipoly", {"gamma": 0.2, "chi": 3, "steps": 10})
    assert isinstance(solver, QuasipolySolver)
    assert solver.config.gamma == 0.2


def test_create_unknown_solver():
    with pytest.raises(KeyError, match="unknown solver"):
        SolverRegistry.create("dmrg")


def test_exact_solver_picks_method_by_size():
    model = random_gapped_model(4, seed=1)
    result = SolverRegistry.create("exact").solve(model)
    assert result.report["method"] == "dense"
    assert result.energy == pytest.approx(exact_energy(model))
