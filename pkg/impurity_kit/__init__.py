from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

# Import tomllib for Python 3.11+ or tomli for earlier versions
try:
    import tomllib
except ImportError:
    import tomli as tomllib

from impurity_kit import model as model_io
from impurity_kit import norm_estimation, sdp_bound, zolotarev
from impurity_kit.__version__ import __version__
from impurity_kit.errors import ImpurityKitError
from impurity_kit.exact_oracle import DEFAULT_MEMORY_BUDGET_MB, ground_energy_exact
from impurity_kit.gaussian import Superposition
from impurity_kit.skew_linear import pfaffian
from impurity_kit.solvers.common import SolverRegistry

logger = logging.getLogger(__name__)

THREADS_ENV = "IMPURITY_KIT_THREADS"
FORMATS = ("json", "csv")

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """A command line that parses but cannot run."""


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


class OutputFormatter:
    """Writes a run report as JSON, or its table as CSV, to stdout."""

    def __init__(self, fmt: str = "json"):
        self.fmt = fmt

    def emit(
        self,
        report: dict[str, Any],
        header: list[str] | None = None,
        rows: list[list[Any]] | None = None,
    ) -> None:
        if self.fmt == "json":
            print(json.dumps(report, indent=2, sort_keys=True, default=_to_builtin))
            return
        if rows is None:
            # flatten scalar results into key,value rows
            header = ["key", "value"]
            rows = [
                [key, value]
                for key, value in sorted(report["results"].items())
                if isinstance(value, (int, float, str, bool))
            ]
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header or [])
        writer.writerows(rows)
        sys.stdout.write(buffer.getvalue())


def get_project_root() -> Path:
    """Get the project root directory, which contains the pyproject.toml file."""
    current_path = Path.cwd().resolve()

    for parent in [current_path, *current_path.parents]:
        if (parent / "pyproject.toml").exists():
            return parent

    return Path.cwd()


def read_pyproject_config() -> dict[str, Any]:
    """Read ``[tool.impurity_kit]`` from pyproject.toml if it exists."""
    config: dict[str, Any] = {"variational": {}, "norm": {}}

    try:
        pyproject_path = get_project_root() / "pyproject.toml"
        if pyproject_path.exists():
            with pyproject_path.open("rb") as f:
                pyproject = tomllib.load(f)
            section = pyproject.get("tool", {}).get("impurity_kit", {})
            for key in ("threads", "seed", "dim_cap", "memory_budget_mb"):
                if isinstance(section.get(key), int):
                    config[key] = section[key]
            if section.get("format") in FORMATS:
                config["format"] = section["format"]
            for table in ("variational", "norm"):
                if isinstance(section.get(table), dict):
                    config[table] = dict(section[table])
    except Exception as e:
        logger.warning("error reading pyproject.toml: %s", e)

    return config


def resolve_threads(flag: int | None, config: dict[str, Any]) -> int:
    """Worker count: flag, then the environment, then pyproject, then 1."""
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return max(1, int(config.get("threads", 1)))


def parse_option_value(value: str) -> Any:
    if value.lower() == "true":
        return True
    if value.lower() == "false":
        return False
    if re.match(r"^-?\d+$", value):
        return int(value)
    if re.match(r"^-?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?$", value):
        return float(value)
    return value


def parse_options(pairs: list[str] | None) -> dict[str, Any]:
    """``key=value`` pairs from ``-o``; raises ValueError on a malformed pair."""
    options: dict[str, Any] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"invalid option {pair!r}, expected key=value")
        options[key.replace("-", "_")] = parse_option_value(value)
    return options


def _add_common(parser: argparse.ArgumentParser, seed: bool = False) -> None:
    parser.add_argument(
        "--format", choices=FORMATS, default=None, help="Output format (default: json)."
    )
    parser.add_argument(
        "--timing", action="store_true", help="Add the wall time to the report."
    )
    if seed:
        parser.add_argument("--seed", type=int, default=None, help="Random seed.")
        parser.add_argument(
            "--threads",
            type=int,
            default=None,
            help=f"Worker threads (fallback: ${THREADS_ENV}).",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impurity-kit",
        description="Ground energies of fermionic quantum impurity models.",
    )
    parser.add_argument("--version", action="store_true", help="Show version and exit.")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress to stderr (-vv for debug detail).",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    pf_parser = subparsers.add_parser(
        "pfaffian", help="Pfaffian of a matrix in a JSON file"
    )
    pf_parser.add_argument("--file", type=Path, required=True, help="JSON matrix file.")
    _add_common(pf_parser)

    zo_parser = subparsers.add_parser(
        "zolotarev", help="Worst-case error of Zolotarev approximations of sqrt(x)"
    )
    zo_parser.add_argument(
        "--omega", type=float, action="append", required=True, help="Gap (repeatable)."
    )
    zo_parser.add_argument("--d-max", type=int, required=True, help="Largest degree.")
    zo_parser.add_argument("--grid", type=int, default=10_000, help="Grid points.")
    _add_common(zo_parser)

    solve_parser = subparsers.add_parser("solve", help="Run a ground-energy solver")
    solve_parser.add_argument(
        "solver", help="Solver name (quasipoly, variational, exact)."
    )
    _add_model(solve_parser)
    _add_solver_options(solve_parser)
    _add_common(solve_parser, seed=True)

    bound_parser = subparsers.add_parser(
        "bound", help="Lower bounds on the ground energy"
    )
    bound_sub = bound_parser.add_subparsers(dest="bound_kind")
    sdp_parser = bound_sub.add_parser("sdp", help="Semidefinite lower bound")
    sdp_sub = sdp_parser.add_subparsers(dest="sdp_command")
    build_p = sdp_sub.add_parser("build", help="Build the SDP and write an SDPA file")
    _add_model(build_p)
    build_p.add_argument(
        "--state", type=Path, required=True, help="Variational state JSON."
    )
    build_p.add_argument("--out", type=Path, required=True, help="SDPA output file.")
    build_p.add_argument(
        "--eps", type=float, default=sdp_bound.DEFAULT_LOCALIZATION_EPS, help="Cutoff."
    )
    build_p.add_argument(
        "--k", type=int, default=None, help="Override the localized size."
    )
    build_p.add_argument(
        "--certificate-out",
        type=Path,
        default=None,
        help="Write a conservative certificate.",
    )
    build_p.add_argument("--memory-budget-mb", type=int, default=None)
    _add_common(build_p)
    verify_p = sdp_sub.add_parser("verify", help="Verify a dual certificate")
    verify_p.add_argument("--program", type=Path, required=True, help="SDPA file.")
    verify_p.add_argument(
        "--certificate", type=Path, required=True, help="Certificate JSON {y0, y}."
    )
    verify_p.add_argument("--tol", type=float, default=0.0)
    _add_common(verify_p)

    exact_parser = subparsers.add_parser("exact", help="Exact diagonalization")
    _add_model(exact_parser)
    exact_parser.add_argument("--method", choices=("dense", "lanczos"), default=None)
    exact_parser.add_argument("--memory-budget-mb", type=int, default=None)
    _add_common(exact_parser)

    bench_parser = subparsers.add_parser("bench", help="Benchmark models")
    bench_sub = bench_parser.add_subparsers(dest="bench_model")
    anderson_p = bench_sub.add_parser("anderson", help="Single impurity Anderson model")
    anderson_p.add_argument("--n", type=int, required=True, help="Number of modes.")
    anderson_p.add_argument("--u", type=float, required=True, help="Interaction U.")
    anderson_p.add_argument("--method", default="exact", help="Solver name.")
    _add_solver_options(anderson_p)
    _add_common(anderson_p, seed=True)

    norm_parser = subparsers.add_parser(
        "norm-estimate", help="Monte Carlo norm estimate"
    )
    norm_parser.add_argument(
        "--state", type=Path, required=True, help="State JSON file."
    )
    norm_parser.add_argument("--eps", type=float, default=None)
    norm_parser.add_argument("--pfail", type=float, default=None)
    norm_parser.add_argument("--samples", type=int, default=None)
    _add_common(norm_parser, seed=True)

    return parser


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=Path, required=True, help="Model JSON file.")


def _add_solver_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--gamma", type=float, default=None, help="Precision (quasipoly)."
    )
    parser.add_argument("--s-star", type=int, default=None, help="Excitation cutoff.")
    parser.add_argument("--dim-cap", type=int, default=None, help="Subspace cap.")
    parser.add_argument("--chi", type=int, default=None, help="Gaussian rank.")
    parser.add_argument("--steps", type=int, default=None, help="Walk steps.")
    parser.add_argument("--restarts", type=int, default=None, help="Walk restarts.")
    parser.add_argument("--parity", choices=("both", "even", "odd"), default=None)
    parser.add_argument("--trace-file", type=Path, default=None, help="CSV walk trace.")
    parser.add_argument("--state-out", type=Path, default=None, help="Write the state.")
    parser.add_argument(
        "-o",
        "--option",
        action="append",
        help="Extra solver option 'name=value'; repeatable. Example: -o theta0=0.2",
    )


def _digest(*parts: Any) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, Path):
            h.update(part.read_bytes())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _report(
    args: argparse.Namespace,
    argv: list[str],
    inputs: str,
    results: dict[str, Any],
    seeds: dict[str, int] | None = None,
) -> dict[str, Any]:
    report: dict[str, Any] = {
        "command": argv,
        "inputs": inputs,
        "results": results,
        "seeds": seeds or {},
        "version": __version__,
    }
    if args.timing:
        report["wall_time"] = time.perf_counter() - args.started
    return report


def _load_matrix(path: Path) -> np.ndarray:
    with path.open(encoding="utf-8") as f:
        doc = json.load(f)
    if isinstance(doc, dict):
        if "re" in doc:
            return np.asarray(doc["re"]) + 1j * np.asarray(doc.get("im", 0.0))
        doc = doc["matrix"]
    return np.asarray(doc)


def _load_state(path: Path) -> Superposition:
    with path.open(encoding="utf-8") as f:
        return Superposition.from_dict(json.load(f))


def _run_pfaffian(
    args: argparse.Namespace, argv: list[str], out: OutputFormatter
) -> None:
    matrix = _load_matrix(args.file)
    value = pfaffian(matrix)
    result: Any = value.real if np.isrealobj(matrix) else [value.real, value.imag]
    results = {"pfaffian": result, "dim": len(matrix)}
    out.emit(
        _report(args, argv, _digest(args.file), results),
        ["pfaffian_re", "pfaffian_im"],
        [[repr(value.real), repr(value.imag)]],
    )


def _run_zolotarev(
    args: argparse.Namespace, argv: list[str], out: OutputFormatter
) -> None:
    table = zolotarev.error_table(args.omega, range(1, args.d_max + 1), args.grid)
    header = ["omega", "d", "r", "bound"]
    rows = [[omega, d, r, zolotarev.error_bound(omega, d)] for omega, d, r in table]
    results = {"rows": [dict(zip(header, row, strict=True)) for row in rows]}
    out.emit(
        _report(args, argv, _digest(args.omega, args.d_max, args.grid), results),
        header,
        [[repr(v) if isinstance(v, float) else v for v in row] for row in rows],
    )


def _solver_options(
    args: argparse.Namespace, config: dict[str, Any], seed: int, threads: int
) -> dict[str, Any]:
    options: dict[str, Any] = dict(config.get("variational", {}))
    for key in ("dim_cap", "memory_budget_mb"):
        if key in config:
            options[key] = config[key]
    for key in ("gamma", "s_star", "dim_cap", "chi", "steps", "restarts", "parity"):
        value = getattr(args, key)
        if value is not None:
            options[key] = value
    options.update(parse_options(args.option))
    options["seed"] = seed
    options["threads"] = threads
    return options


def _write_extras(args: argparse.Namespace, report: dict[str, Any], state: Any) -> None:
    trace = report.pop("trace", None)
    if args.trace_file is not None and trace is not None:
        with args.trace_file.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["step", "energy", "theta"])
            writer.writerows(trace)
        report["trace_file"] = str(args.trace_file)
    if args.state_out is not None:
        if not isinstance(state, Superposition):
            raise ImpurityKitError("this solver does not return a Gaussian state")
        args.state_out.write_text(json.dumps(state.to_dict()) + "\n", encoding="utf-8")
        report["state_file"] = str(args.state_out)


def _solve(
    name: str,
    model: model_io.ImpurityModel,
    args: argparse.Namespace,
    config: dict[str, Any],
) -> tuple[dict[str, Any], int]:
    if name not in SolverRegistry.names():
        raise UsageError(
            f"unknown solver {name!r}; available: {', '.join(SolverRegistry.names())}"
        )
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    threads = resolve_threads(args.threads, config)
    solver = SolverRegistry.create(name, _solver_options(args, config, seed, threads))
    started = time.perf_counter()
    result = solver.solve(model)
    elapsed = time.perf_counter() - started
    report = dict(result.report)
    _write_extras(args, report, result.state)
    results = {"E": result.energy, "energy": result.energy, "solver": name, **report}
    results["elapsed"] = elapsed
    if name == "variational":
        results["E_best"] = result.energy
    return results, seed


def _run_solve(
    args: argparse.Namespace,
    argv: list[str],
    out: OutputFormatter,
    config: dict[str, Any],
) -> None:
    model = model_io.load(args.model)
    results, seed = _solve(args.solver, model, args, config)
    out.emit(_report(args, argv, _digest(args.model), results, {"seed": seed}))


def _run_bench(
    args: argparse.Namespace,
    argv: list[str],
    out: OutputFormatter,
    config: dict[str, Any],
) -> None:
    model = model_io.anderson(args.n, args.u)
    results, seed = _solve(args.method, model, args, config)
    results.update({"n": args.n, "u": args.u})
    out.emit(_report(args, argv, _digest(args.n, args.u), results, {"seed": seed}))


def _run_exact(
    args: argparse.Namespace,
    argv: list[str],
    out: OutputFormatter,
    config: dict[str, Any],
) -> None:
    model = model_io.load(args.model)
    method = args.method or ("dense" if model.n <= 10 else "lanczos")
    budget = args.memory_budget_mb or config.get(
        "memory_budget_mb", DEFAULT_MEMORY_BUDGET_MB
    )
    energy, _ = ground_energy_exact(model, method, budget)
    results = {"energy": energy, "method": method, "n": model.n}
    out.emit(_report(args, argv, _digest(args.model), results))


def _run_bound(
    args: argparse.Namespace,
    argv: list[str],
    out: OutputFormatter,
    config: dict[str, Any],
) -> None:
    if args.sdp_command == "build":
        model = model_io.load(args.model)
        psi = _load_state(args.state)
        localization = sdp_bound.localize(psi, args.eps)
        k = localization.k if args.k is None else args.k
        budget = args.memory_budget_mb or config.get(
            "memory_budget_mb", sdp_bound.DEFAULT_MEMORY_BUDGET_MB
        )
        program = sdp_bound.build_program(model, localization.rotation, k, budget)
        sdp_bound.export_sdpa(program, args.out)
        results: dict[str, Any] = {
            "N": program.size,
            "dependencies": program.kernel_dim,
            "k": k,
            "program_file": str(args.out),
        }
        if args.certificate_out is not None:
            cert = sdp_bound.conservative_certificate(program)
            cert.dump(args.certificate_out)
            results["conservative_y0"] = cert.y0
        out.emit(_report(args, argv, _digest(args.model, args.state), results))
        return
    program = sdp_bound.program_from_sdpa(sdp_bound.read_sdpa(args.program))
    cert = sdp_bound.DualCertificate.load(args.certificate)
    valid, margin = sdp_bound.verify_certificate(program, cert, args.tol)
    results = {"valid": valid, "margin": margin, "y0": cert.y0}
    out.emit(_report(args, argv, _digest(args.program, args.certificate), results))


def _run_norm(
    args: argparse.Namespace,
    argv: list[str],
    out: OutputFormatter,
    config: dict[str, Any],
) -> None:
    psi = _load_state(args.state)
    defaults = config.get("norm", {})
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    eps = args.eps if args.eps is not None else float(defaults.get("eps", 0.1))
    p_fail = args.pfail
    if p_fail is None:
        p_fail = float(defaults.get("p_fail", 0.1))
    estimator = norm_estimation.EstimatorConfig(
        eps=eps,
        p_fail=p_fail,
        samples=args.samples,
        seed=seed,
        threads=resolve_threads(args.threads, config),
    )
    estimate = norm_estimation.estimate(psi, estimator)
    results = {
        "xi": estimate.value,
        "samples": estimate.samples,
        "variance": estimate.variance,
        "eps": estimate.eps,
        "p_fail": estimate.p_fail,
    }
    out.emit(_report(args, argv, _digest(args.state), results, {"seed": seed}))


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _incomplete(args: argparse.Namespace) -> str | None:
    if args.command is None:
        return "a command is required"
    if args.command == "bound" and getattr(args, "sdp_command", None) is None:
        return "expected 'bound sdp build' or 'bound sdp verify'"
    if args.command == "bench" and args.bench_model is None:
        return "expected 'bench anderson'"
    return None


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.started = time.perf_counter()

    if args.version:
        print(f"impurity-kit v{__version__}")
        return EXIT_OK

    problem = _incomplete(args)
    if problem is not None:
        parser.print_usage(sys.stderr)
        print(f"error: {problem}", file=sys.stderr)
        return EXIT_USAGE

    _configure_logging(args.verbose)
    config = read_pyproject_config()
    out = OutputFormatter(args.format or config.get("format", "json"))
    handlers = {
        "solve": _run_solve,
        "bench": _run_bench,
        "exact": _run_exact,
        "bound": _run_bound,
        "norm-estimate": _run_norm,
    }
    try:
        if args.command == "pfaffian":
            _run_pfaffian(args, argv, out)
        elif args.command == "zolotarev":
            _run_zolotarev(args, argv, out)
        else:
            handlers[args.command](args, argv, out, config)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ImpurityKitError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    return EXIT_OK
