"""Command line interface

Exit codes: 0 success, 2 parse or configuration error, 3 not representable,
4 check failed, 5 every trajectory diverged.
"""

import argparse
import json
import logging
import pathlib
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._base import (
    CapacityError,
    ConfigError,
    DomainError,
    InvalidInputError,
    PreconditionError,
    format_scalar,
    make_formatter,
    to_scalar,
)
from .approx import better_approx
from .config import ExperimentConfig
from .deep import (
    DeepArch,
    DeepParams,
    deep_objective,
    grad_deep_exact_1d,
    risk_deep_exact_1d,
    width_scan,
)
from .dynamics import (
    fit_rate,
    gd_run,
    gf_integrate,
    kl_probe,
    multistart,
    sample_inits,
    shallow_objective,
    write_plotdata,
)
from .pwfun import PiecewiseLinear, canonicalize
from .representability import slope_relation_holds, synthesize
from .shallow import ShallowParams, grad_exact, realize, risk_exact


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NOT_REPRESENTABLE = 3
EXIT_CHECK_FAILED = 4
EXIT_DIVERGED = 5

INPUT_ERRORS = (
    ConfigError,
    InvalidInputError,
    PreconditionError,
    CapacityError,
    DomainError,
)

CSV_FORMATTER = make_formatter(".17g")


def _scalar_json(value):
    if isinstance(value, (float, np.floating)):
        return float(value)
    return format_scalar(value)


def _write_json(path: pathlib.Path, report: dict) -> None:
    with open(path, "w") as fp:
        json.dump(report, fp, sort_keys=True, indent=2)
        fp.write("\n")


def _write_vector(path: pathlib.Path, values) -> None:
    with open(path, "w") as fp:
        for i, value in enumerate(values):
            fp.write(f"{i},{CSV_FORMATTER(value)}\n")


def _output_dir(config: ExperimentConfig) -> pathlib.Path:
    out = pathlib.Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(report: dict) -> None:
    print(json.dumps(report, sort_keys=True))


def load_vector(path, mode: str) -> list:
    """Read parameters from a JSON list or from `index,value` lines

    Raises:
        InvalidInputError: On unreadable or malformed input.
    """

    try:
        text = pathlib.Path(path).read_text()
    except OSError as error:
        raise InvalidInputError(f"cannot read {path!s}: {error}") from error

    stripped = text.strip()
    if stripped.startswith("["):
        try:
            values = json.loads(stripped)
        except json.JSONDecodeError as error:
            raise InvalidInputError(f"malformed JSON in {path!s}: {error}") from error
        return [to_scalar(v, mode) for v in values]

    indexed = []
    for line in stripped.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        try:
            index, value = line.split(",")
            indexed.append((int(index), value))
        except ValueError as error:
            raise InvalidInputError(f"malformed line {line!r} in {path!s}") from error
    indexed.sort()
    if [i for i, _ in indexed] != list(range(len(indexed))):
        raise InvalidInputError(f"indices in {path!s} are not 0..n-1")
    return [to_scalar(v, mode) for _, v in indexed]


def _load_function(args, config: ExperimentConfig) -> PiecewiseLinear:
    if args.function is not None:
        try:
            with open(args.function) as fp:
                data = json.load(fp)
        except OSError as error:
            raise InvalidInputError(f"cannot read {args.function}: {error}") from error
        except json.JSONDecodeError as error:
            raise InvalidInputError(f"malformed function JSON: {error}") from error
        return PiecewiseLinear.from_dict(data, config.mode)
    return canonicalize(config.parsed_problem.target)


def _width(args, config: ExperimentConfig) -> int:
    if args.width is not None:
        return args.width
    if config.shallow_arch is not None:
        return config.shallow_arch.width
    raise ConfigError("--width is required for non-shallow architectures")


def _theta(args, config: ExperimentConfig, required: bool = True):
    if getattr(args, "theta", None) is not None:
        theta = load_vector(args.theta, config.mode)
        if len(theta) != config.arch.param_count:
            raise ConfigError(
                f"theta needs {config.arch.param_count} entries, got {len(theta)}"
            )
        return theta
    if config.theta is None and required:
        raise ConfigError("no parameters given (use --theta or the config key 'theta')")
    return config.theta


def _objective(config: ExperimentConfig):
    if config.mode == "rational":
        logger.info("dynamics run in float arithmetic")
    problem = config.parsed_problem.as_float()
    if config.shallow_arch is not None:
        return shallow_objective(config.shallow_arch, problem)
    return deep_objective(config.arch, problem)


def cmd_check(args, config: ExperimentConfig) -> int:
    f = _load_function(args, config)
    width = _width(args, config)
    certificate = slope_relation_holds(f, width)
    report = {
        "representable": certificate.holds,
        "witness": list(certificate.witness_indices) if certificate.witness_indices else None,
        "advisory": certificate.advisory,
        "width": width,
        "breakpoints": f.Q,
    }
    _emit(report)
    if args.out is not None:
        _write_json(_output_dir(config) / "report.json", report)
    return EXIT_OK if certificate.holds else EXIT_NOT_REPRESENTABLE


def cmd_synth(args, config: ExperimentConfig) -> int:
    f = _load_function(args, config)
    width = _width(args, config)
    theta = synthesize(f, width)
    report = {"representable": theta is not None, "width": width}
    if theta is not None:
        report["theta"] = [_scalar_json(t) for t in theta.theta]
    _emit(report)
    if args.out is not None:
        out = _output_dir(config)
        _write_json(out / "report.json", report)
        if theta is not None:
            _write_vector(out / "theta.csv", theta.theta)
    return EXIT_OK if theta is not None else EXIT_NOT_REPRESENTABLE


def _exact_risk_and_gradient(config: ExperimentConfig, theta, gradient: bool):
    problem = config.parsed_problem
    if config.shallow_arch is not None:
        params = ShallowParams(config.shallow_arch, theta)
        return grad_exact(params, problem) if gradient else risk_exact(params, problem)
    params = DeepParams(config.arch, theta)
    return grad_deep_exact_1d(params, problem) if gradient else risk_deep_exact_1d(params, problem)


def cmd_risk(args, config: ExperimentConfig) -> int:
    theta = _theta(args, config)
    risk = _exact_risk_and_gradient(config, theta, gradient=False)
    report = {"risk": _scalar_json(risk)}
    _emit(report)
    if args.out is not None:
        _write_json(_output_dir(config) / "report.json", report)
    return EXIT_OK


def cmd_grad(args, config: ExperimentConfig) -> int:
    theta = _theta(args, config)
    gradient = _exact_risk_and_gradient(config, theta, gradient=True)
    for i, g in enumerate(gradient):
        print(f"{i},{CSV_FORMATTER(g)}")
    if args.out is not None:
        _write_vector(_output_dir(config) / "grad.csv", gradient)
    return EXIT_OK


def _finite_difference(risk, theta: np.ndarray, step: float) -> np.ndarray:
    result = np.empty_like(theta)
    for i in range(len(theta)):
        forward, backward = theta.copy(), theta.copy()
        forward[i] += step
        backward[i] -= step
        result[i] = (risk(forward) - risk(backward)) / (2 * step)
    return result


def cmd_gradcheck(args, config: ExperimentConfig) -> int:
    settings = config.gradcheck
    objective = _objective(config)
    samples = sample_inits(config.gd, objective.dim, count=settings.samples)

    worst = None
    for theta in samples:
        gradient = np.asarray(objective.gradient(theta), dtype=float)
        if args.corrupt_gradient:
            gradient = 1.5 * gradient + 1.0
        estimate = _finite_difference(objective.risk, theta, settings.step)
        deviation = np.abs(gradient - estimate)
        error = float(deviation.max() / max(1.0, np.abs(gradient).max()))
        if worst is None or error > worst["relative_error"]:
            worst = {
                "relative_error": error,
                "component": int(deviation.argmax()),
                "theta": theta.tolist(),
                "gradient": gradient.tolist(),
                "finite_difference": estimate.tolist(),
            }

    if worst is None:
        logger.warning("gradient check with 0 samples passes vacuously")
    max_error = worst["relative_error"] if worst else 0.0
    passed = max_error <= settings.tolerance
    report = {
        "samples": settings.samples,
        "tolerance": settings.tolerance,
        "max_relative_error": max_error,
        "passed": passed,
    }
    if not passed:
        report["worst"] = worst
    _emit({k: v for k, v in report.items() if k != "worst"})
    _write_json(_output_dir(config) / "report.json", report)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_approx(args, config: ExperimentConfig) -> int:
    if config.shallow_arch is None:
        raise ConfigError("approx needs a (1, H, 1) architecture")
    problem = config.parsed_problem
    theta = ShallowParams(config.shallow_arch, _theta(args, config))
    result = better_approx(theta, problem)
    before, after = realize(theta), realize(result)
    report = {
        "risk_before": _scalar_json(risk_exact(theta, problem)),
        "risk_after": _scalar_json(risk_exact(result, problem)),
        "breakpoints_before": before.Q,
        "breakpoints_after": after.Q,
        "lipschitz_after": _scalar_json(after.lipschitz()),
        "theta": [_scalar_json(t) for t in result.theta],
    }
    _emit(report)
    if args.out is not None:
        out = _output_dir(config)
        _write_json(out / "report.json", report)
        _write_vector(out / "theta.csv", result.theta)
    return EXIT_OK


def _single_run(args, config: ExperimentConfig):
    objective = _objective(config)
    theta = _theta(args, config, required=False)
    if theta is None:
        theta = sample_inits(config.gd, objective.dim, count=1)[0]
    theta = np.array([float(t) for t in theta])
    method = args.method or config.method
    if method == "gf":
        return gf_integrate(theta, objective, config.gf), method
    gd = config.gd
    return gd_run(theta, objective, gd.learning_rate, gd.steps, gd.stride), method


def _run_report(trajectory, method: str) -> dict:
    return {
        "method": method,
        "final_risk": trajectory.final_risk,
        "best_kappa": 0,
        "diverged_count": int(trajectory.diverged),
        "steps": len(trajectory) - 1,
        "energy_residual": trajectory.residual,
    }


def _write_runs(out: pathlib.Path, trajectories) -> None:
    for kappa, trajectory in enumerate(trajectories):
        trajectory.write_csv(out / f"trajectory_{kappa}.csv")
    write_plotdata(trajectories, out / "plotdata.dat")


def cmd_train(args, config: ExperimentConfig) -> int:
    trajectory, method = _single_run(args, config)
    out = _output_dir(config)
    _write_runs(out, [trajectory])
    report = _run_report(trajectory, method)
    _write_json(out / "report.json", report)
    _emit(report)
    return EXIT_DIVERGED if trajectory.diverged else EXIT_OK


def cmd_multistart(args, config: ExperimentConfig) -> int:
    objective = _objective(config)
    result = multistart(objective, config.gd, jobs=config.jobs)
    out = _output_dir(config)
    _write_runs(out, result.trajectories)
    report = {
        "method": "gd",
        "init_count": len(result.trajectories),
        "final_risk": None if result.all_diverged else result.final_risk,
        "best_kappa": result.best_kappa,
        "diverged_count": result.diverged_count,
        "best_kappa_per_step": result.best_index.tolist(),
    }
    _write_json(out / "report.json", report)
    _emit({k: v for k, v in report.items() if k != "best_kappa_per_step"})
    return EXIT_DIVERGED if result.all_diverged else EXIT_OK


def cmd_rates(args, config: ExperimentConfig) -> int:
    trajectory, method = _single_run(args, config)
    out = _output_dir(config)
    _write_runs(out, [trajectory])
    report = _run_report(trajectory, method)
    report["rate_fit"] = fit_rate(trajectory).to_dict()
    report["kl_probe"] = kl_probe(trajectory).to_dict()
    _write_json(out / "report.json", report)
    _emit(report)
    return EXIT_DIVERGED if trajectory.diverged else EXIT_OK


def cmd_widthscan(args, config: ExperimentConfig) -> int:
    settings = config.widthscan
    domain = config.parsed_problem.domain
    archs = [
        DeepArch((1,) + (int(w),) * settings.hidden_layers + (1,), domain)
        for w in settings.widths
    ]
    rows = width_scan(archs, config.parsed_problem, settings.budget, config.gd, jobs=config.jobs)
    out = _output_dir(config)
    with open(out / "widthscan.csv", "w") as fp:
        fp.write("min_width,best_risk,seeds_used\n")
        for row in rows:
            fp.write(f"{row.min_width},{CSV_FORMATTER(row.best_risk)},{row.seeds_used}\n")
    report = {
        "rows": [
            {
                "layers": list(row.layers),
                "min_width": row.min_width,
                "best_risk": row.best_risk,
                "seeds_used": row.seeds_used,
                "warm_start": row.warm_start,
            }
            for row in rows
        ]
    }
    _write_json(out / "report.json", report)
    _emit(report)
    return EXIT_OK


COMMANDS = {
    "check": (cmd_check, "decide width-H representability of a piecewise linear function"),
    "synth": (cmd_synth, "synthesize exact shallow parameters"),
    "risk": (cmd_risk, "exact risk of a parameter vector"),
    "grad": (cmd_grad, "exact generalized gradient of a parameter vector"),
    "gradcheck": (cmd_gradcheck, "compare the gradient with finite differences"),
    "approx": (cmd_approx, "structure preserving better approximation"),
    "train": (cmd_train, "single gradient descent or gradient flow run"),
    "multistart": (cmd_multistart, "gradient descent from many random initializations"),
    "rates": (cmd_rates, "fit convergence rates and probe the KL exponent"),
    "widthscan": (cmd_widthscan, "best risk over growing widths"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["rational", "float"], help="scalar mode")
    common.add_argument("--jobs", type=int, help="parallel runs")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="more log output"
    )

    parser = argparse.ArgumentParser(
        prog="relukit", description="Experiments with shallow and deep ReLU networks"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, (_, description) in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=description)
        if name in ("check", "synth"):
            sub.add_argument("--function", help="piecewise linear function JSON")
            sub.add_argument("--width", type=int, help="hidden width H")
        if name in ("risk", "grad", "approx", "train", "rates"):
            sub.add_argument("--theta", help="parameters (JSON list or index,value CSV)")
        if name in ("train", "rates"):
            sub.add_argument("--method", choices=["gd", "gf"])
        if name == "gradcheck":
            sub.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_PARSE if exit_.code else EXIT_OK

    _configure_logging(args.verbose)
    command, _ = COMMANDS[args.command]
    try:
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        config = config.with_overrides(
            seed=args.seed, out=args.out, mode=args.mode, jobs=args.jobs
        ).validate()
        return command(args, config)
    except INPUT_ERRORS as error:
        logger.error("%s", error)
        return EXIT_PARSE
