import argparse
import json
import sys
from typing import List, Optional

import structlog

from app.core.config import settings
from app.core.exceptions import BoundViolationError, ConfigError, GMFLDError
from app.core.logging import setup_logging
from app.models.graphon import KernelKind
from app.models.scenario import ProfileKind
from app.schemas.run_config import (
    CaseName,
    CostVariant,
    RunConfig,
    SolverMode,
    expand_preset,
    load_run_config,
    make_preset,
)
from app.services import harness, io
from app.services.mc_agents import McConfig

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BOUND_VIOLATION = 2

DEFAULT_THETAS = "0.5,0.25,0.125,0.0625"


def parse_levels(text: str) -> List[int]:
    """'4..8' or '4,5,6' -> list of levels"""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Cannot parse levels '{text}'") from e


def parse_floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Cannot parse number list '{text}'") from e


def parse_ints(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Cannot parse index list '{text}'") from e


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run file (RunConfig schema)")
    parser.add_argument("--preset", choices=[c.value for c in CaseName], help="Case preset A-D, R, M")
    parser.add_argument("--no-graphon", action="store_true", help="Identity kernel instead of the Gaussian graphon")
    parser.add_argument("--costs", choices=[c.value for c in CostVariant], default=CostVariant.DEFAULT.value)
    parser.add_argument("--theta", type=float, help="Gaussian kernel width")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--dt", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--mode", choices=[m.value for m in SolverMode])
    parser.add_argument("--omega", type=float)
    parser.add_argument("--nx", type=int)
    parser.add_argument("--ny", type=int)
    parser.add_argument("--delta", type=float, help="Constant discount rate override")
    parser.add_argument("--eta", type=float, help="Constant regularization override")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then preset, then individual flag overrides"""
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.preset:
        preset = make_preset(args.preset, graphon=not args.no_graphon, costs=args.costs)
        config = expand_preset(preset, base=config, theta=args.theta or 0.5)
    elif args.no_graphon:
        config = config.updated(graphon={"kind": KernelKind.IDENTITY.value, "theta": None})
    elif args.theta is not None:
        config = config.updated(graphon={"kind": KernelKind.GAUSSIAN.value, "theta": args.theta})

    solver = {
        key: value for key, value in (
            ("dt", args.dt), ("eps", args.eps), ("max_iter", args.max_iter),
            ("mode", args.mode), ("omega", args.omega),
        ) if value is not None
    }
    grid = {key: value for key, value in (("nx", args.nx), ("ny", args.ny)) if value is not None}
    rates = {}
    if args.delta is not None:
        rates["delta"] = {"kind": ProfileKind.CONSTANT.value, "value": args.delta}
    if args.eta is not None:
        rates["eta"] = {"kind": ProfileKind.CONSTANT.value, "value": args.eta}
    sections = {name: value for name, value in (("solver", solver), ("grid", grid), ("rates", rates)) if value}
    if args.out:
        sections["outputs"] = {"dir": args.out}
    return config.updated(**sections) if sections else config


def cmd_solve(args: argparse.Namespace) -> int:
    outcome = harness.run_case(resolve_config(args), harness.Dynamic.HJB)
    logger.info("Solve finished", iterations=outcome.report.iterations, outputs=[str(p) for p in outcome.paths.values()])
    return EXIT_OK


def cmd_dlogit(args: argparse.Namespace) -> int:
    harness.run_case(resolve_config(args), harness.Dynamic.DISCOUNTED_LOGIT)
    return EXIT_OK


def cmd_logit_eq(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.trajectory:
        harness.run_trajectory(config, args.trajectory, record_every=args.record_every)
    harness.run_case(config, harness.Dynamic.LOGIT_EQUILIBRIUM)
    return EXIT_OK


def cmd_mc(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    mc = McConfig(samples=args.samples, seed=args.seed, columns=parse_ints(args.columns))
    errors = harness.run_mc(config, mc)
    print(json.dumps({str(j): err for j, err in errors.items()}, indent=2))
    return EXIT_OK


def cmd_converge(args: argparse.Namespace) -> int:
    base = load_run_config(args.config) if args.config else None
    if args.dt is not None:
        base = (base or RunConfig()).updated(solver={"dt": args.dt})
    preset = make_preset(args.preset, graphon=not args.no_graphon, costs=args.costs)
    table = harness.convergence_study(
        preset,
        parse_levels(args.levels),
        args.ref,
        base=base,
        theta=args.theta,
        allow_long_running=args.long_running or settings.ALLOW_LONG_RUNNING,
        n_jobs=args.jobs,
    )
    out = io.ensure_dir(args.out or settings.OUTPUT_DIR)
    io.write_table(table.rows, out / "convergence.csv")
    io.write_json(table, out / "convergence.json")
    return EXIT_OK


def cmd_sweep_theta(args: argparse.Namespace) -> int:
    base = load_run_config(args.config) if args.config else None
    preset = make_preset(args.preset, graphon=True, costs=args.costs)
    points = harness.sweep_theta(
        preset,
        parse_floats(args.thetas),
        args.out or settings.OUTPUT_DIR,
        base=base,
        warm_start=args.warm_start,
    )
    return EXIT_OK if all(point.converged for point in points) else EXIT_ERROR


def cmd_check(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    report = harness.check(config, ubar=args.ubar, lipschitz_u=args.lipschitz_u)
    if args.out:
        io.write_json(report, io.ensure_dir(args.out) / "check.json")
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_regress(args: argparse.Namespace) -> int:
    report = harness.regress(args.run, args.golden, tol=args.tol)
    print(report.model_dump_json(indent=2))
    return EXIT_OK if report.ok else EXIT_ERROR


def cmd_golden(args: argparse.Namespace) -> int:
    written = harness.write_goldens(args.out, cases=args.cases.split(","), n=args.n)
    print(json.dumps({name: str(path) for name, path in written.items()}, indent=2))
    return EXIT_OK


def cmd_export_inputs(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    harness.export_inputs(config, args.out or config.outputs.dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmfld", description=settings.APP_NAME)
    parser.add_argument("--log-level", default=None, help="Overrides GMFLD_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["json", "console"], default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Solve the HJB system")
    _add_run_arguments(solve)
    solve.set_defaults(handler=cmd_solve)

    dlogit = commands.add_parser("dlogit", help="Solve the discounted logit dynamic")
    _add_run_arguments(dlogit)
    dlogit.set_defaults(handler=cmd_dlogit)

    logit_eq = commands.add_parser("logit-eq", help="Classical logit equilibrium")
    _add_run_arguments(logit_eq)
    logit_eq.add_argument("--trajectory", type=int, default=0, help="Also write trajectory.csv for this many steps")
    logit_eq.add_argument("--record-every", type=int, default=1)
    logit_eq.set_defaults(handler=cmd_logit_eq)

    mc = commands.add_parser("mc", help="Monte Carlo check of the occupation measure")
    _add_run_arguments(mc)
    mc.add_argument("--samples", type=int, default=100_000)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--columns", default="0", help="Comma-separated 0-based type indices")
    mc.set_defaults(handler=cmd_mc)

    converge = commands.add_parser("converge", help="Grid refinement study")
    converge.add_argument("--config")
    converge.add_argument("--preset", choices=[c.value for c in CaseName], default=CaseName.D.value)
    converge.add_argument("--no-graphon", action="store_true")
    converge.add_argument("--costs", choices=[c.value for c in CostVariant], default=CostVariant.DEFAULT.value)
    converge.add_argument("--theta", type=float, default=0.5)
    converge.add_argument("--levels", default="4..7")
    converge.add_argument("--ref", type=int, default=8)
    converge.add_argument("--long-running", action="store_true", help="Allow reference levels of 9 and above")
    converge.add_argument("--dt", type=float, help=f"Pseudo-time step (default {settings.CONVERGE_DT} without --config)")
    converge.add_argument("--jobs", type=int, help="Parallel level solves (default GMFLD_N_JOBS)")
    converge.add_argument("--out")
    converge.set_defaults(handler=cmd_converge)

    sweep = commands.add_parser("sweep-theta", help="Solve for a list of kernel widths")
    sweep.add_argument("--config")
    sweep.add_argument("--preset", choices=[c.value for c in CaseName], default=CaseName.D.value)
    sweep.add_argument("--costs", choices=[c.value for c in CostVariant], default=CostVariant.DEFAULT.value)
    sweep.add_argument("--thetas", default=DEFAULT_THETAS)
    sweep.add_argument("--warm-start", action="store_true")
    sweep.add_argument("--out")
    sweep.set_defaults(handler=cmd_sweep_theta)

    check = commands.add_parser("check", help="Contraction, monotonicity and kernel report")
    _add_run_arguments(check)
    check.add_argument("--ubar", type=float)
    check.add_argument("--lipschitz-u", type=float)
    check.set_defaults(handler=cmd_check)

    regress = commands.add_parser("regress", help="Diff a run directory against golden CSVs")
    regress.add_argument("--run", required=True)
    regress.add_argument("--golden", required=True)
    regress.add_argument("--tol", type=float, default=1e-9)
    regress.set_defaults(handler=cmd_regress)

    golden = commands.add_parser("golden", help="Write golden result sets for the small-n presets")
    golden.add_argument("--out", default="tests/golden")
    golden.add_argument("--cases", default="A,B,C,D", help="Comma-separated presets with a golden step")
    golden.add_argument("--n", type=int, default=16)
    golden.set_defaults(handler=cmd_golden)

    export = commands.add_parser("export-inputs", help="Write graphon.csv and cost.csv")
    _add_run_arguments(export)
    export.set_defaults(handler=cmd_export_inputs)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    try:
        return args.handler(args)
    except BoundViolationError as e:
        logger.error(f"Bound violation: {e}")
        return EXIT_BOUND_VIOLATION
    except GMFLDError as e:
        logger.error(f"Error running {args.command}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
