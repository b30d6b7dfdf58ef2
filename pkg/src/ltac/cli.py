"""Command-line front end.

Exit codes: 0 success, 1 infeasible / no certificate, 2 usage or parse
error, 3 solver or simulation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmarks
from .bounds import BoundednessError, NoCertificateError, lower_bound, upper_bound, upper_bound_ball
from .controller_io import from_synthesis, read_controller, write_controller
from .poly import parse_polynomial
from .report import bound_report, program_report, sos_report, sweep_report, synthesis_report, to_json, to_text
from .sdp import SolverOptions
from .sdpa import write_sdpa
from .sim import epsilon_sweep, integrate, settle
from .sos import InfeasibleError, UnboundedError, check_sos, solve_program
from .sosfile import looks_like_program, parse_program
from .synthesis import Degrees, SynthesisInfeasibleError, solve_O1, solve_O1_ball
from .system import read_system

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _emit(report: dict, args) -> None:
    print(to_json(report) if args.json else to_text(report))


def _load_system(spec: str):
    """A system file path, or the name of a shipped preset."""
    path = Path(spec)
    if path.exists():
        return read_system(path), None
    if spec in benchmarks.PRESETS:
        return benchmarks.load(spec), spec
    raise UsageError(f"no system file {spec!r} (presets: {', '.join(benchmarks.PRESETS)})")


def _ball(args, system) -> float | None:
    if args.ball is None:
        return None
    if args.ball == "system":
        if system.beta is None:
            raise UsageError("--ball given without a value but the system file has no 'ball: beta'")
        return system.beta
    return float(args.ball)


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    return vals


def _opts() -> SolverOptions:
    return SolverOptions.from_env()


# -- subcommands --------------------------------------------------------------------


def cmd_check_sos(args) -> int:
    text = Path(args.expr).read_text().strip() if Path(args.expr).is_file() else args.expr
    if looks_like_program(text):
        prog = parse_program(text)
        try:
            sol = solve_program(prog, _opts())
        except InfeasibleError as exc:
            _emit(program_report(None, str(exc)), args)
            return EXIT_INFEASIBLE
        _emit(program_report(sol), args)
        return EXIT_OK
    p = parse_polynomial(text, args.nvars)
    try:
        sol = check_sos(p, _opts())
    except InfeasibleError as exc:
        _emit(sos_report(p, None, str(exc)), args)
        return EXIT_INFEASIBLE
    _emit(sos_report(p, sol), args)
    return EXIT_OK


def _run_bound(system, dv, ds, beta, lower=False):
    if lower:
        return lower_bound(system, dv, _opts(), d_S=ds if beta is not None else None, beta=beta)
    if beta is not None:
        return upper_bound_ball(system, dv, ds, beta, _opts())
    return upper_bound(system, dv, _opts())


def cmd_bound(args) -> int:
    system, _ = _load_system(args.system)
    beta = _ball(args, system)
    cert = _run_bound(system, args.dv, args.ds if args.ds is not None else args.dv, beta, args.lower)
    if args.export_sdpa:
        if cert.sdp is None:
            raise UsageError("the bound is trivial (constant cost); no SDP was built")
        write_sdpa(cert.sdp, args.export_sdpa)
    _emit(bound_report(cert, system.name), args)
    return EXIT_OK


def _synthesize(system, beta, dv, ds, degrees, eps_max):
    cert = _run_bound(system, dv, ds, beta)
    if beta is None:
        return solve_O1(system, cert, degrees, _opts(), eps_max=eps_max)
    return solve_O1_ball(system, cert, beta, degrees, _opts(), eps_max=eps_max)


def _degrees(ns) -> Degrees:
    return Degrees(d_u1=ns.du1, d_V1=ns.dv1, d_s1=ns.ds1, d_s0=ns.ds0, u1_constant=ns.u1_constant)


def cmd_synthesize(args) -> int:
    system, _ = _load_system(args.system)
    beta = _ball(args, system)
    res = _synthesize(system, beta, args.dv, args.ds if args.ds is not None else args.dv,
                      _degrees(args), args.eps_max)
    if args.output:
        write_controller(from_synthesis(res, system.name), args.output)
    _emit(synthesis_report(res, system.name), args)
    return EXIT_OK


def _start_state(system, preset, x0, settle_T, dt):
    if x0 is None:
        if preset is None:
            raise UsageError("--x0 is required for systems that are not shipped presets")
        x0 = benchmarks.INITIAL_STATES[preset]
        settle_T = 100.0 if settle_T is None else settle_T
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.n,):
        raise UsageError(f"x0 needs {system.n} entries, got {x0.size}")
    if settle_T:
        x0 = settle(system, x0, settle_T, dt)
    return x0


def _sweep(system, preset, controller, grid, T, x0, settle_T, dt, jobs, dump_dir=None):
    if not grid:
        raise UsageError("empty eps grid")
    if np.any(np.diff(grid) <= 0) or min(grid) < 0:
        raise UsageError("eps grid must be nonnegative and strictly ascending")
    start = _start_state(system, preset, x0, settle_T, dt)
    sweep = epsilon_sweep(system, controller, grid, start, T, dt, jobs=jobs)
    if dump_dir:
        d = Path(dump_dir)
        d.mkdir(parents=True, exist_ok=True)
        for e in grid:
            traj = integrate(system, controller.u1, e, start, T, dt)
            (d / f"trajectory_eps{e:g}.csv").write_text(traj.to_csv())
    return sweep


def cmd_sweep(args) -> int:
    system, preset = _load_system(args.system)
    controller = read_controller(args.controller)
    if controller.n != system.n or controller.m != system.m:
        raise UsageError(f"controller is for n={controller.n}, m={controller.m}; system has n={system.n}, m={system.m}")
    if controller.C0 is None or controller.C1 is None:
        raise UsageError("controller file lacks C0/C1 needed for the bound line")
    grid = _floats(args.eps_grid, "--eps-grid")
    x0 = _floats(args.x0, "--x0") if args.x0 else None
    sweep = _sweep(system, preset, controller, grid, args.T, x0, args.settle, args.dt, args.jobs,
                   args.dump_trajectories)
    if args.output:
        Path(args.output).write_text(sweep.to_csv())
    elif not args.json:
        sys.stdout.write(sweep.to_csv())
    _emit(sweep_report(sweep, system.name), args)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """bound -> synthesize -> sweep from one JSON config.

    Keys: ``system``, ``output_dir``, ``bound`` {dv, ds, ball}, ``synthesize``
    {du1, dv1, ds1, ds0, eps_max, u1_constant}, ``sweep`` {eps_grid, T, x0,
    settle, dt, jobs}. ``ball`` may be a number or ``true`` for the system's.
    """
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config: {exc}") from None
    system, preset = _load_system(str(cfg.get("system", "")))
    b = cfg.get("bound", {})
    ball = b.get("ball")
    beta = (system.beta if ball is True else None if ball in (None, False) else float(ball))
    if ball is True and beta is None:
        raise UsageError("config asks for the system ball but the system has none")
    dv = int(b.get("dv", 4))
    ds = int(b.get("ds", dv))
    s = cfg.get("synthesize", {})
    deg = Degrees(int(s.get("du1", 1)), int(s.get("dv1", 4)), int(s.get("ds1", 2)),
                  int(s.get("ds0", 4)), bool(s.get("u1_constant", False)))
    out = Path(cfg.get("output_dir", "ltac_out"))
    out.mkdir(parents=True, exist_ok=True)

    cert = _run_bound(system, dv, ds, beta)
    (out / "bound.json").write_text(to_json(bound_report(cert, system.name)))
    res = (solve_O1(system, cert, deg, _opts(), eps_max=s.get("eps_max", 0.1)) if beta is None
           else solve_O1_ball(system, cert, beta, deg, _opts(), eps_max=s.get("eps_max", 0.1)))
    controller = from_synthesis(res, system.name)
    write_controller(controller, out / "controller.txt")
    (out / "synthesis.json").write_text(to_json(synthesis_report(res, system.name)))
    w = cfg.get("sweep", {})
    grid = [float(e) for e in w.get("eps_grid", [])]
    sweep = _sweep(system, preset, controller, grid, float(w.get("T", 200.0)), w.get("x0"),
                   w.get("settle"), float(w.get("dt", 1e-3)), int(w.get("jobs", 1)))
    (out / "sweep.csv").write_text(sweep.to_csv())
    report = {
        "kind": "pipeline",
        "system": system.name,
        "C0": cert.C,
        "C1": res.C1,
        "u1": synthesis_report(res)["u1"],
        "sweep": sweep_report(sweep),
        "output_dir": str(out),
    }
    report["sweep"].pop("kind")
    report["sweep"].pop("system")
    _emit(report, args)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltac", description="Certified long-time-average bounds and small-feedback control synthesis.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-sos", parents=[common],
                       help="test whether a polynomial is SOS, or solve an SOS program file")
    p.add_argument("expr", help="polynomial text, or a file holding a polynomial or an SOS program")
    p.add_argument("--nvars", type=int, default=None, help="number of variables (default: highest x index)")
    p.set_defaults(func=cmd_check_sos)

    def ball_arg(q):
        q.add_argument("--ball", nargs="?", const="system", default=None, metavar="BETA",
                       help="restrict to x.x <= 2*BETA (no value: use the system file's ball)")

    p = sub.add_parser("bound", parents=[common], help="bound the long-time average of phi0")
    p.add_argument("system", help="system file or preset name")
    p.add_argument("--dv", type=int, default=2, help="degree of V (even)")
    p.add_argument("--ds", type=int, default=None, help="degree of the ball multiplier (default: dv)")
    ball_arg(p)
    p.add_argument("--lower", action="store_true", help="lower bound instead of upper")
    p.add_argument("--export-sdpa", metavar="PATH", help="write the SDP in SDPA sparse format")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("synthesize", parents=[common], help="synthesize u1 minimizing C1")
    p.add_argument("system")
    p.add_argument("--dv", type=int, default=4, help="degree of V0 for the leading bound")
    p.add_argument("--ds", type=int, default=None, help="ball multiplier degree for the leading bound")
    p.add_argument("--du1", type=int, default=1)
    p.add_argument("--dv1", type=int, default=4)
    p.add_argument("--ds1", type=int, default=2)
    p.add_argument("--ds0", type=int, default=4)
    p.add_argument("--u1-constant", action="store_true", help="allow a constant term in u1")
    p.add_argument("--eps-max", type=float, default=0.1,
                   help="largest eps the expansion must stay valid for (s1 >= -1/eps_max)")
    ball_arg(p)
    p.add_argument("-o", "--output", help="write the controller file here")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("sweep", parents=[common], help="simulate the closed loop over an eps grid")
    p.add_argument("system")
    p.add_argument("controller", help="controller file from 'synthesize -o'")
    p.add_argument("--eps-grid", required=True, help="comma-separated ascending eps values")
    p.add_argument("--T", type=float, default=200.0, help="integration time per run")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--x0", help="comma-separated initial state (presets have a default)")
    p.add_argument("--settle", type=float, default=None,
                   help="uncontrolled pre-run length (default 100 for preset initial states, else 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.add_argument("--dump-trajectories", metavar="DIR", help="write one trajectory CSV per eps")
    p.add_argument("-o", "--output", help="write the sweep CSV here (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", parents=[common], help="bound, synthesize and sweep from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleError, UnboundedError, NoCertificateError, BoundednessError,
            SynthesisInfeasibleError) as exc:
        print(f"ltac: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError) as exc:
        print(f"ltac: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # solver or simulation failure
        print(f"ltac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
