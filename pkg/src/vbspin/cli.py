"""Command-line front end: ``simulate``, ``fit`` and ``sweep``.

Exit codes: 0 ok, 2 invalid config or input, 3 numerical refusal
(step-size guard, unidentifiable fit), 4 fit did not converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, fitting, runner
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .data import DataFormatError, DataSeries, read_csv, write_csv
from .evolution import StepSizeError
from .report import ReportDocument

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4

OVERRIDES = ("protocol", "B", "f_mw", "omega", "power", "tau_max", "points", "seed",
             "out", "model", "n_components")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def exit_code(exc: BaseException) -> int | None:
    """Stable exit code for a known failure, ``None`` for a bug."""
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, fitting.ConvergenceError):
        return EXIT_NOT_CONVERGED
    if isinstance(exc, (StepSizeError, fitting.FitError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, DataFormatError, ValueError)):
        return EXIT_INPUT
    return None


# --------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--protocol", help="odmr, zeeman, rabi, rabi_power, t1, echo or ramsey")
    p.add_argument("--B", type=float, help="magnetic field (mT)")
    p.add_argument("--f-mw", type=float, help="microwave carrier (MHz)")
    p.add_argument("--omega", type=float, help="Rabi frequency (MHz)")
    p.add_argument("--power", type=float, help="microwave power (mW)")
    p.add_argument("--tau-max", type=float, help="last delay or pulse length (us)")
    p.add_argument("--points", type=int, help="number of sweep points")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", help="fit model name")
    p.add_argument("--n-components", type=int, help="fit model components")
    p.add_argument("--no-timing", action="store_true",
                   help="write null timing so reports are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbspin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate one protocol, optionally fit it")
    _add_run_flags(sim)

    fit = sub.add_parser("fit", help="fit a model to a CSV data file")
    fit.add_argument("data", help="CSV with x,y[,y_sigma] columns")
    fit.add_argument("--model", required=True, help=f"one of {', '.join(sorted(fitting.MODELS))}")
    fit.add_argument("--n-components", type=int, default=1, help="fit model components")
    fit.add_argument("--guess", help="comma-separated starting parameters")
    fit.add_argument("--out", default="fit_out", help="output directory")
    fit.add_argument("--no-timing", action="store_true",
                     help="write null timing so reports are byte-reproducible")

    sweep = sub.add_parser("sweep", help="repeat a protocol over one variable")
    _add_run_flags(sweep)
    sweep.add_argument("--variable", required=True,
                       help="B, omega, power, f_mw, tau_max, points, seed or table.key")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    over = {k: getattr(args, k, None) for k in OVERRIDES}
    return apply_overrides(cfg, **over)


def _timing(args, **parts) -> dict | None:
    if args.no_timing:
        return None
    return {k: round(v, 6) for k, v in parts.items()}


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot create output directory {path}: {exc}") from None


# --------------------------------------------------------------------------
# commands

def _simulate_point(cfg: RunConfig, fit: bool) -> tuple:
    """(series, fit result or None, error or None, timings) for one run."""
    t0 = time.perf_counter()
    series = runner.simulate(cfg)
    t1 = time.perf_counter()
    result, error = None, None
    if fit:
        model, n, param = cfg.fit_choice()
        try:
            result = fitting.fit_named(model, series, n)
        except fitting.ConvergenceError as exc:
            result, error = exc.best, exc
        if param not in result.params:
            raise ConfigError(f"[fit] param: model {model!r} has no parameter {param!r}; "
                              f"choose from {', '.join(result.param_names)}")
    return series, result, error, {"simulate_s": t1 - t0, "fit_s": time.perf_counter() - t1}


def _write_run(out: Path, cfg: RunConfig, series, result, timing) -> None:
    _ensure_dir(out)
    write_csv(series, out / "data.csv",
              comments=[f"vbspin {__version__} protocol={cfg.protocol} seed={cfg.seed}"])
    ReportDocument(__version__, cfg.to_dict(), {"data": series},
                   {"data": result} if result is not None else {}, timing).write(
        out / "report.json")


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    fit = cfg.fit.model is not None
    series, result, error, timing = _simulate_point(cfg, fit)
    _write_run(Path(cfg.out), cfg, series, result, _timing(args, **timing))
    if error is not None:
        raise error
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    data = read_csv(args.data)
    theta0 = None
    if args.guess:
        try:
            theta0 = [float(v) for v in args.guess.split(",")]
        except ValueError:
            raise CliError(EXIT_INPUT, f"--guess: not a list of numbers: {args.guess!r}") from None
    if args.n_components not in (1, 2, 3):
        raise CliError(EXIT_INPUT, "--n-components must be 1, 2 or 3")
    error = None
    try:
        result = fitting.fit_named(args.model, data, args.n_components, theta0)
    except fitting.ConvergenceError as exc:
        result, error = exc.best, exc
    out = Path(args.out)
    _ensure_dir(out)
    config = {"data": str(args.data), "model": args.model,
              "n_components": args.n_components, "guess": theta0}
    ReportDocument(__version__, config, {"data": data}, {"data": result},
                   _timing(args, fit_s=time.perf_counter() - t0)).write(out / "report.json")
    resid = DataSeries(data.x, result.residuals, data.y_sigma)
    write_csv(resid, out / "residuals.csv", comments=[f"residuals of {result.model} fit"])
    if error is not None:
        raise error
    return EXIT_OK


# sweep variables outside the config tables
_SHORTCUTS = {"B": ("spin", "B"), "omega": ("pulse", "omega"), "power": ("pulse", "power"),
              "f_mw": ("pulse", "f_mw"), "tau_max": ("pulse", "tau_max"),
              "points": ("pulse", "points"), "seed": ("run", "seed")}
_INTEGER = {("pulse", "points"), ("run", "seed"), ("ensemble", "n_quadrature"),
            ("spin", "n_nuclei")}


def sweep_target(variable: str) -> tuple[str, str]:
    if variable in _SHORTCUTS:
        return _SHORTCUTS[variable]
    table, _, key = variable.partition(".")
    if table in ("spin", "ensemble", "optics", "pulse") and key:
        return table, key
    raise CliError(EXIT_INPUT, f"--variable: cannot sweep {variable!r}; use one of "
                               f"{', '.join(_SHORTCUTS)} or table.key")


def parse_values(text: str, integer: bool) -> list:
    try:
        vals = [int(v) if integer else float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_INPUT, f"--values: not a list of numbers: {text!r}") from None
    if not vals:
        raise CliError(EXIT_INPUT, "--values: empty list")
    if len(set(vals)) != len(vals):
        raise CliError(EXIT_INPUT, "--values: duplicate values would share an output path")
    return vals


def point_config(cfg: RunConfig, target: tuple[str, str], value, index: int) -> RunConfig:
    """Config for sweep point ``index``; noise seeds advance with the index."""
    table, key = target
    cfg = dataclasses.replace(cfg, spin=dict(cfg.spin), ensemble=dict(cfg.ensemble),
                              optics=dict(cfg.optics), pulse=dataclasses.replace(cfg.pulse))
    cfg.seed = cfg.seed + index
    if table == "run":
        cfg.seed = value
    elif table == "pulse":
        if not hasattr(cfg.pulse, key):
            raise ConfigError(f"[pulse] {key}: unknown key")
        setattr(cfg.pulse, key, value)
    else:
        getattr(cfg, table)[key] = value
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _sweep_worker(job):
    cfg = job
    try:
        return _simulate_point(cfg, True), None
    except Exception as exc:  # reported by the collector in point order
        return None, exc


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    target = sweep_target(args.variable)
    values = parse_values(args.values, target in _INTEGER)
    configs = [point_config(cfg, target, v, i) for i, v in enumerate(values)]
    out = Path(cfg.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise CliError(EXIT_INPUT, f"output directory {out} exists and is not empty")
    workers = args.workers if args.workers is not None else cfg.sweep.workers
    if workers < 1:
        raise CliError(EXIT_INPUT, "--workers must be >= 1")
    t0 = time.perf_counter()
    if workers == 1 or len(configs) == 1:
        results = [_sweep_worker(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, configs))
    # single collector: all files are written here, in point order
    _ensure_dir(out)
    rows, first_error = [], None
    for i, (value, pcfg, (res, exc)) in enumerate(zip(values, configs, results)):
        if exc is not None and not isinstance(exc, fitting.ConvergenceError):
            raise exc
        series, fit, error, timing = res
        name = f"{i:03d}_{args.variable}={value!r}"
        _write_run(out / name, pcfg, series, fit, _timing(args, **timing))
        param = pcfg.fit_choice()[2]
        rows.append((float(value), fit[param], fit.stderr[param]))
        first_error = first_error or error
    summary = DataSeries(*map(np.array, zip(*rows))) if _increasing(rows) else None
    header = [f"vbspin {__version__} sweep {args.variable} protocol={cfg.protocol} "
              f"param={cfg.fit_choice()[2]}"]
    if summary is not None:
        write_csv(summary, out / "summary.csv", comments=header)
    else:
        _write_unsorted(out / "summary.csv", rows, header)
    series = {"summary": summary} if summary is not None else {}
    ReportDocument(__version__, {**cfg.to_dict(), "sweep": {"variable": args.variable,
                                                            "values": values}},
                   series, {}, _timing(args, total_s=time.perf_counter() - t0)).write(
        out / "summary.json")
    if first_error is not None:
        raise first_error
    return EXIT_OK


def _increasing(rows) -> bool:
    xs = [r[0] for r in rows]
    return all(b > a for a, b in zip(xs, xs[1:]))


def _write_unsorted(path, rows, header) -> None:
    # values given out of order: keep the requested order in the table
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in header:
            fh.write(f"# {c}\n")
        fh.write("x,y,y_sigma\n")
        for x, y, s in rows:
            fh.write(",".join("" if math.isnan(v) else repr(float(v)) for v in (x, y, s)) + "\n")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        code = exit_code(exc)
        if code is None:
            raise
        print(f"vbspin {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
