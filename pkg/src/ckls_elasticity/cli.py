"""Command-line entry point.

Subcommands::

    ckls-elasticity simulate   --model ckls --a 1 --b 1 --sigma 1 --k 0.75 --T 50 --omega 1.2 --out path.csv
    ckls-elasticity estimate   --input path.csv --b 1 --sigma 1
    ckls-elasticity experiment --name clt-beta --config cfg.json --jobs 4 --out-dir results/

Exit codes: 0 success, 1 runtime or estimation failure, 2 usage or
configuration error. Output goes to ``--out``/``--out-dir`` when given, else
to ``$CKLS_ELASTICITY_OUTPUT_DIR``, else the working directory. Each run
writes a manifest (JSON) before any other output and completes it at the end.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .errors import CklsError, ConfigError, ParameterError, PathFormatError
from .estimate import INITIAL_VARIANTS, EstimateOptions, estimate_elasticity
from .experiments import EXPERIMENT_NAMES, resolve_config, run_experiment
from .model import CirParams, CklsParams, SamplingGrid
from .simulate import (
    Scheme,
    SimulationConfig,
    build_grid,
    grid_from_delta,
    read_path_csv,
    simulate_cir_euler,
    simulate_cir_exact,
    simulate_ckls,
    write_path_csv,
)

OUTPUT_ENV = "CKLS_ELASTICITY_OUTPUT_DIR"

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list = field(default_factory=list)
    environment: dict = field(
        default_factory=lambda: {"python": platform.python_version(), "numpy": np.__version__}
    )

    def write(self, target: FsPath) -> None:
        target.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _default_dir() -> FsPath:
    return FsPath(os.environ.get(OUTPUT_ENV) or ".")


def _level(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckls-elasticity", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a path and write it as CSV")
    sim.add_argument("--model", choices=("ckls", "cir"), default="ckls")
    for name in ("a", "b", "sigma", "k", "alpha", "beta", "gamma"):
        sim.add_argument(f"--{name}", type=float)
    sim.add_argument("--L", type=float, default=1.0)
    sim.add_argument("--T", type=float, help="horizon")
    sim.add_argument("--omega", type=float, help="grid exponent: delta = T^-omega")
    sim.add_argument("--delta", type=float)
    sim.add_argument("--n", type=_positive_int)
    sim.add_argument("--scheme", choices=[s.value for s in Scheme], default=None)
    sim.add_argument("--substeps", type=_positive_int, default=16)
    sim.add_argument("--seed", type=_nonneg_int, default=0)
    sim.add_argument("--stream", type=_nonneg_int, default=0)
    sim.add_argument("--x0", type=float)
    sim.add_argument("--out", type=FsPath)

    est = sub.add_parser("estimate", help="estimate the elasticity from a CSV path")
    est.add_argument("--input", type=FsPath, required=True)
    est.add_argument("--b", type=float, required=True)
    est.add_argument("--sigma", type=float, required=True)
    est.add_argument("--epsilon", type=float, default=0.1)
    est.add_argument("--initial", choices=INITIAL_VARIANTS, default="agg-single")
    est.add_argument("--level", type=_level, default=0.95)
    est.add_argument("--L", type=float, default=1.0)
    est.add_argument("--k-initial", type=float, dest="k_initial")
    est.add_argument("--out", type=FsPath, help="also write the report JSON here")

    exp = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    exp.add_argument("--name", choices=EXPERIMENT_NAMES, required=True)
    exp.add_argument("--config", type=FsPath, help="JSON config, or a manifest from an earlier run")
    exp.add_argument("--jobs", type=_positive_int, default=1)
    exp.add_argument("--seed", type=_nonneg_int)
    exp.add_argument("--replications", type=_positive_int)
    exp.add_argument("--out-dir", type=FsPath, dest="out_dir")
    exp.add_argument("--strict", action="store_true", help="exit 1 when any check fails")
    return parser


# simulate -------------------------------------------------------------------


def _require(args, names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"missing required options: {' '.join(missing)}")


def _grid_from_args(args) -> SamplingGrid:
    if args.omega is not None:
        _require(args, ["T"])
        return build_grid(args.T, args.omega)
    if args.delta is not None and args.n is not None:
        return SamplingGrid(args.delta, args.n)
    if args.delta is not None and args.T is not None:
        return grid_from_delta(args.T, args.delta)
    raise ConfigError("give --T with --omega, --delta with --n, or --T with --delta")


def cmd_simulate(args) -> int:
    grid = _grid_from_args(args)
    if args.model == "ckls":
        _require(args, ["a", "b", "sigma", "k"])
        model = CklsParams(args.a, args.b, args.sigma, args.k, args.L)
        scheme = Scheme(args.scheme or Scheme.FULL_TRUNCATION)
    else:
        _require(args, ["alpha", "beta", "gamma"])
        model = CirParams(args.alpha, args.beta, args.gamma)
        scheme = Scheme(args.scheme or Scheme.EXACT_CIR)
    sim = SimulationConfig(args.substeps, scheme, args.seed, args.x0, args.stream)
    out = args.out or _default_dir() / "path.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest_path = out.with_name(out.stem + ".manifest.json")
    config = {
        "model": args.model,
        "params": model.to_dict(),
        "grid": grid.to_dict(),
        "simulation": {"substeps": sim.substeps, "scheme": sim.scheme.value, "x0": sim.x0, "stream": sim.stream},
    }
    manifest = RunManifest("simulate", config, args.seed, outputs=[out.name])
    manifest.write(manifest_path)
    if args.model == "ckls":
        path = simulate_ckls(model, grid, sim)
    elif scheme is Scheme.EXACT_CIR:
        path = simulate_cir_exact(model, grid, sim)
    else:
        path = simulate_cir_euler(model, grid, sim)
    write_path_csv(path, out)
    manifest.finished = _now()
    manifest.write(manifest_path)
    print(f"wrote {out} ({grid.n + 1} rows)")
    return EXIT_OK


# estimate -------------------------------------------------------------------


def cmd_estimate(args) -> int:
    path = read_path_csv(args.input)
    options = EstimateOptions(args.initial, args.epsilon, args.level, args.L, True, args.k_initial)
    report = estimate_elasticity(path, args.b, args.sigma, options)
    text = report.to_json()
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# experiment -----------------------------------------------------------------


def _load_overrides(target: FsPath | None) -> dict:
    if target is None:
        return {}
    try:
        data = json.loads(target.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{target}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{target}: expected a JSON object")
    # a manifest from an earlier run carries the resolved config under "config"
    if "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    return data


def _csv_table(rows: list) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(format(v, ".17g") if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_experiment(args) -> int:
    overrides = _load_overrides(args.config)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["replications"] = args.replications
    config = resolve_config(args.name, overrides)
    out_dir = args.out_dir or _default_dir() / args.name
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = ["summary.json", "per_replication.csv"]
    manifest = RunManifest("experiment", config.to_dict(), config.seed, outputs=outputs)
    manifest.write(out_dir / "manifest.json")

    summary = run_experiment(config, jobs=args.jobs)

    (out_dir / "summary.json").write_text(summary.to_json(), encoding="utf-8")
    (out_dir / "per_replication.csv").write_text(summary.per_replication_csv(), encoding="utf-8")
    for name, rows in summary.tables.items():
        fname = f"plot_{name}.csv"
        (out_dir / fname).write_text(_csv_table(rows), encoding="utf-8")
        outputs.append(fname)
    manifest.outputs = outputs
    manifest.finished = _now()
    manifest.write(out_dir / "manifest.json")

    print(f"{config.name}: {'PASS' if summary.passed else 'FAIL'}")
    for key, chk in summary.checks.items():
        print(f"  {'pass' if chk['passed'] else 'FAIL'}  {key}: {chk['rule']} (value {chk['value']})")
    print(f"  failures: {summary.failures['count']} of {summary.replications}; output in {out_dir}")
    if args.strict and not summary.passed:
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "experiment": cmd_experiment}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ParameterError, ConfigError, PathFormatError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CklsError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
