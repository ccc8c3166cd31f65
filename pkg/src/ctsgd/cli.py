"""Command-line entry point.

Subcommands:
    run <config>             execute an experiment, write per-run and summary CSVs
    check-gradients <config> tangent filters vs finite differences
    average <csv...> --out   running time-averages of emitted iterate columns
    riccati <config>         steady-state covariance oracle for linear models

Exit codes: 0 ok, 1 tolerances not met, 2 configuration error, 3 numeric
failure, 4 I/O error.  The environment variable CTSGD_OUTPUT_ROOT, when
set, is prepended to every configured output directory.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import advdiff, experiments
from .config import load_config
from .csvio import emit_csv, read_csv
from .errors import (ConditioningError, ConfigurationError, ConvergenceError,
                     DimensionError, NumericBlowupError)
from .kalman import build_scalar_model, riccati_steady_state
from .records import TrajectoryRecord


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = experiments.run_experiment(cfg)
    print(f"wrote {result['output_dir']}/summary.csv "
          f"({'pass' if result['ok'] else 'FAIL'})")
    return 0 if result["ok"] else 1


def _cmd_check_gradients(args) -> int:
    cfg = load_config(args.config)
    if cfg["experiment"] != "gradient-check":
        raise ConfigurationError(
            "check-gradients requires a gradient-check config")
    result = experiments.run_experiment(cfg)
    for name, err, tol in result["rows"]:
        print(f"{name}: max rel err {err:.3e} (tolerance {tol:g})")
    return 0 if result["ok"] else 1


def _cmd_average(args) -> int:
    records = [read_csv(path) for path in args.csv]
    base = records[0]
    if base.n_rows < 2:
        raise DimensionError("averaging needs at least two rows")
    t = base.times
    for rec in records[1:]:
        if rec.columns != base.columns or rec.times.shape != t.shape \
                or not np.allclose(rec.times, t):
            raise DimensionError("input CSVs are not aligned on a common grid")
    mean = sum(rec.data for rec in records) / len(records)
    cols = base.columns[1:]
    out = np.empty((len(t), 1 + len(cols)))
    out[:, 0] = t
    dt_half = 0.5 * np.diff(t)
    for j, _ in enumerate(cols):
        vals = mean[:, j + 1]
        integral = np.concatenate(
            ([0.0], np.cumsum(dt_half * (vals[:-1] + vals[1:]))))
        with np.errstate(invalid="ignore", divide="ignore"):
            avg = integral / (t - t[0])
        avg[0] = vals[0]
        out[:, j + 1] = avg
    meta = {"source_files": ";".join(args.csv), "n_inputs": str(len(records))}
    meta.update({k: v for k, v in base.metadata.items() if k == "config_hash"})
    emit_csv(TrajectoryRecord(["t"] + [f"avg_{c}" for c in cols], out, meta),
             args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_riccati(args) -> int:
    cfg = load_config(args.config)
    exp = cfg["experiment"]
    if exp == "linear-scalar":
        m = cfg["model"]
        model = build_scalar_model(m["theta_star"], m["q"], 1.0, m["tau2"],
                                   cfg["inits"]["o_init"], m["o0"])
    elif exp == "advdiff-joint":
        grid = advdiff.build_grid(cfg["k_max"])
        scale = cfg["locations_scale"]
        sensors = advdiff.SensorConfig(
            locations=scale * np.asarray(cfg["sensors0"], float),
            radius=cfg["radius"],
            targets=scale * np.asarray(cfg["targets"], float))
        params = advdiff.AdvDiffParams.from_vector(
            np.asarray(cfg["theta_star"], float))
        model = advdiff.build_linear_model(params, sensors, grid)
    else:
        raise ConfigurationError(
            f"riccati oracle supports linear models only, not {exp!r}")
    S = riccati_steady_state(model)
    H = model.H if model.H is not None else np.eye(model.n_x)
    obj = float(np.einsum("ij,ji->", H, S))
    print(f"steady-state objective Tr[H Sigma_inf] = {obj:.12g}")
    if args.out:
        cols = ["i"] + [f"S{j}" for j in range(S.shape[1])]
        data = np.column_stack([np.arange(S.shape[0], dtype=float), S])
        emit_csv(TrajectoryRecord(cols, data, {"objective": "%.17g" % obj}),
                 args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctsgd",
        description="Joint online parameter estimation and sensor placement "
                    "for partially observed diffusions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(fn=_cmd_run)

    p_cg = sub.add_parser("check-gradients",
                          help="tangent filters vs finite differences")
    p_cg.add_argument("config")
    p_cg.set_defaults(fn=_cmd_check_gradients)

    p_avg = sub.add_parser("average",
                           help="running time-averages of CSV iterate columns")
    p_avg.add_argument("csv", nargs="+")
    p_avg.add_argument("--out", required=True)
    p_avg.set_defaults(fn=_cmd_average)

    p_ric = sub.add_parser("riccati",
                           help="steady-state covariance oracle values")
    p_ric.add_argument("config")
    p_ric.add_argument("--out", default=None)
    p_ric.set_defaults(fn=_cmd_riccati)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericBlowupError, ConvergenceError, ConditioningError,
            FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
