"""Command-line interface.

Subcommands: ``weights`` (build/validate), ``simulate``, ``fit``, ``test``,
``forecast``, ``study``.  Exit codes: 0 success, 1 validation failure,
2 usage/precondition error, 3 numerical failure.  Errors are emitted as a
JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import forecast as forecast_mod
from . import inference, panel_io, weights as weights_mod
from .copulas import CopulaSpec
from .estimate import EstimationError, FitConfig, FitResult, fit
from .likelihood import LikelihoodError, SingularInformationError
from .model import ModelError, ModelSpec, ParameterVector
from .simulate import SimulationConfig, SimulationError, simulate_path
from .study import StudyPlan, run_study
from .weights import AdjacencyList, GridSpec, WeightsError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fail(message: str, code: int) -> "CliError":
    return CliError(message, code)


def _emit_error(message: str, code: int) -> None:
    print(json.dumps({"error": message, "exit_code": code}), file=sys.stderr)


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise _fail(f"file not found: {path}", EXIT_USAGE)
    except json.JSONDecodeError as exc:
        raise _fail(f"malformed JSON in {path}: {exc}", EXIT_USAGE)


def _load_weights(path: str):
    try:
        return weights_mod.load_csv(path)
    except FileNotFoundError:
        raise _fail(f"file not found: {path}", EXIT_USAGE)
    except WeightsError as exc:
        raise _fail(str(exc), EXIT_VALIDATION)


def _load_panel(path: str) -> np.ndarray:
    try:
        return panel_io.load_panel_csv(path)
    except FileNotFoundError:
        raise _fail(f"file not found: {path}", EXIT_USAGE)
    except panel_io.PanelFormatError as exc:
        raise _fail(str(exc), EXIT_USAGE)


def _load_covariates(path: str) -> np.ndarray:
    try:
        return panel_io.load_covariates_csv(path)
    except FileNotFoundError:
        raise _fail(f"file not found: {path}", EXIT_USAGE)
    except panel_io.PanelFormatError as exc:
        raise _fail(str(exc), EXIT_USAGE)


# ----------------------------------------------------------------------


def cmd_weights_build(args) -> int:
    if args.kind in ("grid4nn", "grid-directional"):
        if args.n is None:
            raise _fail("--n is required for grid builders", EXIT_USAGE)
        grid = GridSpec(args.n)
        wset = (weights_mod.build_grid_4nn(grid) if args.kind == "grid4nn"
                else weights_mod.build_grid_directional(grid))
    else:  # adjacency
        if args.adjacency is None:
            raise _fail("--adjacency FILE is required for --kind adjacency", EXIT_USAGE)
        doc = _read_json(args.adjacency)
        try:
            adj = AdjacencyList.from_edges(int(doc["p"]),
                                           [tuple(e) for e in doc["edges"]])
            wset = weights_mod.from_adjacency(adj, max_order=args.max_order)
        except (KeyError, WeightsError) as exc:
            raise _fail(f"bad adjacency file: {exc}", EXIT_VALIDATION)
    report = weights_mod.validate(wset, allow_zero_rows=args.allow_zero_rows)
    if not report.ok:
        raise _fail(f"built weights failed validation: {report}", EXIT_VALIDATION)
    weights_mod.save_csv(wset, args.out)
    print(json.dumps({"written": args.out, "p": wset.p, "orders": len(wset)}))
    return EXIT_OK


def cmd_weights_validate(args) -> int:
    try:
        wset = weights_mod.load_csv(args.file, allow_zero_rows=True)
    except WeightsError as exc:
        _emit_error(str(exc), EXIT_VALIDATION)
        return EXIT_VALIDATION
    except FileNotFoundError:
        raise _fail(f"file not found: {args.file}", EXIT_USAGE)
    report = weights_mod.validate(wset, allow_zero_rows=args.allow_zero_rows)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    spec = ModelSpec.from_dict(_read_json(args.model))
    wset = _load_weights(args.weights)
    theta = ParameterVector.from_dict(_read_json(args.theta))
    X = _load_covariates(args.covariates) if args.covariates else None
    copula = CopulaSpec(args.copula, args.copula_param)
    cfg = SimulationConfig(T=args.T, seed=args.seed, burn_in=args.burn_in,
                           copula=copula)
    try:
        sim = simulate_path(theta, spec, wset, X=X, cfg=cfg)
    except (ModelError, ValueError) as exc:
        raise _fail(str(exc), EXIT_USAGE)
    except SimulationError as exc:
        raise _fail(str(exc), EXIT_NUMERICAL)
    panel_io.save_panel_csv(args.out, sim.counts)
    written = {"counts": args.out}
    if args.intensity_out:
        panel_io.save_panel_csv(args.intensity_out, sim.intensity)
        written["intensity"] = args.intensity_out
    print(json.dumps({"written": written, "T": args.T, "p": wset.p, "seed": args.seed}))
    return EXIT_OK


def cmd_fit(args) -> int:
    spec = ModelSpec.from_dict(_read_json(args.model))
    wset = _load_weights(args.weights)
    Y = _load_panel(args.data)
    X = _load_covariates(args.covariates) if args.covariates else None
    cfg = FitConfig(init_strategy=args.init.replace("-", "_"),
                    stationarity_criterion=args.criterion)
    try:
        result = fit(spec, wset, Y, X=X, cfg=cfg)
    except EstimationError as exc:
        raise _fail(f"insufficient observations or unusable inputs: {exc}", EXIT_USAGE)
    except (ModelError, LikelihoodError) as exc:
        raise _fail(str(exc), EXIT_USAGE)
    except SingularInformationError as exc:
        raise _fail(str(exc), EXIT_NUMERICAL)
    with open(args.out, "w") as fh:
        fh.write(result.to_json())
    print(json.dumps({"written": args.out, "converged": result.converged,
                      "loglik": result.loglik, "qic": result.qic}))
    return EXIT_OK


def cmd_test(args) -> int:
    result = FitResult.from_json(_read_text(args.fit))
    try:
        if args.param is not None:
            wald = inference.single_param_test(result, args.param)
        elif args.contrast is not None:
            C = np.loadtxt(args.contrast, delimiter=",", ndmin=2)
            c0 = np.loadtxt(args.c0, delimiter=",", ndmin=1) if args.c0 else np.zeros(C.shape[0])
            wald = inference.wald_test(result, C, c0)
        else:
            raise _fail("one of --param or --contrast is required", EXIT_USAGE)
    except inference.InferenceError as exc:
        raise _fail(str(exc), EXIT_NUMERICAL)
    except OSError as exc:
        raise _fail(str(exc), EXIT_USAGE)
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(wald.to_json())
    print(json.dumps(wald.to_dict()))
    return EXIT_OK


def _read_text(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except FileNotFoundError:
        raise _fail(f"file not found: {path}", EXIT_USAGE)


def cmd_forecast(args) -> int:
    result = FitResult.from_json(_read_text(args.fit))
    if result.weights is None:
        raise _fail("fit.json does not embed the weight matrices", EXIT_USAGE)
    spec, wset = result.spec, result.weights
    Y = _load_panel(args.data)
    X = _load_covariates(args.covariates) if args.covariates else None
    t0 = max(spec.q, spec.r, 1)
    if Y.shape[1] - 1 < t0:
        raise _fail("insufficient observations", EXIT_USAGE)
    try:
        lam = forecast_mod.rolling_one_step(result, spec, wset, Y, X=X,
                                            init=result.init_strategy)
    except (ModelError, LikelihoodError) as exc:
        raise _fail(str(exc), EXIT_USAGE)
    start = args.test_split if args.test_split is not None else t0
    if not t0 <= start <= Y.shape[1] - 1:
        raise _fail(f"--test-split must be in [{t0}, {Y.shape[1] - 1}]", EXIT_USAGE)
    Y_eval = Y[:, start:]
    lam_eval = lam[:, start:]
    panel_io.save_forecast_csv(args.out, Y_eval, lam_eval, t_start=start)
    metrics = {
        "mspe": forecast_mod.mspe(Y_eval, lam_eval),
        "mae": forecast_mod.mae(Y_eval, lam_eval),
        "explained_deviance": forecast_mod.explained_deviance(Y_eval, lam_eval),
        "t_start": int(start),
        "cells": int(Y_eval.size),
    }
    if args.metrics_out:
        with open(args.metrics_out, "w") as fh:
            json.dump(metrics, fh, indent=2)
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_study_run(args) -> int:
    plan_doc = _read_json(args.plan)
    if "master_seed" not in plan_doc:
        if args.seed is None:
            raise _fail("plan has no master_seed and no --seed was given "
                        "(explicit seeding is mandatory)", EXIT_USAGE)
        plan_doc["master_seed"] = args.seed
    elif args.seed is not None:
        plan_doc["master_seed"] = args.seed
    try:
        plan = StudyPlan.from_dict(plan_doc)
    except (KeyError, ValueError, ModelError) as exc:
        raise _fail(f"bad study plan: {exc}", EXIT_USAGE)
    report = run_study(plan, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    rows_path = os.path.join(args.out, "replicates.csv")
    with open(report_path, "w") as fh:
        fh.write(report.to_json())
    with open(rows_path, "w") as fh:
        fh.write(report.rows_csv())
    print(json.dumps({"written": [report_path, rows_path],
                      "aggregates": report.aggregates}))
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pstarmax",
        description="Poisson space-time ARMA models: simulate, fit, test, forecast")
    sub = parser.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="build or validate weight matrices")
    wsub = w.add_subparsers(dest="weights_command", required=True)
    wb = wsub.add_parser("build")
    wb.add_argument("--kind", required=True,
                    choices=["grid4nn", "grid-directional", "adjacency"])
    wb.add_argument("--n", type=int, help="grid side length")
    wb.add_argument("--adjacency", help="JSON file with {p, edges}")
    wb.add_argument("--max-order", type=int, default=1, choices=[1, 2])
    wb.add_argument("--allow-zero-rows", action="store_true")
    wb.add_argument("--out", required=True)
    wb.set_defaults(func=cmd_weights_build)
    wv = wsub.add_parser("validate")
    wv.add_argument("file")
    wv.add_argument("--allow-zero-rows", action="store_true")
    wv.set_defaults(func=cmd_weights_validate)

    s = sub.add_parser("simulate", help="simulate a count panel")
    s.add_argument("--model", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--theta", required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--burn-in", type=int, default=100)
    s.add_argument("--copula", default="independent",
                   choices=["independent", "clayton", "frank", "joe"])
    s.add_argument("--copula-param", type=float, default=0.0)
    s.add_argument("--covariates")
    s.add_argument("--out", required=True)
    s.add_argument("--intensity-out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model by constrained QMLE")
    f.add_argument("--model", required=True)
    f.add_argument("--weights", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--covariates")
    f.add_argument("--init", default="first-obs",
                   choices=["first-obs", "global-mean", "zero"])
    f.add_argument("--criterion", default="coefficient_sum",
                   choices=["coefficient_sum", "tau_adjusted"])
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("test", help="Wald tests on a fitted model")
    t.add_argument("--fit", required=True)
    t.add_argument("--param", type=int)
    t.add_argument("--contrast", help="CSV matrix C")
    t.add_argument("--c0", help="CSV vector c0 (defaults to zeros)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_test)

    fc = sub.add_parser("forecast", help="one-step predictions and metrics")
    fc.add_argument("--fit", required=True)
    fc.add_argument("--data", required=True)
    fc.add_argument("--covariates")
    fc.add_argument("--test-split", type=int)
    fc.add_argument("--out", required=True)
    fc.add_argument("--metrics-out")
    fc.set_defaults(func=cmd_forecast)

    st = sub.add_parser("study", help="Monte Carlo studies")
    stsub = st.add_subparsers(dest="study_command", required=True)
    str_ = stsub.add_parser("run")
    str_.add_argument("plan")
    str_.add_argument("--out", required=True)
    str_.add_argument("--jobs", type=int, default=1)
    str_.add_argument("--seed", type=int)
    str_.set_defaults(func=cmd_study_run)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("PSTARMAX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(str(exc), exc.code)
        return exc.code
    except (ModelError, WeightsError, LikelihoodError) as exc:
        _emit_error(str(exc), EXIT_VALIDATION)
        return EXIT_VALIDATION
    except (SimulationError, SingularInformationError) as exc:
        _emit_error(str(exc), EXIT_NUMERICAL)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
