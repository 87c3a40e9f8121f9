"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``evaluate``, ``cv``, ``sweep`` and
``bound``.  A run is configured by an optional JSON file (``--config``,
validated against the shipped schema) plus flags; flags override file
fields.  Every command prints a JSON report to stdout and, when
``--out DIR`` is given, writes its artifacts there: delimited tables,
model archives, rendered figures and the same report as
``report.json``.

Exit codes: 0 on success, 2 for configuration problems, 3 for data
problems, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bounds import BoundConfig, empirical_bound
from .data import (NoiseSpec, default_sample_size, gen_type_a, gen_type_b,
                   load_dataset, sample_observations, save_dataset)
from .errors import ConfigError, DataError, NumericalError
from .hinge_vb import HingeFitConfig
from .hinge_vb import fit as fit_hinge
from .logit_vb import LogitFitConfig, fit_logit
from .model import (Dataset, PredictorMatrix, PriorConfig, hinge_risk,
                    logistic_risk, zero_one_risk)
from .store import load_model, save_model

_DEFAULTS = {
    "seed": 0,
    "solver": "hinge",
    "prior": "inv-gamma",
    "alpha": 1.0,
    "beta": 1.0,
    "lambda": None,          # resolved to the observation count at fit time
    "k": 10,
    "threads": 1,
    "epsilon": 0.05,
}

_SIM_DEFAULTS = {
    "kind": "type-a",
    "m1": 200,
    "m2": 200,
    "rank": 3,
    "noise": "none",
    "flip_prob": 0.1,
    "n": None,               # resolved to 20% of the grid
    "with_replacement": True,
}

_SWEEP_DEFAULTS = {
    "levels": [0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
    "seeds_per_level": 1,
}

_CV_FOLDS = 5
_CV_LAMBDA_MULTIPLES = (0.5, 1.0, 2.0, 4.0)
_CV_BETA_GRID = (0.25, 1.0, 4.0)


def _load_schema(name: str) -> dict:
    with resources.files("bitmc").joinpath(f"schemas/{name}").open("r") as handle:
        return json.load(handle)


def load_config(path) -> dict:
    """Read and schema-validate a JSON config file."""
    if path is None:
        return {}
    try:
        with open(path, "r") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(_load_schema("config_schema.json"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "(top level)"
        raise ConfigError(f"config file {path}: {where}: {first.message}")
    return raw


def _merged(cfg: dict, args) -> dict:
    """Defaults <- config file <- explicit flags."""
    out = dict(_DEFAULTS)
    out.update({k: v for k, v in cfg.items() if k in _DEFAULTS})
    for key in ("seed", "solver", "prior", "alpha", "beta", "k", "threads", "epsilon"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "lam", None) is not None:
        out["lambda"] = args.lam
    return out


def _prior_config(common: dict) -> PriorConfig:
    return PriorConfig(
        family=common["prior"], alpha=float(common["alpha"]),
        beta=float(common["beta"]), k=int(common["k"]),
    )


def _sim_section(cfg: dict) -> dict:
    sim = dict(_SIM_DEFAULTS)
    sim.update(cfg.get("simulate", {}))
    return sim


def _noise_spec(sim: dict) -> NoiseSpec:
    if sim["noise"] == "switch":
        return NoiseSpec(kind="switch", flip_prob=float(sim["flip_prob"]))
    return NoiseSpec(kind=sim["noise"])


def _make_truth(sim: dict, seed: int):
    if sim["kind"] == "type-a":
        return gen_type_a(sim["m1"], sim["m2"], sim["rank"], seed=seed)
    return gen_type_b(sim["m1"], sim["m2"], sim["rank"], seed=seed)


def _hinge_config(fit_cfg: dict, lam: float, seed: int) -> HingeFitConfig:
    keys = ("max_outer_iters", "stop_tol", "step0", "backtrack_factor",
            "max_backtracks", "armijo", "step_rule", "init", "sigma_init",
            "restarts")
    kwargs = {k: fit_cfg[k] for k in keys if k in fit_cfg}
    return HingeFitConfig(lam=lam, seed=seed, **kwargs)


def _logit_config(fit_cfg: dict, seed: int) -> LogitFitConfig:
    keys = ("max_iters", "stop_tol", "sigma_init", "xi_floor", "jitter")
    kwargs = {k: fit_cfg[k] for k in keys if k in fit_cfg}
    return LogitFitConfig(seed=seed, **kwargs)


def _mean_predictor(solver: str, state) -> PredictorMatrix:
    if solver == "hinge":
        return PredictorMatrix.from_factors(state.left, state.right)
    return PredictorMatrix.from_factors(state.mean_left, state.mean_right)


def _risk_metrics(predictor: PredictorMatrix, data: Dataset) -> dict:
    return {
        "zero_one": zero_one_risk(predictor, data),
        "hinge": hinge_risk(predictor, data),
        "logistic": logistic_risk(predictor, data),
        "accuracy": 1.0 - zero_one_risk(predictor, data),
    }


def _report(command: str, seed: int, elapsed: float, config: dict,
            metrics: dict, artifacts: dict) -> dict:
    report = {
        "command": command,
        "version": __version__,
        "seed": int(seed),
        "elapsed_seconds": float(elapsed),
        "config": config,
        "metrics": metrics,
        "artifacts": artifacts,
    }
    jsonschema.validate(report, _load_schema("report_schema.json"),
                        cls=jsonschema.Draft202012Validator)
    return report


def _emit(report: dict, out_dir) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(text + "\n")
    print(text)


def _out_dir(args):
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_trace_csv(trace, path, objective: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", objective])
        for i, value in enumerate(np.asarray(trace, dtype=float)):
            writer.writerow([i, f"{value:.12g}"])


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    sim = _sim_section(cfg)
    out = _out_dir(args)
    if out is None:
        raise ConfigError("simulate writes a dataset; --out DIR is required")
    seed = int(common["seed"])
    truth = _make_truth(sim, seed)
    n = sim["n"] if sim["n"] is not None else default_sample_size(sim["m1"], sim["m2"])
    data, clean = sample_observations(
        truth, _noise_spec(sim), n=int(n), seed=seed + 1,
        with_replacement=bool(sim["with_replacement"]),
    )
    data_path = out / "dataset.tsv"
    save_dataset(data, data_path)
    truth_path = out / "truth.tsv"
    np.savetxt(truth_path, truth.matrix, delimiter="\t", fmt="%.12g")
    flipped = float(np.mean(data.signed_labels != clean))
    metrics = {
        "m1": data.m1, "m2": data.m2, "n": data.n,
        "positive_fraction": float(np.mean(data.signed_labels > 0)),
        "noisy_fraction": flipped,
        "truth_rank": truth.rank,
        "truth_kind": truth.kind,
    }
    report = _report("simulate", seed, time.monotonic() - t0,
                     {"common": common, "simulate": sim}, metrics,
                     {"dataset": str(data_path), "truth": str(truth_path)})
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- fit


def _run_solver(common: dict, fit_cfg: dict, data: Dataset, seed: int):
    prior = _prior_config(common)
    lam = common["lambda"]
    lam = float(data.n) if lam is None else float(lam)
    if common["solver"] == "hinge":
        result = fit_hinge(data, prior, _hinge_config(fit_cfg, lam, seed))
        objective = "avb"
    else:
        result = fit_logit(data, prior, _logit_config(fit_cfg, seed))
        objective = "elbo"
    return result, prior, lam, objective


def cmd_fit(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    fit_cfg = cfg.get("fit", {})
    out = _out_dir(args)
    seed = int(common["seed"])
    data = load_dataset(args.data)
    result, prior, lam, objective = _run_solver(common, fit_cfg, data, seed)
    predictor = _mean_predictor(common["solver"], result.state)
    metrics = {
        "solver": common["solver"],
        "objective": objective,
        "final_objective": float(result.trace[-1]),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "lambda": lam,
        "train": _risk_metrics(predictor, data),
    }
    artifacts = {}
    if out is not None:
        model_path = out / "model.npz"
        save_model(model_path, common["solver"], result.state, prior, lam)
        trace_csv = out / "trace.csv"
        _write_trace_csv(result.trace, trace_csv, objective)
        trace_png = out / "trace.png"
        from .plots import fit_trace_figure

        fit_trace_figure(result.trace, trace_png, objective)
        artifacts = {"model": str(model_path), "trace_csv": str(trace_csv),
                     "trace_figure": str(trace_png)}
    report = _report("fit", seed, time.monotonic() - t0,
                     {"common": common, "fit": fit_cfg}, metrics, artifacts)
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    out = _out_dir(args)
    solver, state, prior, lam = load_model(args.model)
    data = load_dataset(args.data)
    predictor = _mean_predictor(solver, state)
    if predictor.shape != (data.m1, data.m2):
        raise DataError(
            f"model is for a {predictor.shape[0]}x{predictor.shape[1]} grid "
            f"but the dataset is {data.m1}x{data.m2}"
        )
    metrics = {
        "solver": solver,
        "n": data.n,
        "test": _risk_metrics(predictor, data),
    }
    artifacts = {}
    if out is not None:
        pred_path = out / "predictions.tsv"
        margins = predictor.at(data.rows, data.cols)
        labels = np.where(margins >= 0.0, 1, -1)
        with open(pred_path, "w", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t")
            writer.writerow(["row", "col", "label", "predicted", "score"])
            for i, j, y, yhat, s in zip(
                data.rows + 1, data.cols + 1, data.signed_labels,
                labels, margins,
            ):
                writer.writerow([i, j, int(y), int(yhat), f"{s:.12g}"])
        artifacts["predictions"] = str(pred_path)
    report = _report("evaluate", int(common["seed"]), time.monotonic() - t0,
                     {"common": common}, metrics, artifacts)
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- cv


def _fold_slices(n: int, folds: int, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [perm[f::folds] for f in range(folds)]


def _subset(data: Dataset, idx) -> Dataset:
    return Dataset(
        m1=data.m1, m2=data.m2,
        rows=data.rows[idx], cols=data.cols[idx],
        labels=data.labels[idx],
    )


def _cv_cell(data: Dataset, folds, common: dict, fit_cfg: dict,
             cell: dict, seed: int) -> float:
    cell_common = dict(common)
    cell_common.update(cell)
    mistakes = 0
    total = 0
    for f, hold in enumerate(folds):
        mask = np.ones(data.n, dtype=bool)
        mask[hold] = False
        train = _subset(data, np.nonzero(mask)[0])
        valid = _subset(data, hold)
        result, _, _, _ = _run_solver(cell_common, fit_cfg, train, seed)
        predictor = _mean_predictor(common["solver"], result.state)
        mistakes += zero_one_risk(predictor, valid) * valid.n
        total += valid.n
    return float(mistakes / total)


def cmd_cv(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    fit_cfg = cfg.get("fit", {})
    cv_cfg = cfg.get("cv", {})
    out = _out_dir(args)
    seed = int(common["seed"])
    data = load_dataset(args.data)
    folds_n = int(cv_cfg.get("folds", _CV_FOLDS))
    if folds_n > data.n:
        raise ConfigError(f"cannot make {folds_n} folds from {data.n} observations")
    folds = _fold_slices(data.n, folds_n, seed)
    beta_grid = [float(b) for b in cv_cfg.get("beta_grid", _CV_BETA_GRID)]
    alpha_grid = [float(a) for a in cv_cfg.get("alpha_grid", [common["alpha"]])]
    k_grid = [int(k) for k in cv_cfg.get("k_grid", [common["k"]])]
    if common["solver"] == "hinge":
        lam_grid = cv_cfg.get("lambda_grid")
        if lam_grid is None:
            lam_grid = [m * data.n for m in _CV_LAMBDA_MULTIPLES]
        lam_grid = [float(l) for l in lam_grid]
    else:
        lam_grid = [None]
    cells = [
        {"lambda": lam, "beta": beta, "alpha": alpha, "k": k}
        for k in k_grid for alpha in alpha_grid
        for beta in beta_grid for lam in lam_grid
    ]

    def run_cell(cell):
        return _cv_cell(data, folds, common, fit_cfg, cell, seed)

    threads = int(common["threads"])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = list(pool.map(run_cell, cells))
    else:
        errors = [run_cell(c) for c in cells]

    # ties prefer larger beta then smaller lambda (stronger
    # regularisation); remaining ties go to smaller rank, larger alpha
    def rank_key(i):
        cell = cells[i]
        lam_key = 0.0 if cell["lambda"] is None else cell["lambda"]
        return (errors[i], -cell["beta"], lam_key, cell["k"], -cell["alpha"])

    best = min(range(len(cells)), key=rank_key)
    final_common = dict(common)
    final_common.update(cells[best])
    result, prior, lam, objective = _run_solver(final_common, fit_cfg, data, seed)
    predictor = _mean_predictor(common["solver"], result.state)
    metrics = {
        "solver": common["solver"],
        "folds": folds_n,
        "selected": dict(cells[best], cv_error=errors[best]),
        "cells": [dict(cell, cv_error=err) for cell, err in zip(cells, errors)],
        "refit": {
            "final_objective": float(result.trace[-1]),
            "iterations": int(result.iterations),
            "converged": bool(result.converged),
            "train": _risk_metrics(predictor, data),
        },
    }
    artifacts = {}
    if out is not None:
        cv_csv = out / "cv.csv"
        with open(cv_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["lambda", "beta", "alpha", "k", "cv_error", "selected"])
            for i, (cell, err) in enumerate(zip(cells, errors)):
                lam_ = cell["lambda"]
                writer.writerow([
                    "" if lam_ is None else f"{lam_:.12g}",
                    f"{cell['beta']:.12g}", f"{cell['alpha']:.12g}", cell["k"],
                    f"{err:.12g}", int(i == best),
                ])
        from .plots import cv_figure

        cv_png = out / "cv.png"
        rows = [
            {"lam": (cell["lambda"] if cell["lambda"] is not None else 0.0),
             "beta": cell["beta"], "cv_error": err}
            for cell, err in zip(cells, errors)
        ]
        cv_figure(rows, cv_png)
        model_path = out / "model.npz"
        save_model(model_path, common["solver"], result.state, prior, lam)
        artifacts = {"cv_csv": str(cv_csv), "cv_figure": str(cv_png),
                     "model": str(model_path)}
    report = _report("cv", seed, time.monotonic() - t0,
                     {"common": common, "fit": fit_cfg, "cv": cv_cfg},
                     metrics, artifacts)
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- sweep


def _sweep_point(sim: dict, common: dict, fit_cfg: dict, level: float,
                 rep: int, seed: int) -> dict:
    truth = _make_truth(sim, seed + 1000 * rep)
    n = sim["n"] if sim["n"] is not None else default_sample_size(sim["m1"], sim["m2"])
    noise = NoiseSpec(kind="switch", flip_prob=level) if level > 0 else NoiseSpec()
    data, _ = sample_observations(
        truth, noise, n=int(n), seed=seed + 1000 * rep + 1,
        with_replacement=bool(sim["with_replacement"]),
    )
    truth_signs = np.where(truth.matrix >= 0, 1.0, -1.0)
    errs = {}
    for solver in ("hinge", "logit"):
        solver_common = dict(common)
        solver_common["solver"] = solver
        result, _, _, _ = _run_solver(solver_common, fit_cfg, data, seed + rep)
        predictor = _mean_predictor(solver, result.state)
        errs[solver] = float(np.mean(
            np.where(predictor.full() >= 0, 1.0, -1.0) != truth_signs
        ))
    return errs


def cmd_sweep(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    fit_cfg = cfg.get("fit", {})
    sim = _sim_section(cfg)
    sweep_cfg = dict(_SWEEP_DEFAULTS)
    sweep_cfg.update(cfg.get("sweep", {}))
    out = _out_dir(args)
    seed = int(common["seed"])
    levels = [float(x) for x in sweep_cfg["levels"]]
    reps = int(sweep_cfg["seeds_per_level"])

    def run_level(level):
        points = [_sweep_point(sim, common, fit_cfg, level, rep, seed)
                  for rep in range(reps)]
        return {
            "hinge": float(np.mean([p["hinge"] for p in points])),
            "logit": float(np.mean([p["logit"] for p in points])),
        }

    threads = int(common["threads"])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_level, levels))
    else:
        results = [run_level(level) for level in levels]

    metrics = {
        "levels": levels,
        "seeds_per_level": reps,
        "hinge_error": [r["hinge"] for r in results],
        "logit_error": [r["logit"] for r in results],
    }
    artifacts = {}
    if out is not None:
        sweep_csv = out / "sweep.csv"
        with open(sweep_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["flip_prob", "hinge_error", "logit_error"])
            for level, r in zip(levels, results):
                writer.writerow([f"{level:.12g}", f"{r['hinge']:.12g}",
                                 f"{r['logit']:.12g}"])
        from .plots import sweep_figure

        sweep_png = out / "sweep.png"
        sweep_figure(levels,
                     {"hinge": metrics["hinge_error"],
                      "logit": metrics["logit_error"]},
                     sweep_png)
        artifacts = {"sweep_csv": str(sweep_csv), "sweep_figure": str(sweep_png)}
    report = _report("sweep", seed, time.monotonic() - t0,
                     {"common": common, "simulate": sim, "sweep": sweep_cfg},
                     metrics, artifacts)
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- bound


def cmd_bound(args) -> int:
    t0 = time.monotonic()
    cfg = load_config(args.config)
    common = _merged(cfg, args)
    out = _out_dir(args)
    solver, state, prior, lam = load_model(args.model)
    if solver != "hinge":
        raise ConfigError("the risk certificate is defined for hinge models only")
    data = load_dataset(args.data)
    if common["lambda"] is not None:
        lam = float(common["lambda"])
    if lam is None:
        raise ConfigError("no temperature stored in the model; pass --lambda")
    epsilon = float(common["epsilon"])
    report_obj = empirical_bound(
        state, data, prior, BoundConfig(epsilon=epsilon, lam=lam)
    )
    predictor = _mean_predictor(solver, state)
    metrics = {
        "epsilon": epsilon,
        "lambda": lam,
        "bound": report_obj.as_dict(),
        "train": _risk_metrics(predictor, data),
    }
    report = _report("bound", int(common["seed"]), time.monotonic() - t0,
                     {"common": common}, metrics, {})
    _emit(report, out)
    return 0


# ---------------------------------------------------------------- parser


def _add_common_flags(sub) -> None:
    sub.add_argument("--config", metavar="PATH", help="JSON config file")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--out", metavar="DIR", help="artifact output directory")
    sub.add_argument("--solver", choices=("hinge", "logit"))
    sub.add_argument("--prior", choices=("gamma", "inv-gamma"))
    sub.add_argument("--alpha", type=float, help="scale prior shape")
    sub.add_argument("--beta", type=float, help="scale prior rate/scale")
    sub.add_argument("--lambda", dest="lam", type=float,
                     help="pseudo-posterior temperature (default: n)")
    sub.add_argument("--k", type=int, help="variational rank")
    sub.add_argument("--threads", type=int, help="work pool size for cv/sweep")
    sub.add_argument("--epsilon", type=float,
                     help="risk certificate confidence level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitmc",
        description="1-bit matrix completion via variational pseudo-posteriors",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("simulate", help="generate a synthetic dataset")
    _add_common_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser("fit", help="fit a predictor to a dataset")
    p.add_argument("data", help="dataset file")
    _add_common_flags(p)
    p.set_defaults(func=cmd_fit)

    p = commands.add_parser("evaluate", help="score a fitted model on a dataset")
    p.add_argument("model", help="model archive from fit/cv")
    p.add_argument("data", help="dataset file")
    _add_common_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("cv", help="grid search by k-fold cross-validation")
    p.add_argument("data", help="dataset file")
    _add_common_flags(p)
    p.set_defaults(func=cmd_cv)

    p = commands.add_parser("sweep", help="error against switch-noise level")
    _add_common_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = commands.add_parser("bound", help="evaluate the empirical risk certificate")
    p.add_argument("model", help="model archive from fit/cv")
    p.add_argument("data", help="dataset file")
    _add_common_flags(p)
    p.set_defaults(func=cmd_bound)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
