"""Command-line interface: ``dope simulate | estimate | oracle-check``.

Every flag mirrors a key of a JSON config (``--treatment-col`` is
``treatment_col``).  Values are resolved as built-in defaults, then the
``--preset`` (simulate only), then ``--config``, then explicit flags.

Output schemas
--------------
RMSE table (``rmse.csv``)
    method, link, n, regression_mode, sqrt_n_rmse, clt_halfwidth, n_replicates
Coverage table (``coverage.csv``)
    method, interval_kind, coverage, median_length, n_replicates
Estimate report (``report.csv``)
    estimator, estimate, bs_se, bs_ci_lo, bs_ci_hi, asym_se

CSV files start with a ``# config=<json>`` line and JSON files carry a
``config`` key holding the resolved config.  Execution settings that cannot
change results (``threads``, ``out_dir``, ``format``) are kept out of it and
recorded in ``manifest.json`` together with the seed, the config hash and
wall-clock timings.  Any of these files may be passed back as ``--config``.

Exit codes: 0 success, 1 failed oracle suite, 2 configuration error,
3 data error.  Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .data import ContrastSpec, IngestionOptions, load_csv, standardize
from .errors import ConfigError, DataError, DopeError
from .estimators import ClipRange
from .inference import bootstrap, bootstrap_interval
from .oracle.suites import SUITES, run_suites
from .pipeline import ALL_METHODS, MethodSettings, compute_methods, validate_methods
from .regressors.network import TrainConfig
from .simulation import (
    COVERAGE_BETA,
    LINKS,
    PAPER_RMSE_GRID,
    PAPER_RMSE_N,
    RmseGrid,
    SimConfig,
    run_coverage_experiment,
    run_rmse_experiment,
)

EXECUTION_KEYS = ("threads", "out_dir", "format")
EXIT_OK, EXIT_SUITE, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

RMSE_COLUMNS = ("method", "link", "n", "regression_mode", "sqrt_n_rmse", "clt_halfwidth", "n_replicates")
COVERAGE_COLUMNS = ("method", "interval_kind", "coverage", "median_length", "n_replicates")
REPORT_COLUMNS = ("estimator", "estimate", "bs_se", "bs_ci_lo", "bs_ci_hi", "asym_se")
ORACLE_COLUMNS = ("suite", "trials", "max_discrepancy", "tolerance", "passed")

COMMON_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": None, "format": "csv"}

SIMULATE_DEFAULTS = {
    "preset": "none",
    "experiment": "rmse",
    "ns": [900],
    "links": ["lin"],
    "methods": ["naive", "reg-ols", "aipw-ols", "dope-ols"],
    "modes": ["stratified"],
    "N": 100,
    "d": 12,
    "truth_draws": 1_000_000,
    "beta": None,
    "B": 200,
    "level": 0.95,
    "iterations": 1200,
    "lr": 1e-3,
    "clip": [0.01, 0.99],
}

PRESETS = {
    "none": {},
    "paper-rmse": {
        "experiment": "rmse",
        "ns": list(PAPER_RMSE_GRID.ns),
        "links": list(PAPER_RMSE_GRID.links),
        "methods": list(PAPER_RMSE_GRID.methods),
        "modes": list(PAPER_RMSE_GRID.modes),
        "N": PAPER_RMSE_N,
    },
    "coverage": {
        "experiment": "coverage",
        "ns": [2700],
        "links": ["cbrt"],
        "methods": ["reg-nn", "aipw-nn", "dope-idx", "dope-bcl"],
        "modes": ["joint"],
        "N": 50,
        "B": 200,
        "beta": list(COVERAGE_BETA),
    },
}

ESTIMATE_DEFAULTS = {
    "data": None,
    "treatment_col": None,
    "outcome_col": None,
    "methods": ["naive", "reg-ols", "aipw-ols", "dope-ols"],
    "bootstrap": 1000,
    "ci": "percentile",
    "level": 0.95,
    "clip": [0.01, 0.99],
    "impute": "mean",
    "treated": None,
    "control": None,
    "regression_mode": "stratified",
    "iterations": 1200,
    "lr": 1e-3,
    "loss": "mse",
    "standardize": True,
}

ORACLE_DEFAULTS = {"suite": "all", "trials": 100}


# --------------------------------------------------------------------------- values


def _split(value) -> list:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"expected a list or comma-separated string, got {value!r}")


def _int(value) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"expected an integer, got {value!r}")
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {value!r}") from None
    if not f.is_integer():
        raise ConfigError(f"expected an integer, got {value!r}")
    return int(f)


def _float(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}") from None


def _choice(*options):
    def conv(value):
        if value not in options:
            raise ConfigError(f"expected one of {list(options)}, got {value!r}")
        return value
    return conv


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise ConfigError(f"expected true or false, got {value!r}")


def _optional(conv):
    return lambda value: None if value is None else conv(value)


def _int_list(value) -> list:
    return [_int(v) for v in _split(value)]


def _float_list(value) -> list:
    return [_float(v) for v in _split(value)]


def _str_list(value) -> list:
    return [str(v) for v in _split(value)]


def _clip(value) -> list:
    lo_hi = _float_list(value)
    if len(lo_hi) != 2:
        raise ConfigError("clip needs two values lo,hi")
    ClipRange(*lo_hi)
    return lo_hi


def _optional_str(value):
    return None if value is None else str(value)


CONVERTERS: Dict[str, Callable] = {
    "seed": _int,
    "threads": _int,
    "out_dir": _optional_str,
    "format": _choice("csv", "json"),
    "preset": _choice(*PRESETS),
    "experiment": _choice("rmse", "coverage"),
    "ns": _int_list,
    "links": _str_list,
    "methods": _str_list,
    "modes": _str_list,
    "N": _int,
    "d": _int,
    "truth_draws": _int,
    "beta": _optional(_float_list),
    "B": _int,
    "level": _float,
    "iterations": _int,
    "lr": _float,
    "clip": _clip,
    "data": _optional_str,
    "treatment_col": _optional_str,
    "outcome_col": _optional_str,
    "bootstrap": _int,
    "ci": _choice("normal", "percentile"),
    "impute": _choice("mean", "drop50"),
    "treated": _optional_str,
    "control": _optional_str,
    "regression_mode": _choice("stratified", "joint"),
    "loss": _choice("mse", "bce"),
    "standardize": _bool,
    "suite": _choice(*SUITES, "all"),
    "trials": _int,
}


def read_config_file(path) -> dict:
    """Config dict from a JSON config, a JSON output or manifest (their
    ``config`` key), or a CSV output (its ``# config=`` line)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    first = text.split("\n", 1)[0]
    try:
        if first.startswith("# config="):
            return json.loads(first[len("# config="):])
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {str(path)!r} is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        return data["config"]
    return data


def resolve_config(command: str, flags: dict) -> dict:
    """Merge defaults, preset, config file and explicit flags, then check
    and normalise every value."""
    flags = dict(flags)
    path = flags.pop("config", None)
    from_file = read_config_file(path) if path else {}
    defaults = {**COMMON_DEFAULTS, **{"simulate": SIMULATE_DEFAULTS, "estimate": ESTIMATE_DEFAULTS,
                                      "oracle-check": ORACLE_DEFAULTS}[command]}
    unknown = sorted(set(from_file) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    cfg = dict(defaults)
    if command == "simulate":
        preset = CONVERTERS["preset"](flags.get("preset", from_file.get("preset", "none")))
        cfg.update(PRESETS[preset])
    cfg.update(from_file)
    cfg.update(flags)
    return {k: CONVERTERS[k](v) for k, v in cfg.items()}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Git blob hash of the canonical JSON form of ``cfg``."""
    body = canonical_json(cfg).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def split_config(cfg: dict):
    """``(result-determining config, execution settings)``."""
    return ({k: v for k, v in cfg.items() if k not in EXECUTION_KEYS},
            {k: cfg[k] for k in EXECUTION_KEYS if k in cfg})


# --------------------------------------------------------------------------- tables


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    return value


def render_csv(columns, rows: List[dict], config: dict) -> str:
    buf = io.StringIO()
    buf.write("# config=" + canonical_json(config) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def render_json(rows: List[dict], config: dict, extra: Optional[dict] = None) -> str:
    doc = {"config": config, **(extra or {}),
           "rows": [{k: _jsonable(v) for k, v in row.items()} for row in rows]}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write(out_dir: Optional[str], name: str, text: str) -> Optional[str]:
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / name, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return name


def _manifest(command: str, config: dict, execution: dict, timings: dict, outputs: list, extra=None) -> str:
    doc = {
        "command": command,
        "seed": config.get("seed"),
        "config_hash": config_hash(config),
        "config": config,
        "execution": execution,
        "timings": timings,
        "outputs": [o for o in outputs if o],
        "version": __version__,
        **(extra or {}),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _emit(cfg: dict, stem: str, columns, rows, config, extra=None) -> tuple:
    """Write ``stem.csv`` and ``stem.json`` and print the requested format."""
    csv_text = render_csv(columns, rows, config)
    json_text = render_json(rows, config, extra)
    sys.stdout.write(csv_text if cfg["format"] == "csv" else json_text)
    return (_write(cfg["out_dir"], stem + ".csv", csv_text), _write(cfg["out_dir"], stem + ".json", json_text))


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# --------------------------------------------------------------------------- commands


def cmd_simulate(cfg: dict) -> int:
    config, execution = split_config(cfg)
    validate_methods(cfg["methods"])
    for link in cfg["links"]:
        if link not in LINKS:
            raise ConfigError(f"unknown link {link!r}")
    for mode in cfg["modes"]:
        if mode not in ("stratified", "joint"):
            raise ConfigError(f"unknown regression mode {mode!r}")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    network = TrainConfig(learning_rate=cfg["lr"], iterations=cfg["iterations"])
    clip = ClipRange(*cfg["clip"])
    beta = None if cfg["beta"] is None else tuple(cfg["beta"])
    t0 = time.perf_counter()
    timings: Dict[str, float] = {}

    if cfg["experiment"] == "rmse":
        grid = RmseGrid(tuple(cfg["ns"]), tuple(cfg["links"]), tuple(cfg["methods"]), tuple(cfg["modes"]))
        sim = SimConfig(n=max(30, min(cfg["ns"])), d=cfg["d"], N=cfg["N"], seed=cfg["seed"],
                        ground_truth_draws=cfg["truth_draws"], beta=beta)
        last = [t0]

        def progress(n, link):
            now = time.perf_counter()
            timings[f"n={n},link={link}"] = now - last[0]
            last[0] = now
            _progress(f"done n={n} link={link}")

        rows, _ = run_rmse_experiment(grid, sim, network, clip, threads=cfg["threads"], progress=progress)
        dict_rows = [{"method": r.method, "link": r.link, "n": r.n, "regression_mode": r.regression_mode,
                      "sqrt_n_rmse": r.sqrt_n_rmse, "clt_halfwidth": r.clt_halfwidth,
                      "n_replicates": r.n_replicates, "flagged": r.flagged} for r in rows]
        flagged = [f"{r['method']}/{r['regression_mode']}/n={r['n']}/{r['link']}" for r in dict_rows if r["flagged"]]
        outputs = _emit(cfg, "rmse", RMSE_COLUMNS, dict_rows, config)
        extra = {"flagged_cells": flagged}
    else:
        if len(cfg["ns"]) != 1 or len(cfg["links"]) != 1 or len(cfg["modes"]) != 1:
            raise ConfigError("the coverage experiment takes a single n, link and regression mode")
        sim = SimConfig(n=cfg["ns"][0], d=cfg["d"], link=cfg["links"][0], N=cfg["N"], seed=cfg["seed"],
                        ground_truth_draws=cfg["truth_draws"], beta=beta)
        rows, reps, truth, truth_se = run_coverage_experiment(
            sim, B=cfg["B"], level=cfg["level"], methods=cfg["methods"], network=network,
            mode=cfg["modes"][0], clip=clip, threads=cfg["threads"],
            progress=lambda i, N: _progress(f"replicate {i}/{N}"))
        dict_rows = [{"method": r.method, "interval_kind": r.interval_kind, "coverage": r.coverage,
                      "median_length": r.median_length, "n_replicates": r.n_replicates} for r in rows]
        truth_info = {"truth": truth, "truth_se": truth_se,
                      "bootstrap_failures": int(sum(rep.bootstrap_failures for rep in reps))}
        outputs = _emit(cfg, "coverage", COVERAGE_COLUMNS, dict_rows, config, truth_info)
        extra = truth_info
    timings["total_seconds"] = time.perf_counter() - t0
    _write(cfg["out_dir"], "manifest.json", _manifest("simulate", config, execution, timings, list(outputs), extra))
    return EXIT_OK


def _target(table, treated: Optional[str], control: Optional[str]) -> ContrastSpec:
    labels = list(table.labels)
    if treated is None and control is None:
        if "1" in labels and "0" in labels:
            treated, control = "1", "0"
        elif len(labels) == 2:
            control, treated = labels
        else:
            raise ConfigError("more than two treatment levels: pass --treated and --control")
    elif treated is None or control is None:
        raise ConfigError("--treated and --control must be given together")
    for label in (treated, control):
        if label not in labels:
            raise ConfigError(f"treatment level {label!r} not in the data; levels are {labels}")
    if treated == control:
        raise ConfigError("--treated and --control must differ")
    return ContrastSpec.difference(labels.index(treated), labels.index(control))


def estimate_report(cfg: dict) -> List[dict]:
    """Report rows for the resolved ``estimate`` config, unsorted."""
    for key in ("data", "treatment_col", "outcome_col"):
        if cfg[key] is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")
    methods = validate_methods(cfg["methods"])
    if cfg["bootstrap"] < 0 or cfg["bootstrap"] == 1:
        raise ConfigError("--bootstrap must be 0 or at least 2")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    policy = "mean_impute" if cfg["impute"] == "mean" else "drop_then_impute"
    table = load_csv(cfg["data"], IngestionOptions(cfg["treatment_col"], cfg["outcome_col"], policy, 0.5))
    if cfg["standardize"]:
        table = standardize(table)
    target = _target(table, cfg["treated"], cfg["control"])
    network = TrainConfig(learning_rate=cfg["lr"], iterations=cfg["iterations"], loss=cfg["loss"])
    settings = MethodSettings.for_mode(cfg["regression_mode"], network, ClipRange(*cfg["clip"]))
    seed = cfg["seed"]
    point = compute_methods(table, methods, target, settings, seed)
    rows = [{"estimator": m, "estimate": point[m].value, "bs_se": None, "bs_ci_lo": None, "bs_ci_hi": None,
             "asym_se": point[m].se} for m in methods]
    if cfg["bootstrap"] > 0:
        def closure(resampled, child_seed):
            res = compute_methods(resampled, methods, target, settings, child_seed)
            return np.array([res[m].value for m in methods])

        boot = bootstrap(table, closure, cfg["bootstrap"], seed, n_jobs=cfg["threads"])
        kind = "bootstrap_" + cfg["ci"]
        for k, row in enumerate(rows):
            iv = bootstrap_interval(row["estimate"], boot, cfg["level"], kind, component=k)
            row.update(bs_se=float(boot.se[k]), bs_ci_lo=iv.lo, bs_ci_hi=iv.hi)
    return rows


def sort_report(rows: List[dict]) -> List[dict]:
    """Increasing bootstrap SE; without a bootstrap the method order is kept."""
    if any(r["bs_se"] is None for r in rows):
        return list(rows)
    return sorted(rows, key=lambda r: r["bs_se"])


def cmd_estimate(cfg: dict) -> int:
    config, execution = split_config(cfg)
    t0 = time.perf_counter()
    rows = sort_report(estimate_report(cfg))
    outputs = _emit(cfg, "report", REPORT_COLUMNS, rows, config)
    timings = {"total_seconds": time.perf_counter() - t0}
    _write(cfg["out_dir"], "manifest.json", _manifest("estimate", config, execution, timings, list(outputs)))
    return EXIT_OK


def cmd_oracle_check(cfg: dict) -> int:
    config, execution = split_config(cfg)
    t0 = time.perf_counter()
    results = run_suites(cfg["suite"], cfg["trials"], cfg["seed"])
    passed = all(r.passed for r in results)
    doc = {"config": config, "passed": passed, "suites": [r.to_dict() for r in results]}
    text = json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n"
    if cfg["format"] == "json":
        sys.stdout.write(text)
    else:
        sys.stdout.write(render_csv(ORACLE_COLUMNS, [r.to_dict() for r in results], config))
    outputs = [_write(cfg["out_dir"], "oracle_report.json", text)]
    timings = {"total_seconds": time.perf_counter() - t0, **{r.suite: r.seconds for r in results}}
    _write(cfg["out_dir"], "manifest.json", _manifest("oracle-check", config, execution, timings, outputs))
    return EXIT_OK if passed else EXIT_SUITE


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "oracle-check": cmd_oracle_check}


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dope", description="Outcome-adapted adjustment estimators and their checks.")
    parser.add_argument("--version", action="version", version=f"dope {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config, or an output file carrying an embedded config")
        p.add_argument("--seed", help="master seed (default 0)")
        p.add_argument("--threads", help="worker processes (default 1)")
        p.add_argument("--out-dir", dest="out_dir", help="directory for tables and manifest")
        p.add_argument("--format", choices=("csv", "json"), help="stdout format (default csv)")

    sim = sub.add_parser("simulate", argument_default=argparse.SUPPRESS,
                         help="RMSE or coverage experiments on the simulated design")
    common(sim)
    sim.add_argument("--preset", choices=tuple(PRESETS), help="paper-rmse or coverage grid")
    sim.add_argument("--experiment", choices=("rmse", "coverage"))
    sim.add_argument("--ns", help="comma-separated sample sizes")
    sim.add_argument("--links", help=f"comma-separated subset of {sorted(LINKS)}")
    sim.add_argument("--methods", help=f"comma-separated subset of {list(ALL_METHODS)}")
    sim.add_argument("--modes", help="comma-separated regression modes: stratified, joint")
    sim.add_argument("--N", dest="N", help="replicates per cell")
    sim.add_argument("--d", dest="d", help="covariate dimension")
    sim.add_argument("--truth-draws", dest="truth_draws", help="Monte Carlo draws for the true mean")
    sim.add_argument("--beta", help="fixed coefficient vector, comma-separated")
    sim.add_argument("--B", dest="B", help="bootstrap resamples (coverage experiment)")
    sim.add_argument("--level", help="interval level")
    sim.add_argument("--iterations", help="ADAM iterations for the networks")
    sim.add_argument("--lr", help="ADAM learning rate")
    sim.add_argument("--clip", help="propensity clip range lo,hi")

    est = sub.add_parser("estimate", argument_default=argparse.SUPPRESS,
                         help="estimate a treatment contrast from a CSV file")
    common(est)
    est.add_argument("--data", help="input CSV")
    est.add_argument("--treatment-col", dest="treatment_col")
    est.add_argument("--outcome-col", dest="outcome_col")
    est.add_argument("--methods", help=f"comma-separated subset of {list(ALL_METHODS)}")
    est.add_argument("--bootstrap", help="bootstrap resamples, 0 to skip (default 1000)")
    est.add_argument("--ci", choices=("normal", "percentile"))
    est.add_argument("--level", help="interval level (default 0.95)")
    est.add_argument("--clip", help="propensity clip range lo,hi (default 0.01,0.99)")
    est.add_argument("--impute", choices=("mean", "drop50"))
    est.add_argument("--treated", help="treated level (default 1, or the second level seen)")
    est.add_argument("--control", help="control level (default 0, or the first level seen)")
    est.add_argument("--regression-mode", dest="regression_mode", choices=("stratified", "joint"))
    est.add_argument("--iterations")
    est.add_argument("--lr")
    est.add_argument("--loss", choices=("mse", "bce"))
    est.add_argument("--standardize", dest="standardize", action="store_const", const=True)
    est.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)

    orc = sub.add_parser("oracle-check", argument_default=argparse.SUPPRESS,
                         help="exact identity and closed-form verification suites")
    common(orc)
    orc.add_argument("--suite", choices=(*SUITES, "all"))
    orc.add_argument("--trials", help="generated cases per suite (default 100)")
    return parser


def _error_exit(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command", None)
        if command is None:
            raise ConfigError("a command is required: simulate, estimate or oracle-check")
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        return _error_exit(exc, EXIT_CONFIG)
    except (DataError, OSError) as exc:
        return _error_exit(exc, EXIT_DATA)
    except DopeError as exc:
        return _error_exit(exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
