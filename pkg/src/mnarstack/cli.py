"""Command-line entry points: impute, weight, analyze, simulate."""

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import config_hash, describe_keys, read_config_file, resolve
from .data import load_csv, roles_from_names, validate_roles
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    MnarStackError,
    NotPositiveDefiniteError,
    RankDeficientError,
    WeightError,
)
from .estimators import TargetAnalysisSpec, weighted_fit
from .mice import MiceConfig, read_imputations, run_mice, write_imputations
from .stacking import MnarWeightSpec, stack, weights_general_link, weights_logistic, weights_multivar, write_stack
from .variance import VarianceRequest, estimate_variance

log = logging.getLogger("mnarstack")

Z_CRIT = 1.959963984540054
EXIT_CODES = [
    (ConfigError, 2, "config"),
    (DataError, 2, "parse"),
    (RankDeficientError, 3, "rank"),
    (ConvergenceError, 4, "convergence"),
    (NotPositiveDefiniteError, 5, "positive-definiteness"),
    (WeightError, 6, "weights"),
    (MnarStackError, 1, "error"),
]
FLAG_KEYS = {
    "input": "input",
    "out_dir": "out_dir",
    "seed": "seed",
    "m": "m",
    "phi1": "phi1",
    "phi1_grid": "phi1_grid",
    "se": "se",
    "boot_reps": "boot_reps",
    "workers": "workers",
    "imputations": "imputations",
}


def _single_m(cfg):
    if len(cfg["m"]) != 1:
        raise ConfigError("m must be a single integer for this subcommand")
    return cfg["m"][0]


def _load(cfg):
    return load_csv(cfg["input"], na_token=cfg["na_token"], binary=cfg["binary"])


def _roles(cfg, data, allow_complete_target=False):
    roles = roles_from_names(data, cfg["target"], cfg["mar"], cfg["observed"])
    t = roles.target_mnar
    if allow_complete_target and data.observed[:, t].all():
        log.warning("target column %r has no missing cells; weights are uniform", data.names[t])
        return roles
    return validate_roles(data, roles)


def _imputations(cfg, data):
    if cfg.get("imputations"):
        return read_imputations(cfg["imputations"], data)
    mice_cfg = MiceConfig(_single_m(cfg), cfg["iterations"], cfg["seed"], fixed_sigma=cfg["fixed_sigma"])
    return run_mice(data, mice_cfg)


def _out_dir(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _weighted(st, data, cfg, phi1, roles):
    if cfg.get("mnar_vars"):
        targets = [(data.column_index(c), phi) for c, phi in cfg["mnar_vars"]]
        return weights_multivar(st, targets)
    spec = MnarWeightSpec(roles.target_mnar, phi1, link=cfg["link"], w_cols=roles.fully_observed)
    if cfg["link"] in ("logistic", "logit"):
        return weights_logistic(st, spec)
    return weights_general_link(st, spec, data)


def cmd_impute(cfg):
    data = _load(cfg)
    imps = _imputations(cfg, data)
    path = _out_dir(cfg) / "imputations.csv"
    write_imputations(imps, path, cfg["na_token"])
    log.info("wrote %s (%d imputations)", path, len(imps))
    return 0


def cmd_weight(cfg):
    data = _load(cfg)
    roles = None
    if cfg["target"] is not None:
        roles = _roles(cfg, data)
    st = stack(_imputations(cfg, data))
    weighted = _weighted(st, data, cfg, cfg["phi1"], roles)
    path = _out_dir(cfg) / "stack.csv"
    write_stack(weighted, path, cfg["na_token"])
    log.info("wrote %s", path)
    return 0


def _analyze_block(args):
    st, data, cfg, roles, spec, phi1 = args
    weighted = _weighted(st, data, cfg, phi1, roles)
    fit = weighted_fit(weighted, spec)
    rows = []
    for se_method in cfg["se"]:
        res = estimate_variance(weighted, spec, fit, VarianceRequest(se_method, cfg["boot_reps"], cfg["seed"]))
        for k, name in enumerate(res.param_names):
            est, se = float(res.theta[k]), float(res.se[k])
            rows.append(["proposed", phi1, name, est, se_method, se, est - Z_CRIT * se, est + Z_CRIT * se])
    return rows


def cmd_analyze(cfg):
    data = _load(cfg)
    roles = _roles(cfg, data, allow_complete_target=True)
    spec = TargetAnalysisSpec(
        cfg["analysis"],
        data.column_index(cfg["outcome"]),
        tuple(data.column_index(c) for c in cfg["covariates"]),
        cfg["intercept"],
    )
    for se_method in cfg["se"]:
        VarianceRequest(se_method, cfg["boot_reps"])
    st = stack(_imputations(cfg, data))
    if cfg.get("mnar_vars"):
        grid = [float("nan")]
    else:
        grid = cfg["phi1_grid"] if cfg["phi1_grid"] is not None else [cfg["phi1"]]
    tasks = [(st, data, cfg, roles, spec, phi) for phi in grid]
    if cfg["workers"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            blocks = list(pool.map(_analyze_block, tasks))
    else:
        blocks = [_analyze_block(t) for t in tasks]
    path = _out_dir(cfg) / "results.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "phi1", "parameter", "estimate", "se_method", "se", "ci_low", "ci_high"])
        for block in blocks:
            for row in block:
                writer.writerow([row[0], "NA" if np.isnan(row[1]) else repr(row[1]), row[2]] + [
                    repr(x) if isinstance(x, float) else x for x in row[3:]
                ])
    log.info("wrote %s (%d phi1 value(s))", path, len(grid))
    return 0


def cmd_simulate(cfg):
    from .simulation import SimulationConfig, run_study, summarize_study

    start = time.perf_counter()
    frames, n_failed, rejected = [], 0, 0
    grid = cfg["phi1_grid"] if cfg["phi1_grid"] is not None else [0.0, 0.2, 0.5, 0.8, 1.0, 1.2]
    for family in cfg["family"]:
        for n in cfg["n"]:
            for true_phi1 in cfg["true_phi1"]:
                for M in cfg["m"]:
                    sim = SimulationConfig(
                        n=n, outcome_family=family, true_phi1=true_phi1, assumed_phi1_grid=grid, M=M,
                        n_replicates=cfg["replicates"], seed=cfg["seed"], methods=cfg["methods"],
                        se_methods=cfg["se"], n_bootstrap=cfg["boot_reps"], n_iterations=cfg["iterations"],
                        fixed_sigma=cfg["fixed_sigma"],
                    )
                    log.info("study: family=%s n=%d true_phi1=%g M=%d", family, n, true_phi1, M)
                    res = run_study(sim, workers=cfg["workers"])
                    frames.append(res.results)
                    n_failed += res.n_failed
                    rejected += res.rejected_masks
                    for msg in res.failures:
                        log.warning(msg)
    results = pd.concat(frames, ignore_index=True)
    out = _out_dir(cfg)
    results.to_csv(out / "results.csv", index=False, na_rep="NA", float_format="%.17g")
    summary = summarize_study(results)
    summary.to_csv(out / "summary.csv", index=False, na_rep="NA", float_format="%.10g")
    if cfg["plots"]:
        from .plots import plot_coverage_vs_m, plot_estimates_vs_phi

        plot_estimates_vs_phi(summary, out / "estimates_vs_phi1.svg")
        plot_coverage_vs_m(summary, out / "coverage_vs_m.svg")
    with pd.option_context("display.width", 200, "display.max_columns", 20, "display.max_rows", 500):
        print(summary.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    log.info(
        "failed replicates: %d; degenerate masks redrawn: %d; wall time %.1fs",
        n_failed, rejected, time.perf_counter() - start,
    )
    return 0


COMMANDS = {"impute": cmd_impute, "weight": cmd_weight, "analyze": cmd_analyze, "simulate": cmd_simulate}
DESCRIPTIONS = {
    "impute": "Impute missing values under MAR by chained equations; writes imputations.csv.",
    "weight": "Stack imputations and attach not-at-random weights; writes stack.csv.",
    "analyze": "Weighted stacked analysis across a phi1 grid with standard errors; writes results.csv.",
    "simulate": "Run the Monte Carlo study; writes results.csv, summary.csv and SVG plots.",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mnarstack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mnarstack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(
            name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name],
            epilog=describe_keys(name), formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="set any config key")
        p.add_argument("--input")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--seed")
        p.add_argument("--m")
        p.add_argument("--phi1")
        p.add_argument("--phi1-grid", dest="phi1_grid")
        p.add_argument("--se", help="louis, bootstrap, jackknife (comma list)")
        p.add_argument("--boot-reps", dest="boot_reps")
        p.add_argument("--workers")
        p.add_argument("--imputations")
        p.add_argument("--no-plots", dest="no_plots", action="store_true")
    return parser


def load_run_config(args):
    entries = read_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().replace("-", "_")] = value.strip()
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    if args.no_plots:
        overrides["plots"] = "false"
    return resolve(args.command, entries, overrides)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        log.info(
            "mnarstack %s %s seed=%s config_hash=%s", __version__, args.command, cfg.get("seed"), config_hash(cfg)
        )
        return COMMANDS[args.command](cfg)
    except MnarStackError as exc:
        for cls, code, label in EXIT_CODES:
            if isinstance(exc, cls):
                print(f"mnarstack: {label} error: {exc}", file=sys.stderr)
                return code
    except ValueError as exc:
        print(f"mnarstack: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
