"""Monte Carlo study of MNAR outcome missingness.

Design: ``Z2 ~ N(0, 1)``; the outcome ``Z1`` is either ``N(0.5 Z2, 1)`` or
Bernoulli with ``logit P(Z1 = 1) = 0.5 Z2``. ``Z1`` is observed with
probability ``expit(phi1 * Z1 + Z2)``, which leaves about half of it missing.
Each replicate imputes once under MAR and reuses those imputations for every
assumed ``phi1``.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import BINARY, CONTINUOUS, ColumnMeta, DataMatrix
from .errors import ConfigError, DataError, MnarStackError
from .estimators import (
    LINEAR,
    LOGISTIC,
    TargetAnalysisSpec,
    carpenter_pool,
    complete_case_fit,
    per_imputation_fits,
    weighted_fit,
)
from .mice import MiceConfig, run_mice
from .stacking import MnarWeightSpec, stack, weights_carpenter, weights_logistic
from .variance import METHODS as SE_METHODS
from .variance import VarianceRequest, estimate_variance

log = logging.getLogger(__name__)

METHODS = ("complete_case", "mar", "carpenter", "proposed")
FAMILIES = (LINEAR, LOGISTIC)
OUTCOME_COEF = 0.5
TRUTH = {"intercept": 0.0, "Z2": OUTCOME_COEF}
MAX_MASK_RETRIES = 100
Z_CRIT = 1.959963984540054

RESULT_COLUMNS = [
    "replicate", "method", "se_method", "assumed_phi1", "true_phi1",
    "n", "M", "family", "parameter", "estimate", "se", "covered",
]
GROUP_KEYS = ["family", "n", "M", "true_phi1", "method", "se_method", "assumed_phi1", "parameter"]


@dataclass
class SimulationConfig:
    n: int = 1000
    outcome_family: str = LINEAR
    true_phi1: float = 1.0
    assumed_phi1_grid: Sequence[float] = (0.0, 0.2, 0.5, 0.8, 1.0, 1.2)
    M: int = 50
    n_replicates: int = 200
    seed: int = 2021
    methods: Sequence[str] = METHODS
    se_methods: Sequence[str] = SE_METHODS
    n_bootstrap: int = 200
    n_iterations: int = 10
    fixed_sigma: Optional[float] = None

    def __post_init__(self):
        self.assumed_phi1_grid = tuple(float(x) for x in self.assumed_phi1_grid)
        self.methods = tuple(self.methods)
        self.se_methods = tuple(self.se_methods)
        if self.outcome_family not in FAMILIES:
            raise ConfigError(f"outcome_family must be one of {FAMILIES}")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if set(self.methods) - set(METHODS):
            raise ConfigError(f"unknown methods {sorted(set(self.methods) - set(METHODS))}")
        if set(self.se_methods) - set(SE_METHODS):
            raise ConfigError(f"unknown SE methods {sorted(set(self.se_methods) - set(SE_METHODS))}")
        needs_grid = {"carpenter", "proposed"} & set(self.methods)
        if needs_grid and not self.assumed_phi1_grid:
            raise ConfigError("assumed_phi1_grid must be nonempty for carpenter/proposed")
        if self.M < 2:
            raise ConfigError("M must be at least 2")


def generate_dataset(config: SimulationConfig, rng) -> DataMatrix:
    """Draw ``(Z1, Z2)`` for ``config.n`` subjects with no missingness."""
    z2 = rng.standard_normal(config.n)
    if config.outcome_family == LINEAR:
        z1 = OUTCOME_COEF * z2 + rng.standard_normal(config.n)
        kind = CONTINUOUS
    else:
        z1 = (rng.random(config.n) < expit(OUTCOME_COEF * z2)).astype(float)
        kind = BINARY
    values = np.column_stack([z1, z2])
    return DataMatrix(values, np.ones_like(values, dtype=bool), (ColumnMeta("Z1", kind), ColumnMeta("Z2")))


def impose_missingness(data: DataMatrix, true_phi1: float, rng, return_rejected=False):
    """Mask ``Z1`` with ``P(observed) = expit(phi1 * Z1 + Z2)``.

    Realizations where ``Z1`` is entirely observed or entirely missing are
    redrawn up to 100 times.
    """
    z1, z2 = data.values[:, 0], data.values[:, 1]
    p_obs = expit(true_phi1 * z1 + z2)
    for rejected in range(MAX_MASK_RETRIES + 1):
        r = rng.random(data.n) < p_obs
        if 0 < r.sum() < data.n:
            observed = np.array(data.observed)
            observed[:, 0] = r
            out = DataMatrix(data.values, observed, data.col_meta)
            return (out, rejected) if return_rejected else out
    raise DataError(f"missingness mask degenerate after {MAX_MASK_RETRIES} redraws")


@dataclass
class ReplicateResult:
    replicate: int
    rows: list = field(default_factory=list)
    rejected_masks: int = 0
    error: Optional[str] = None
    seconds: float = 0.0


def _rows_for(config, replicate, method, se_method, assumed, fit):
    rows = []
    se = fit.se if se_method != "none" else np.full(fit.theta.size, np.nan)
    for k, name in enumerate(fit.param_names):
        truth = TRUTH[name]
        est, s = float(fit.theta[k]), float(se[k])
        covered = abs(est - truth) <= Z_CRIT * s if np.isfinite(s) else np.nan
        rows.append(
            dict(
                replicate=replicate, method=method, se_method=se_method, assumed_phi1=assumed,
                true_phi1=config.true_phi1, n=config.n, M=config.M, family=config.outcome_family,
                parameter=name, estimate=est, se=s, covered=float(covered),
            )
        )
    return rows


def _stacked_rows(config, replicate, method, assumed, st, spec, boot_seed):
    fit = weighted_fit(st, spec, method_tag=method)
    if not config.se_methods:
        return _rows_for(config, replicate, method, "none", assumed, fit)
    rows = []
    for se_method in config.se_methods:
        req = VarianceRequest(se_method, config.n_bootstrap, boot_seed)
        rows += _rows_for(config, replicate, method, se_method, assumed, estimate_variance(st, spec, fit, req))
    return rows


def run_replicate(config: SimulationConfig, replicate_index: int) -> ReplicateResult:
    """Simulate, impute and analyze one dataset with every requested method.

    All randomness comes from a generator keyed by ``(seed, replicate_index)``.
    """
    start = time.perf_counter()
    rng = np.random.default_rng([int(config.seed), int(replicate_index)])
    full = generate_dataset(config, rng)
    data, rejected = impose_missingness(full, config.true_phi1, rng, return_rejected=True)
    mice_seed = int(rng.integers(2**31))
    boot_seed = int(rng.integers(2**31))
    out = ReplicateResult(replicate_index, rejected_masks=rejected)
    spec = TargetAnalysisSpec(config.outcome_family, 0, (1,))
    try:
        imputations = run_mice(
            data, MiceConfig(config.M, config.n_iterations, mice_seed, fixed_sigma=config.fixed_sigma)
        )
        st = stack(imputations)
        rows = []
        if "complete_case" in config.methods:
            rows += _rows_for(config, replicate_index, "complete_case", "model", np.nan, complete_case_fit(data, spec))
        if "mar" in config.methods:
            rows += _stacked_rows(config, replicate_index, "mar", 0.0, st, spec, boot_seed)
        if "carpenter" in config.methods:
            per = per_imputation_fits(st, spec)
            names = spec.param_names(data.names)
            for phi in config.assumed_phi1_grid:
                pooled = carpenter_pool(per, weights_carpenter(st, phi, 0), names)
                rows += _rows_for(config, replicate_index, "carpenter", "carpenter", phi, pooled)
        if "proposed" in config.methods:
            for phi in config.assumed_phi1_grid:
                weighted = weights_logistic(st, MnarWeightSpec(0, phi))
                rows += _stacked_rows(config, replicate_index, "proposed", phi, weighted, spec, boot_seed)
        out.rows = rows
    except MnarStackError as exc:
        out.error = f"replicate {replicate_index}: {type(exc).__name__}: {exc}"
        log.warning(out.error)
    out.seconds = time.perf_counter() - start
    return out


def _run_one(args):
    return run_replicate(*args)


@dataclass
class StudyResult:
    results: pd.DataFrame
    n_failed: int
    failures: list
    rejected_masks: int
    seconds: float


def run_study(config: SimulationConfig, workers: int = 1) -> StudyResult:
    """Run all replicates; output order and content do not depend on ``workers``."""
    start = time.perf_counter()
    tasks = [(config, r) for r in range(config.n_replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        reps = [_run_one(t) for t in tasks]
    rows = [row for rep in reps if rep.error is None for row in rep.rows]
    failures = [rep.error for rep in reps if rep.error is not None]
    if failures:
        log.warning("%d of %d replicates failed and were excluded", len(failures), len(reps))
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return StudyResult(
        results, len(failures), failures, sum(rep.rejected_masks for rep in reps), time.perf_counter() - start
    )


def summarize_study(results: pd.DataFrame) -> pd.DataFrame:
    """Per-cell Monte Carlo summaries of a long-format results table."""
    if results is None or len(results) == 0:
        raise ValueError("no successful replicates to summarize")
    df = results.copy()
    df["truth"] = df["parameter"].map(TRUTH)
    grouped = df.groupby(GROUP_KEYS, dropna=False, sort=True)
    summary = grouped.agg(
        truth=("truth", "first"),
        mean_estimate=("estimate", "mean"),
        emp_sd=("estimate", "std"),
        mean_se=("se", "mean"),
        coverage=("covered", "mean"),
        n_replicates=("replicate", "nunique"),
    ).reset_index()
    summary["bias"] = summary["mean_estimate"] - summary["truth"]
    with np.errstate(divide="ignore", invalid="ignore"):
        summary["rel_bias_pct"] = np.where(
            summary["truth"] != 0, 100.0 * summary["bias"] / summary["truth"], np.nan
        )
    cols = GROUP_KEYS + ["truth", "mean_estimate", "bias", "rel_bias_pct", "emp_sd", "mean_se", "coverage", "n_replicates"]
    return summary[cols]
