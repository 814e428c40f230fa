"""Chained-equations multiple imputation under MAR with proper parameter draws.

Each incomplete column is imputed from a regression on the other columns.
Before every imputation pass the regression parameters are drawn from their
approximate posterior, fitted only to rows where that column is observed:

* normal-linear: ``sigma^2 ~ sigma_hat^2 (n_obs - q) / chi2(n_obs - q)``, then
  ``beta ~ N(beta_hat, sigma^2 (X'X)^{-1})``;
* logistic: ``beta ~ N(beta_mle, I(beta_mle)^{-1})``.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from .data import BINARY, CONTINUOUS, DataMatrix
from .errors import ConfigError, ConvergenceError, DataError, RankDeficientError
from .glm import COND_LIMIT, fit_binomial

NORMAL = "normal-linear"
LOGISTIC = "logistic"
_FAMILY_FOR_KIND = {CONTINUOUS: NORMAL, BINARY: LOGISTIC}


@dataclass(frozen=True)
class ConditionalModelSpec:
    target_col: int
    predictor_cols: tuple
    family: str = NORMAL

    def __post_init__(self):
        object.__setattr__(self, "predictor_cols", tuple(int(c) for c in self.predictor_cols))
        if self.family not in (NORMAL, LOGISTIC):
            raise ConfigError(f"unknown conditional family {self.family!r}")
        if self.target_col in self.predictor_cols:
            raise ConfigError(f"column {self.target_col} cannot predict itself")


@dataclass
class MiceConfig:
    """Settings for :func:`run_mice`.

    ``models`` defaults to one model per incomplete column, using every other
    column as a predictor and the family implied by the column kind.
    ``fixed_sigma``, when set, replaces the dispersion draw for normal-linear
    models by this fixed residual standard deviation.
    """

    m_imputations: int
    n_iterations: int = 10
    seed: int = 0
    models: Optional[List[ConditionalModelSpec]] = None
    fixed_sigma: Optional[float] = None


@dataclass(frozen=True, eq=False)
class CompletedDataset:
    values: np.ndarray
    imputation_index: int
    source: DataMatrix = field(repr=False)

    @property
    def source_mask(self) -> np.ndarray:
        return self.source.observed


def default_models(data: DataMatrix) -> list:
    return [
        ConditionalModelSpec(j, tuple(k for k in range(data.p) if k != j), _FAMILY_FOR_KIND[data.kind(j)])
        for j in data.missing_columns()
    ]


def _check_models(data: DataMatrix, models) -> list:
    by_col = {}
    for spec in models:
        if spec.target_col in by_col:
            raise ConfigError(f"column {spec.target_col} has more than one conditional model")
        if spec.family != _FAMILY_FOR_KIND[data.kind(spec.target_col)]:
            raise ConfigError(
                f"column {data.names[spec.target_col]!r} is {data.kind(spec.target_col)} "
                f"but its model family is {spec.family}"
            )
        by_col[spec.target_col] = spec
    missing = [j for j in data.missing_columns() if j not in by_col]
    if missing:
        raise ConfigError(f"no conditional model for incomplete column(s) {[data.names[j] for j in missing]}")
    return [by_col[j] for j in sorted(by_col)]


def _with_intercept(X):
    return np.column_stack([np.ones(X.shape[0]), X])


@dataclass
class LinearConditionalFit:
    beta_hat: np.ndarray
    r_factor: np.ndarray  # upper-triangular R of X = QR; (X'X)^{-1} = R^{-1} R^{-T}
    sigma2_hat: float
    dof: int


def fit_linear_conditional(y, X) -> LinearConditionalFit:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n_obs, q = X.shape
    if n_obs <= q:
        raise RankDeficientError(f"need more than {q} observed rows to fit a {q}-parameter model, have {n_obs}")
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= d.max() / np.sqrt(COND_LIMIT):
        raise RankDeficientError("imputation design matrix is rank deficient")
    beta_hat = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta_hat
    dof = n_obs - q
    return LinearConditionalFit(beta_hat, R, float(resid @ resid) / dof, dof)


def draw_from_linear_fit(fit: LinearConditionalFit, rng, fixed_sigma=None):
    if fixed_sigma is not None:
        sigma = float(fixed_sigma)
    elif fit.sigma2_hat == 0.0:
        sigma = 0.0
    else:
        sigma = float(np.sqrt(fit.sigma2_hat * fit.dof / rng.chisquare(fit.dof)))
    z = rng.standard_normal(fit.beta_hat.size)
    beta = fit.beta_hat + sigma * linalg.solve_triangular(fit.r_factor, z)
    return beta, sigma


def draw_linear_params(y, X, rng, fixed_sigma=None):
    """Draw ``(beta, sigma)`` for a normal linear model fitted to ``(y, X)``.

    ``X`` must already include an intercept column and contain only rows
    where the target is observed.
    """
    return draw_from_linear_fit(fit_linear_conditional(y, X), rng, fixed_sigma)


@dataclass
class LogisticConditionalFit:
    beta_hat: np.ndarray
    cov_chol: np.ndarray  # lower Cholesky factor of the inverse information


def fit_logistic_conditional(y, X) -> LogisticConditionalFit:
    y = np.asarray(y, dtype=float)
    fit = fit_binomial(X, y, np.ones_like(y))
    cov = linalg.inv(fit.info)
    return LogisticConditionalFit(fit.theta, np.linalg.cholesky((cov + cov.T) / 2))


def draw_from_logistic_fit(fit: LogisticConditionalFit, rng):
    return fit.beta_hat + fit.cov_chol @ rng.standard_normal(fit.beta_hat.size)


def draw_logistic_params(y, X, rng):
    """Draw logistic coefficients from the normal approximation at the MLE."""
    return draw_from_logistic_fit(fit_logistic_conditional(y, X), rng)


def fit_conditional(work, spec: ConditionalModelSpec, mask):
    """Fit ``spec`` to the rows of ``work`` where its target is observed."""
    obs = mask[:, spec.target_col]
    X = _with_intercept(work[obs][:, list(spec.predictor_cols)])
    y = work[obs, spec.target_col]
    if spec.family == NORMAL:
        return fit_linear_conditional(y, X)
    return fit_logistic_conditional(y, X)


def impute_variable_pass(work, spec: ConditionalModelSpec, mask, rng, fit=None, fixed_sigma=None):
    """Redraw every missing cell of ``spec.target_col`` in a copy of ``work``.

    Parameters are drawn once per call, using only rows with the target
    observed. A precomputed ``fit`` from :func:`fit_conditional` may be
    passed when the fitting data cannot have changed since it was made.
    """
    out = np.array(work, dtype=float)
    j = spec.target_col
    miss = ~mask[:, j]
    if not miss.any():
        return out
    if fit is None:
        fit = fit_conditional(out, spec, mask)
    X_mis = _with_intercept(out[miss][:, list(spec.predictor_cols)])
    if spec.family == NORMAL:
        beta, sigma = draw_from_linear_fit(fit, rng, fixed_sigma)
        out[miss, j] = X_mis @ beta + sigma * rng.standard_normal(X_mis.shape[0])
    else:
        beta = draw_from_logistic_fit(fit, rng)
        out[miss, j] = (rng.random(X_mis.shape[0]) < expit(X_mis @ beta)).astype(float)
    return out


def _initial_fill(data: DataMatrix, rng):
    work = np.array(data.values)
    for j in data.missing_columns():
        obs = data.observed[:, j]
        pool = data.values[obs, j]
        if pool.size == 0:
            raise DataError(f"column {data.names[j]!r} has no observed values to initialize from")
        work[~obs, j] = rng.choice(pool, size=int((~obs).sum()), replace=True)
    return work


def run_mice(data: DataMatrix, config: MiceConfig) -> List[CompletedDataset]:
    """Produce ``M`` completed datasets by chained equations.

    Chain ``m`` uses its own generator seeded by ``(seed, m)``, initializes
    missing cells by resampling observed values of the same column, and then
    runs ``n_iterations`` passes over the models in ascending column order.
    """
    if config.m_imputations < 1:
        raise ConfigError("m_imputations must be a positive integer")
    if config.n_iterations < 1:
        raise ConfigError("n_iterations must be a positive integer")
    models = _check_models(data, config.models if config.models is not None else default_models(data))
    mask = data.observed
    if not models:
        return [CompletedDataset(data.values, m, data) for m in range(1, config.m_imputations + 1)]

    # A model whose predictors are all complete sees the same fitting data in every pass.
    complete = mask.all(axis=0)
    static_fits = {}
    for spec in models:
        if all(complete[c] for c in spec.predictor_cols):
            static_fits[spec.target_col] = fit_conditional(data.values, spec, mask)

    out = []
    for m in range(1, config.m_imputations + 1):
        rng = np.random.default_rng([int(config.seed), m])
        work = _initial_fill(data, rng)
        for _ in range(config.n_iterations):
            for spec in models:
                work = impute_variable_pass(
                    work, spec, mask, rng, fit=static_fits.get(spec.target_col), fixed_sigma=config.fixed_sigma
                )
                if not np.all(np.isfinite(work[:, spec.target_col])):
                    raise ConvergenceError(
                        f"non-finite imputed values in column {data.names[spec.target_col]!r} (chain {m})"
                    )
        work[mask] = data.values[mask]
        work.flags.writeable = False
        out.append(CompletedDataset(work, m, data))
    return out


def write_imputations(imputations, path, na_token="NA"):
    """Write completed datasets stacked, with a leading ``imputation`` column."""
    from .data import format_value

    source = imputations[0].source
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["imputation"] + source.names) + "\n")
        for imp in imputations:
            for row in imp.values:
                fh.write(
                    ",".join([str(imp.imputation_index)] + [format_value(v, source.kind(j)) for j, v in enumerate(row)])
                    + "\n"
                )


def read_imputations(path, source: DataMatrix) -> List[CompletedDataset]:
    """Read a file written by :func:`write_imputations` against its source data."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "imputation" or header[1:] != source.names:
        raise DataError(f"{path}: header must be 'imputation' followed by {source.names}")
    by_m = {}
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            by_m.setdefault(int(row[0]), []).append([float(x) for x in row[1:]])
        except ValueError:
            raise DataError(f"{path}: row {k} contains a non-numeric value") from None
    out = []
    for m in sorted(by_m):
        vals = np.array(by_m[m])
        if vals.shape != source.values.shape:
            raise DataError(f"{path}: imputation {m} has shape {vals.shape}, expected {source.values.shape}")
        if not np.array_equal(vals[source.observed], source.values[source.observed]):
            raise DataError(f"{path}: imputation {m} disagrees with the source data on observed cells")
        vals.flags.writeable = False
        out.append(CompletedDataset(vals, m, source))
    return out
