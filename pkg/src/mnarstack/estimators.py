"""Weighted target analyses on a stack, plus baseline comparators.

The stacked fits maximize ``sum_{i,m} omega_im * loglik(Z_i.m; theta)``.
Since every subject's weights sum to one, the total weight equals the
number of subjects ``n``; the linear-model dispersion therefore uses
``n - q`` degrees of freedom rather than ``M n - q``.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from .data import DataMatrix
from .errors import DataError, RankDeficientError
from .glm import fit_binomial, softplus, weighted_normal_equations

MEAN = "mean"
LINEAR = "linear"
LOGISTIC = "logistic"
KINDS = (MEAN, LINEAR, LOGISTIC)


@dataclass(frozen=True)
class TargetAnalysisSpec:
    kind: str
    outcome_col: int
    covariate_cols: tuple = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(int(c) for c in self.covariate_cols))
        if self.kind not in KINDS:
            raise ValueError(f"unknown analysis kind {self.kind!r}; choose from {KINDS}")
        if self.outcome_col in self.covariate_cols:
            raise ValueError("the outcome cannot also be a covariate")
        if self.kind == MEAN and (self.covariate_cols or not self.intercept):
            raise ValueError("a mean analysis takes no covariates")
        if not self.intercept and not self.covariate_cols:
            raise ValueError("model has no parameters")

    def param_names(self, names) -> list:
        if self.kind == MEAN:
            return ["mean"]
        return (["intercept"] if self.intercept else []) + [names[c] for c in self.covariate_cols]

    @property
    def family(self) -> str:
        return LOGISTIC if self.kind == LOGISTIC else LINEAR


def mean_spec(col: int) -> TargetAnalysisSpec:
    return TargetAnalysisSpec(MEAN, col)


@dataclass
class FitResult:
    """Point estimate with its covariance pieces.

    ``v_stack`` is the model-based covariance of the (weighted) fit.
    ``v_between`` and ``v_total`` are filled in by the variance module;
    ``se_method`` records which estimator produced ``v_total``.
    """

    theta: np.ndarray
    v_stack: np.ndarray
    param_names: list
    method_tag: str = "proposed"
    dispersion: Optional[float] = None
    v_between: Optional[np.ndarray] = None
    v_total: Optional[np.ndarray] = None
    se_method: Optional[str] = None

    @property
    def cov(self) -> np.ndarray:
        return self.v_total if self.v_total is not None else self.v_stack

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass
class StackDesign:
    """Design arrays for a target analysis on ``M`` stacked datasets.

    ``X`` has shape ``(n, q)`` when no covariate was imputed (the design is
    then identical in every imputation) and ``(M, n, q)`` otherwise.
    """

    X: np.ndarray
    y: np.ndarray
    shared: bool
    spec: TargetAnalysisSpec
    n_subjects: int
    param_names: list = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.X.shape[-1]

    def totals(self, weights):
        """Collapse weighted rows to ``(X, t, s)`` totals form for the solvers."""
        if self.shared:
            return self.X, weights.sum(axis=0), (weights * self.y).sum(axis=0)
        return self.X.reshape(-1, self.q), weights.ravel(), (weights * self.y).ravel()

    def linear_predictor(self, theta):
        return self.X @ theta

    def row_X(self):
        if self.shared:
            return np.broadcast_to(self.X, self.y.shape + (self.q,))
        return self.X


def build_design(values, observed, spec: TargetAnalysisSpec, names=None) -> StackDesign:
    """Design for ``spec`` on completed values of shape ``(M, n, p)``."""
    values = np.asarray(values, dtype=float)
    M, n, _ = values.shape
    cov_cols = list(spec.covariate_cols)
    shared = bool(np.all(observed[:, cov_cols])) if cov_cols else True
    base = values[0] if shared else values
    parts = []
    if spec.intercept:
        parts.append(np.ones(base.shape[:-1] + (1,)))
    if cov_cols:
        parts.append(base[..., cov_cols])
    X = np.concatenate(parts, axis=-1)
    y = values[:, :, spec.outcome_col]
    if spec.kind == LOGISTIC and not np.all((y == 0) | (y == 1)):
        raise DataError("logistic outcome must be coded 0/1")
    names = names if names is not None else [f"Z{j + 1}" for j in range(values.shape[2])]
    return StackDesign(X, y, shared, spec, n, spec.param_names(names))


def stack_design(stack, spec: TargetAnalysisSpec) -> StackDesign:
    return build_design(stack.values, stack.observed, spec, stack.source.names)


def fit_design(design: StackDesign, weights, theta0=None):
    """Fit the target analysis with row ``weights`` of shape ``(M, n)``.

    Returns ``(theta, v_stack, dispersion)``; ``dispersion`` is ``None`` for
    logistic fits.
    """
    X, t, s = design.totals(np.asarray(weights, dtype=float))
    q = design.q
    if design.spec.family == LOGISTIC:
        fit = fit_binomial(X, s, t, theta0=theta0)
        v = linalg.inv(fit.info)
        return fit.theta, (v + v.T) / 2, None
    dof = design.n_subjects - q
    if dof <= 0 and design.spec.kind == MEAN:
        # A single subject still has a weighted mean; its spread is undefined.
        theta, _ = weighted_normal_equations(X, t, s)
        return theta, np.full((1, 1), np.nan), float("nan")
    if dof <= 0:
        raise RankDeficientError(f"need more than {q} subjects for a {q}-parameter fit, have {design.n_subjects}")
    theta, xtwx = weighted_normal_equations(X, t, s)
    resid = design.y - design.linear_predictor(theta)
    sigma2 = float(np.sum(weights * resid**2)) / dof
    v = sigma2 * linalg.inv(xtwx)
    return theta, (v + v.T) / 2, sigma2


def weighted_fit(stack, spec: TargetAnalysisSpec, weights=None, method_tag="proposed", theta0=None) -> FitResult:
    """Weighted fit of ``spec`` to the stack (weights default to the stack's own)."""
    design = stack_design(stack, spec)
    w = stack.weights if weights is None else weights
    theta, v, sigma2 = fit_design(design, w, theta0)
    return FitResult(theta, v, design.param_names, method_tag, sigma2)


def weighted_mean(stack, col: int, method_tag="proposed") -> FitResult:
    """``sum omega z / sum omega`` with variance ``sigma_hat^2 / n``."""
    if stack.n == 0:
        raise DataError("empty stack")
    return weighted_fit(stack, mean_spec(col), method_tag=method_tag)


def weighted_linear_fit(stack, spec: TargetAnalysisSpec, method_tag="proposed") -> FitResult:
    if spec.kind != LINEAR:
        raise ValueError("weighted_linear_fit needs a linear analysis spec")
    return weighted_fit(stack, spec, method_tag=method_tag)


def weighted_logistic_fit(stack, spec: TargetAnalysisSpec, method_tag="proposed") -> FitResult:
    if spec.kind != LOGISTIC:
        raise ValueError("weighted_logistic_fit needs a logistic analysis spec")
    return weighted_fit(stack, spec, method_tag=method_tag)


def complete_case_fit(data: DataMatrix, spec: TargetAnalysisSpec) -> FitResult:
    """Unweighted fit on rows complete in the outcome and all covariates."""
    cols = [spec.outcome_col, *spec.covariate_cols]
    rows = data.observed[:, cols].all(axis=1)
    n_cc = int(rows.sum())
    q = int(spec.intercept) + len(spec.covariate_cols)
    if n_cc < max(q, 1) or n_cc == 0:
        raise DataError(f"only {n_cc} complete rows for a {q}-parameter complete-case fit")
    values = data.values[rows][None, :, :]
    design = build_design(values, data.observed[rows], spec, data.names)
    theta, v, sigma2 = fit_design(design, np.ones((1, n_cc)))
    return FitResult(theta, v, design.param_names, "complete_case", sigma2)


def per_imputation_fits(stack, spec: TargetAnalysisSpec) -> List[tuple]:
    """Unweighted fit of ``spec`` to each completed dataset: ``[(theta_m, cov_m), ...]``."""
    out = []
    for m in range(stack.m_imputations):
        design = build_design(stack.values[m : m + 1], stack.observed, spec, stack.source.names)
        theta, v, _ = fit_design(design, np.ones((1, stack.n)))
        out.append((theta, v))
    return out


def carpenter_pool(per_imputation, alpha, param_names=None) -> FitResult:
    """Combine per-imputation fits with dataset weights ``alpha``.

    ``theta = sum alpha_m theta_m`` and, per coordinate,
    ``Var = sum alpha_m Var_m + (1 + 1/M) sum alpha_m (theta_m - theta)^2``.
    ``v_stack`` holds the first term, ``v_between`` the unscaled weighted
    spread, and ``v_total`` the combination; all are diagonal.
    """
    alpha = np.asarray(alpha, dtype=float)
    M = len(per_imputation)
    if alpha.size != M:
        raise ValueError(f"{alpha.size} weights for {M} fits")
    thetas = np.array([np.atleast_1d(th) for th, _ in per_imputation], dtype=float)
    variances = np.array(
        [np.diag(v) if np.ndim(v) == 2 else np.atleast_1d(v) for _, v in per_imputation], dtype=float
    )
    theta = alpha @ thetas
    within = alpha @ variances
    spread = alpha @ (thetas - theta) ** 2
    total = within + (1.0 + 1.0 / M) * spread
    names = param_names or [f"theta{k}" for k in range(theta.size)]
    return FitResult(
        theta, np.diag(within), names, "carpenter", v_between=np.diag(spread), v_total=np.diag(total), se_method="carpenter"
    )


def _dispersion(design: StackDesign, weights, theta):
    resid = design.y - design.linear_predictor(theta)
    return float(np.sum(weights * resid**2)) / (design.n_subjects - design.q)


def row_loglik(stack, spec: TargetAnalysisSpec, theta, dispersion=None) -> np.ndarray:
    """Complete-data log-likelihood of every stacked row, shape ``(M, n)``."""
    design = stack_design(stack, spec)
    eta = design.linear_predictor(np.asarray(theta, dtype=float))
    if spec.family == LOGISTIC:
        return design.y * eta - softplus(eta)
    if dispersion is None:
        dispersion = _dispersion(design, stack.weights, theta)
    return -0.5 * (design.y - eta) ** 2 / dispersion - 0.5 * np.log(2 * np.pi * dispersion)


def score_info_contributions(stack, spec: TargetAnalysisSpec, theta, dispersion=None, design=None):
    """Per-row complete-data score ``U`` and information ``J``.

    Returns arrays of shape ``(M, n, q)`` and ``(M, n, q, q)``. For linear
    models the dispersion is held fixed; by default it is the weighted
    residual estimate at ``theta``.
    """
    design = stack_design(stack, spec) if design is None else design
    theta = np.asarray(theta, dtype=float)
    X = design.row_X()
    eta = design.linear_predictor(theta)
    if spec.family == LOGISTIC:
        mu = expit(eta)
        resid = design.y - mu
        curv = np.broadcast_to(mu * (1 - mu), design.y.shape)
    else:
        if dispersion is None:
            dispersion = _dispersion(design, stack.weights, theta)
        resid = (design.y - eta) / dispersion
        curv = np.full(design.y.shape, 1.0 / dispersion)
    U = X * resid[..., None]
    J = curv[..., None, None] * (X[..., :, None] * X[..., None, :])
    return U, J
