"""Standard errors for the weighted stacked analysis.

Three estimators are provided:

* ``louis``: observed information assembled from the weighted complete-data
  information minus the weighted within-subject spread of scores;
* ``bootstrap``: ``V_stack + (1 + M) V_between`` with ``V_between`` the
  covariance of refits over imputation indices resampled with replacement;
* ``jackknife``: the same combination with a leave-one-imputation-out
  ``V_between``.

``V_between`` here estimates the variance of the stacked estimator over
imputation sets, which is roughly the between-imputation variance divided
by ``M``; ``(1 + M) V_between`` is then the usual ``(1 + 1/M) B``.
"""

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import MnarStackError, NotPositiveDefiniteError
from .estimators import FitResult, fit_design, score_info_contributions, stack_design

METHODS = ("louis", "bootstrap", "jackknife")


@dataclass
class VarianceRequest:
    method: str = "louis"
    n_bootstrap: int = 200
    seed: Optional[int] = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown variance method {self.method!r}; choose from {METHODS}")
        if self.method == "bootstrap" and self.n_bootstrap < 2:
            raise ValueError("bootstrap needs at least 2 replicates")


class VarianceError(MnarStackError):
    """A refit inside a resampling variance estimator failed."""


def symmetrize(A, tol=1e-10):
    A = np.asarray(A, dtype=float)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    assert asym <= tol * scale, f"matrix asymmetry {asym:.3g} exceeds tolerance"
    return (A + A.T) / 2


def louis_information(stack, spec, theta_hat, dispersion=None, weights=None):
    """Return ``(complete_info, score_spread)``; ``I_obs`` is their difference.

    ``complete_info = sum_i sum_m omega_im J_im`` and
    ``score_spread = sum_i sum_m omega_im (U_im - Ubar_i)(U_im - Ubar_i)'``
    with ``Ubar_i = sum_k omega_ik U_ik``.
    """
    w = stack.weights if weights is None else weights
    U, J = score_info_contributions(stack, spec, theta_hat, dispersion)
    complete_info = np.einsum("mn,mnqr->qr", w, J)
    # Centering on the first imputation keeps subjects with identical rows at exactly zero.
    D = U - U[0]
    C = D - np.einsum("mn,mnq->nq", w, D)[None]
    score_spread = np.einsum("mn,mnq,mnr->qr", w, C, C)
    return symmetrize(complete_info), symmetrize(score_spread)


def louis_cov(stack, spec, theta_hat, dispersion=None) -> np.ndarray:
    """Inverse of the Louis observed information at ``theta_hat``.

    Raises
    ------
    NotPositiveDefiniteError
        If the assembled information is not positive definite, which can
        happen at small sample sizes.
    """
    complete_info, score_spread = louis_information(stack, spec, theta_hat, dispersion)
    info = complete_info - score_spread
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(
            f"Louis observed information is not positive definite (smallest eigenvalue {eig[0]:.4g})", eig[0]
        )
    return symmetrize(linalg.inv(info), tol=1e-8)


def reweight(weights, counts):
    """Weights for a stack in which imputation ``m`` appears ``counts[m]`` times.

    Duplicated rows are merged into one row of multiplied weight, then
    each subject is renormalized to total weight one.
    """
    w = np.asarray(counts, dtype=float)[:, None] * weights
    totals = w.sum(axis=0)
    if np.any(totals <= 0):
        raise VarianceError("a subject has zero total weight after resampling imputations")
    return w / totals


def _covariance(thetas) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    return symmetrize(np.atleast_2d(np.cov(thetas, rowvar=False, ddof=1)))


def bootstrap_between(stack, spec, request: VarianceRequest = None, theta0=None) -> np.ndarray:
    """Covariance of refits over imputation indices drawn with replacement."""
    request = request or VarianceRequest("bootstrap")
    design = stack_design(stack, spec)
    M = stack.m_imputations
    rng = np.random.default_rng(request.seed)
    thetas = []
    for b in range(request.n_bootstrap):
        counts = np.bincount(rng.integers(0, M, size=M), minlength=M)
        try:
            theta, _, _ = fit_design(design, reweight(stack.weights, counts), theta0)
        except MnarStackError as exc:
            raise VarianceError(f"bootstrap replicate {b + 1} failed: {exc}") from exc
        thetas.append(theta)
    return _covariance(thetas)


def jackknife_between(stack, spec, theta0=None) -> np.ndarray:
    """``(M-1)/M * sum_m (theta_(m) - theta_bar)^2`` over leave-one-imputation-out refits."""
    design = stack_design(stack, spec)
    M = stack.m_imputations
    thetas = []
    for m in range(M):
        counts = np.ones(M)
        counts[m] = 0.0
        try:
            theta, _, _ = fit_design(design, reweight(stack.weights, counts), theta0)
        except MnarStackError as exc:
            raise VarianceError(f"jackknife fold excluding imputation {m + 1} failed: {exc}") from exc
        thetas.append(theta)
    thetas = np.asarray(thetas)
    dev = thetas - thetas.mean(axis=0)
    return symmetrize((M - 1) / M * dev.T @ dev)


def combine_variance(v_stack, v_between, M: int) -> np.ndarray:
    """``V_stack + (1 + M) V_between``."""
    v_stack = np.atleast_2d(np.asarray(v_stack, dtype=float))
    v_between = np.atleast_2d(np.asarray(v_between, dtype=float))
    if v_stack.shape != v_between.shape:
        raise ValueError(f"shape mismatch: {v_stack.shape} vs {v_between.shape}")
    if M < 2:
        warnings.warn("combine_variance called with M < 2; the between-imputation term is degenerate")
    return symmetrize(v_stack + (1 + M) * v_between)


def estimate_variance(stack, spec, fit: FitResult, request: VarianceRequest) -> FitResult:
    """Return a copy of ``fit`` with ``v_total`` from the requested method."""
    if request.method == "louis":
        cov = louis_cov(stack, spec, fit.theta, fit.dispersion)
        return replace(fit, v_between=None, v_total=cov, se_method="louis")
    if request.method == "bootstrap":
        vb = bootstrap_between(stack, spec, request, theta0=fit.theta)
    else:
        vb = jackknife_between(stack, spec, theta0=fit.theta)
    total = combine_variance(fit.v_stack, vb, stack.m_imputations)
    return replace(fit, v_between=vb, v_total=total, se_method=request.method)
