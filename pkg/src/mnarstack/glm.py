"""Weighted least squares and binomial GLM solvers.

Both solvers take data in *totals* form: a design ``X`` of shape ``(r, q)``,
per-row total weight ``t`` and per-row weighted response ``s``. For
ungrouped data ``t`` is the row weight and ``s = t * y``; rows that share a
design row may be merged by summing ``t`` and ``s``, which leaves the
weighted normal equations and the binomial log-likelihood unchanged.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, log_ndtr, ndtr

from .errors import ConvergenceError, RankDeficientError, SeparationError

COND_LIMIT = 1e12
ETA_LIMIT = 30.0


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.logaddexp(0.0, x)


def check_full_rank(A, what="design"):
    """Raise :class:`RankDeficientError` unless symmetric ``A`` is well conditioned."""
    eig = np.linalg.eigvalsh(A)
    top = eig[-1] if eig.size else 0.0
    if not np.all(np.isfinite(eig)) or top <= 0 or eig[0] <= top / COND_LIMIT:
        raise RankDeficientError(
            f"{what} is rank deficient (eigenvalues of the cross-product: min={eig[0]:.3g}, max={top:.3g})"
        )


def weighted_normal_equations(X, t, s):
    """Solve ``(X' T X) theta = X' s`` for the weighted least-squares fit.

    Returns
    -------
    theta : ndarray of shape (q,)
    xtwx : ndarray of shape (q, q)
        The weighted cross-product ``X' T X``.
    """
    xtwx = X.T @ (t[:, None] * X)
    check_full_rank(xtwx)
    theta = linalg.solve(xtwx, X.T @ s, assume_a="pos")
    return theta, xtwx


class Link:
    """Binomial link function ``g`` with ``P(success) = g^{-1}(eta)``."""

    name = "link"

    def inverse(self, eta):
        raise NotImplementedError

    def log_success(self, eta):
        raise NotImplementedError

    def log_failure(self, eta):
        raise NotImplementedError

    def log_odds_failure(self, eta):
        """``log[(1 - g^{-1}(eta)) / g^{-1}(eta)]``, computed stably."""
        return self.log_failure(eta) - self.log_success(eta)

    def eta_for(self, prob):
        raise NotImplementedError

    def loglik(self, eta, s, t):
        return float(np.sum(s * self.log_success(eta) + (t - s) * self.log_failure(eta)))

    def score_weights(self, eta):
        """``(dmu/deta) / (mu (1 - mu))``: multiplies the residual ``s - t mu``."""
        raise NotImplementedError

    def fisher_weights(self, eta):
        """``(dmu/deta)^2 / (mu (1 - mu))``: multiplies ``t`` in the information."""
        raise NotImplementedError


class LogitLink(Link):
    name = "logistic"

    def inverse(self, eta):
        return expit(eta)

    def log_success(self, eta):
        return -softplus(-eta)

    def log_failure(self, eta):
        return -softplus(eta)

    def log_odds_failure(self, eta):
        return -np.asarray(eta, dtype=float)

    def eta_for(self, prob):
        return np.log(prob) - np.log1p(-prob)

    def loglik(self, eta, s, t):
        return float(np.sum(s * eta - t * softplus(eta)))

    def score_weights(self, eta):
        return np.ones_like(eta)

    def fisher_weights(self, eta):
        mu = expit(eta)
        return mu * (1.0 - mu)


class ProbitLink(Link):
    name = "probit"

    def inverse(self, eta):
        return ndtr(eta)

    def log_success(self, eta):
        return log_ndtr(eta)

    def log_failure(self, eta):
        return log_ndtr(-eta)

    def eta_for(self, prob):
        from scipy.special import ndtri

        return ndtri(prob)

    def _log_density(self, eta):
        return -0.5 * eta**2 - 0.5 * np.log(2 * np.pi)

    def score_weights(self, eta):
        return np.exp(self._log_density(eta) - log_ndtr(eta) - log_ndtr(-eta))

    def fisher_weights(self, eta):
        return np.exp(2 * self._log_density(eta) - log_ndtr(eta) - log_ndtr(-eta))


LINKS = {"logistic": LogitLink(), "logit": LogitLink(), "probit": ProbitLink()}


def get_link(name) -> Link:
    if isinstance(name, Link):
        return name
    try:
        return LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; choose from {sorted(set(LINKS))}") from None


@dataclass
class BinomialFit:
    theta: np.ndarray
    info: np.ndarray
    loglik: float
    n_iter: int
    trace: list = field(default_factory=list)


def fit_binomial(
    X,
    s,
    t,
    offset=None,
    link="logistic",
    theta0=None,
    max_iter=50,
    score_tol=1e-8,
    step_tol=1e-10,
) -> BinomialFit:
    """Maximize the weighted binomial log-likelihood by Newton / Fisher scoring.

    Steps are halved whenever the log-likelihood decreases. Convergence is
    declared when ``max|score| < score_tol`` or when the relative parameter
    change drops below ``step_tol``.

    Raises
    ------
    SeparationError
        Single-class data, or a converged fit with diverging linear predictor.
    ConvergenceError
        No convergence within ``max_iter`` iterations; carries the trace.
    """
    link = get_link(link)
    X = np.asarray(X, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    off = np.zeros(X.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    pos = t > 0
    if np.all(s[pos] <= 0) or np.all(s[pos] >= t[pos]):
        raise SeparationError("binary outcome has a single class among positively weighted rows")
    check_full_rank(X.T @ (t[:, None] * X))
    theta = np.zeros(X.shape[1]) if theta0 is None else np.array(theta0, dtype=float)

    def evaluate(th):
        eta = X @ th + off
        ll = link.loglik(eta, s, t)
        mu = link.inverse(eta)
        score = X.T @ ((s - t * mu) * link.score_weights(eta))
        info = X.T @ ((t * link.fisher_weights(eta))[:, None] * X)
        return eta, ll, score, info

    eta, ll, score, info = evaluate(theta)
    trace = [(0, ll, float(np.max(np.abs(score))))]
    converged = trace[0][2] < score_tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            raise SeparationError("information matrix became singular", trace) from None
        new = theta + step
        new_eval = evaluate(new)
        halvings = 0
        while not (new_eval[1] >= ll - 1e-12 * abs(ll)) and halvings < 40:
            step = step / 2
            new = theta + step
            new_eval = evaluate(new)
            halvings += 1
        theta = new
        eta, ll, score, info = new_eval
        max_score = float(np.max(np.abs(score)))
        trace.append((it, ll, max_score))
        rel_change = np.max(np.abs(step)) / (1.0 + np.max(np.abs(theta)))
        converged = max_score < score_tol or rel_change < step_tol
    if not converged:
        raise ConvergenceError(f"binomial fit did not converge in {max_iter} iterations", trace)
    if np.any(np.abs(eta[pos]) > ETA_LIMIT) or not np.all(np.isfinite(theta)):
        raise SeparationError(
            f"fitted linear predictor reached |eta| > {ETA_LIMIT}; data appear separated", trace
        )
    check_full_rank(info, "binomial information")
    return BinomialFit(theta, info, ll, it, trace)
